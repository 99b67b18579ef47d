"""Command line front end.

Seven subcommands cover the full workflow: synthesize a domain pair
(``generate``), reshape its target into a benchmark (``bench``), adapt a
model (``train``), score a checkpoint (``eval``), run the component matrix
(``ablate``), verify gradients (``gradcheck``), and trace the
distribution-matching failure curve (``probe-lds``).

Exit codes: 0 on success, 1 on a validation problem (bad flags, malformed
config, inconsistent data), 2 when training aborts on a non-finite loss.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path
from typing import Dict, Optional, Sequence

import numpy as np

from .benchmarks import (
    BenchmarkSpec,
    benchmark_report,
    build_ilds,
    inject_two,
    load_pair,
    relabel_to_meta,
    resample_lds,
    write_benchmark,
)
from .datasets import (
    DomainDataset,
    GlyphDomainSpec,
    default_pair_specs,
    generate_blob_pair,
    generate_glyph_domain,
    generate_glyph_pair,
    load_dataset,
    outlier_pool,
    save_dataset,
)
from .gradcheck import run_gradient_suite, suite_text
from .nets import load_checkpoint
from .training import (
    ABLATION_ROWS,
    DEFAULT_SEEDS,
    NumericalAbort,
    TrainConfig,
    ablation_suite,
    ablation_table_text,
    evaluate,
    lds_failure_probe,
    save_run,
    train,
)


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors; remap to the validation code."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(self.prog + ": error: " + message)


def _load_json(path, what: str) -> Dict:
    p = Path(path)
    if not p.is_file():
        raise ValueError(f"{what} file not found: {p}")
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise ValueError(f"{what} file {p} is not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise ValueError(f"{what} file {p} must hold a JSON object")
    return data


def _echo(payload: Dict) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True))


# ---------------------------------------------------------------------------
# generate
# ---------------------------------------------------------------------------

def _glyph_spec(d: Dict, seed: Optional[int]) -> GlyphDomainSpec:
    d = dict(d)
    if seed is not None:
        d["seed"] = seed
    return GlyphDomainSpec.from_dict(d)


def _cmd_generate(args) -> int:
    spec = _load_json(args.spec, "spec")
    kind = spec.get("kind")
    out = Path(args.out)
    if kind == "glyph_pair":
        if "source" in spec or "target" in spec:
            if not ("source" in spec and "target" in spec):
                raise ValueError('glyph_pair spec needs both "source" and "target"')
            src_spec = _glyph_spec(spec["source"], args.seed)
            tgt_spec = _glyph_spec(
                spec["target"], None if args.seed is None else args.seed + 1)
        else:
            knobs = {k: spec[k] for k in
                     ("n_classes", "sub_styles", "samples_per_class") if k in spec}
            src_spec, tgt_spec = default_pair_specs(
                seed=spec.get("seed", 0) if args.seed is None else args.seed, **knobs)
        src, tgt = generate_glyph_pair(src_spec, tgt_spec)
    elif kind == "glyph":
        role = spec.pop("domain_role", "source")
        spec.pop("kind")
        ds = generate_glyph_domain(_glyph_spec(spec, args.seed), role)
        save_dataset(ds, out)
        _echo({"out": str(out), "kind": "glyph", "n_samples": ds.n_samples,
               "class_count": ds.class_count})
        return 0
    elif kind == "blob_pair":
        needed = ("k", "source_priors", "target_priors", "means", "spread", "n")
        missing = [k for k in needed if k not in spec]
        if missing:
            raise ValueError(f"blob_pair spec is missing {missing}")
        src, tgt = generate_blob_pair(
            int(spec["k"]), spec["source_priors"], spec["target_priors"],
            spec["means"], float(spec["spread"]), int(spec["n"]),
            spec.get("seed", 0) if args.seed is None else args.seed)
    else:
        raise ValueError(
            f'spec "kind" must be glyph_pair, glyph, or blob_pair, got {kind!r}')

    save_dataset(src, out / "source")
    save_dataset(tgt, out / "target")
    _echo({"out": str(out), "kind": kind,
           "source": {"n_samples": src.n_samples, "class_count": src.class_count},
           "target": {"n_samples": tgt.n_samples, "class_count": tgt.class_count}})
    return 0


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------

_BENCH_KINDS = {"lds": "LDS", "ilds": "ILDS", "two": "TwO"}


def _sublabel_meta_map(ds: DomainDataset) -> Dict[int, int]:
    """Each sublabel already carries exactly one label; read the map off."""
    if ds.sublabels is None:
        raise ValueError("ilds needs a dataset with sublabels")
    return {int(s): int(l) for s, l in zip(ds.sublabels, ds.labels)}


def _cmd_bench(args) -> int:
    src, tgt = load_pair(args.in_dir)
    kind = _BENCH_KINDS[args.kind]
    spec = BenchmarkSpec(kind=kind, imbalance_factor=args.imbalance_factor,
                         outlier_fraction=args.rho, seed=args.seed)
    if kind == "LDS":
        src2, tgt2 = src, resample_lds(tgt, spec)
    elif kind == "ILDS":
        spec = dataclasses.replace(spec, meta_class_map=_sublabel_meta_map(tgt))
        src2, tgt2 = relabel_to_meta(src, spec), build_ilds(tgt, spec)
    else:
        n_out = int(round(args.rho * tgt.n_samples / (1.0 - args.rho)))
        pool = outlier_pool("inverted_random", max(2 * n_out, 8), seed=args.seed)
        src2, tgt2 = src, inject_two(tgt, pool, spec)
    write_benchmark(args.out, src2, tgt2, spec)
    _echo(benchmark_report(spec, src2, tgt2))
    return 0


# ---------------------------------------------------------------------------
# train / eval
# ---------------------------------------------------------------------------

def _cmd_train(args) -> int:
    cfg = TrainConfig.from_dict(_load_json(args.config, "config"))
    src = load_dataset(args.src)
    tgt = load_dataset(args.tgt)
    params, metrics = train(cfg, src, tgt)
    save_run(args.out, cfg, params, metrics)
    print((Path(args.out) / "summary.json").read_text())
    return 0


def _cmd_eval(args) -> int:
    params, _ = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.data)
    rep = evaluate(params, ds)
    _echo({"accuracy": rep.accuracy, "n_evaluated": rep.n_evaluated,
           "per_class": rep.per_class, "confusion": rep.confusion.tolist()})
    return 0


# ---------------------------------------------------------------------------
# ablate
# ---------------------------------------------------------------------------

def _cmd_ablate(args) -> int:
    cfg = _load_json(args.config, "config")
    if "train" not in cfg or "benchmarks" not in cfg:
        raise ValueError('ablate config needs "train" and "benchmarks" entries')
    base = TrainConfig.from_dict(cfg["train"])
    benchmarks = [BenchmarkSpec.from_dict(b) for b in cfg["benchmarks"]]
    rows = [tuple(r) for r in cfg["rows"]] if "rows" in cfg else ABLATION_ROWS
    table = ablation_suite(
        base, benchmarks,
        samples_per_class=int(cfg.get("samples_per_class", 250)),
        data_seed=int(cfg.get("data_seed", 0)),
        seeds=tuple(cfg.get("seeds", DEFAULT_SEEDS)),
        rows=rows,
        progress=lambda msg: print(msg, file=sys.stderr))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    text = ablation_table_text(table)
    (out / "ablation.json").write_text(json.dumps(table, indent=2, sort_keys=True))
    (out / "ablation.txt").write_text(text + "\n")
    print(text)
    return 0


# ---------------------------------------------------------------------------
# gradcheck
# ---------------------------------------------------------------------------

def _cmd_gradcheck(args) -> int:
    results = run_gradient_suite(tol=args.tol, instances=args.instances,
                                 seed=args.seed)
    print(suite_text(results))
    return 0 if all(r.passed for r in results) else 1


# ---------------------------------------------------------------------------
# probe-lds
# ---------------------------------------------------------------------------

def _probe_text(result: Dict) -> str:
    lines = [f"label-shift ceiling (1 - TV): {result['ceiling']:.3f}",
             f"{'dm_weight':>10s} {'mmd':>9s} {'src_acc':>8s} "
             f"{'tgt_acc':>8s} {'tgt_acc_trans':>13s}"]
    for row in result["curve"]:
        lines.append(
            f"{row['dm_weight']:>10.2f} {row['mmd']:>9.5f} {row['source_acc']:>8.4f} "
            f"{row['target_acc']:>8.4f} {row['target_acc_transductive']:>13.4f}")
    return "\n".join(lines)


def _cmd_probe(args) -> int:
    kwargs: Dict = {}
    if args.config is not None:
        raw = _load_json(args.config, "config")
        for key in ("priors_src", "priors_tgt", "dm_weight_schedule", "means",
                    "hidden"):
            if key in raw:
                kwargs[key] = tuple(
                    tuple(v) if isinstance(v, list) else v for v in raw.pop(key))
        for key in ("n", "epochs", "batch", "seed_model", "seed_data",
                    "dm_ramp_steps"):
            if key in raw:
                kwargs[key] = int(raw.pop(key))
        for key in ("spread", "weight_decay", "lr"):
            if key in raw:
                kwargs[key] = float(raw.pop(key))
        if "optimizer" in raw:
            kwargs["optimizer"] = str(raw.pop("optimizer"))
        if raw:
            raise ValueError(f"unknown probe config keys: {sorted(raw)}")
    if args.seed is not None:
        kwargs["seed_model"] = args.seed
        kwargs["seed_data"] = args.seed
    kwargs.setdefault("priors_src", (0.5, 0.5))
    kwargs.setdefault("priors_tgt", (0.7, 0.3))
    result = lds_failure_probe(**kwargs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "probe.json").write_text(json.dumps(result, indent=2, sort_keys=True))
    text = _probe_text(result)
    (out / "probe.txt").write_text(text + "\n")
    print(text)
    return 0


# ---------------------------------------------------------------------------
# wiring
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pbmatch",
                     description="domain adaptation lab: generators, "
                                 "benchmarks, adaptation training, probes")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="synthesize a dataset or domain pair")
    p.add_argument("--spec", required=True, help="JSON recipe (see README)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None,
                   help="override the recipe's seed")
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("bench", help="reshape a pair into a shifted benchmark")
    p.add_argument("--kind", required=True, choices=sorted(_BENCH_KINDS))
    p.add_argument("--in", dest="in_dir", required=True,
                   help="directory holding source/ and target/")
    p.add_argument("--out", required=True)
    p.add_argument("--if", dest="imbalance_factor", type=float, default=1.0,
                   help="head/tail imbalance factor (lds, ilds)")
    p.add_argument("--rho", type=float, default=0.0,
                   help="outlier fraction of the final target (two)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("train", help="adapt a model on a source/target pair")
    p.add_argument("--config", required=True, help="TrainConfig as JSON")
    p.add_argument("--src", required=True)
    p.add_argument("--tgt", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ablate", help="run the component ablation matrix")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("gradcheck", help="verify gradients against central differences")
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("probe-lds",
                       help="trace feature matching vs target accuracy under label shift")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None,
                   help="sets both the model and data seeds")
    p.add_argument("--config", default=None,
                   help="optional JSON overriding probe parameters")
    p.set_defaults(func=_cmd_probe)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as e:
        if isinstance(e.code, str):
            print(e.code, file=sys.stderr)
            return 1
        return 0 if e.code is None else int(e.code)
    except NumericalAbort as e:
        print(f"pbmatch: numerical abort: {e}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as e:
        print(f"pbmatch: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
