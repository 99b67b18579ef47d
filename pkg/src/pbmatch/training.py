"""Training loops, evaluation, the component ablation matrix, and the
label-shift failure probe.

Methods fall into three groups:

- ``source_only``: supervised cross-entropy on the source batch.
- ``dm_mmd`` / ``dm_coral``: source cross-entropy plus a weighted feature
  distance between the domains' latent batches.
- ``instapbm`` and its single-component tags (``mim``, ``cpbm_ra``,
  ``cpbm_ni``, ``cpbm_all``, ``mupbm``, ``tpbm_rot``, ``tpbm_qdr``,
  ``tpbm_flip``, ``tpbm_all``): supervised cross-entropy plus the selected
  predictive-behavior terms on the unlabeled target stream.

Source and target batches are drawn in lockstep with equal sizes each step.
Target accuracy is reported on a held-out stratified 20% split; the
transductive number (accuracy on the adaptation stream itself) is logged
alongside. All randomness derives from (seed_model, seed_data), so repeated
runs are bit-identical.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .benchmarks import (
    BenchmarkSpec,
    build_ilds,
    inject_two,
    relabel_to_meta,
    resample_lds,
)
from .datasets import (
    DomainDataset,
    default_pair_specs,
    generate_blob_pair,
    generate_glyph_pair,
    outlier_pool,
)
from .losses import (
    LossConfig,
    MarginalTracker,
    coral_distance,
    cross_entropy,
    mmd_distance,
    total_objective,
)
from .losses import BatchBundle
from .nets import (
    ModelParams,
    OptimState,
    clone_params,
    features,
    forward,
    init_params,
    predict_logits,
    save_checkpoint,
    softmax_probs,
    step,
)
from .tensor import Tensor, add, backward, matmul, scale
from .transforms import (
    NI_KINDS,
    RA_KINDS,
    ST_TASKS,
    ImageBatch,
    apply_semantic_preserving,
    apply_semantic_transforming,
    sample_mixup_beta,
)

METHODS = (
    "source_only", "dm_mmd", "dm_coral", "instapbm",
    "mim", "cpbm_ra", "cpbm_ni", "cpbm_all", "mupbm",
    "tpbm_rot", "tpbm_qdr", "tpbm_flip", "tpbm_all",
)

# which behavior-matching terms each method activates
_METHOD_COMPONENTS: Dict[str, frozenset] = {
    "source_only": frozenset(),
    "dm_mmd": frozenset({"dm"}),
    "dm_coral": frozenset({"dm"}),
    "mim": frozenset({"mim"}),
    "cpbm_ra": frozenset({"cpbm"}),
    "cpbm_ni": frozenset({"cpbm"}),
    "cpbm_all": frozenset({"cpbm"}),
    "mupbm": frozenset({"mupbm"}),
    "tpbm_rot": frozenset({"tpbm"}),
    "tpbm_qdr": frozenset({"tpbm"}),
    "tpbm_flip": frozenset({"tpbm"}),
    "tpbm_all": frozenset({"tpbm"}),
    "instapbm": frozenset({"mim", "cpbm", "mupbm", "tpbm"}),
}

_CPBM_KIND_SETS: Dict[str, Tuple[str, ...]] = {
    "cpbm_ra": RA_KINDS,
    "cpbm_ni": NI_KINDS,
    "cpbm_all": RA_KINDS + NI_KINDS,
    "instapbm": RA_KINDS + NI_KINDS,
}

_TPBM_TASK_SETS: Dict[str, Tuple[str, ...]] = {
    "tpbm_rot": ("rotate90",),
    "tpbm_qdr": ("patch_location",),
    "tpbm_flip": ("vflip",),
    "tpbm_all": ST_TASKS,
    "instapbm": ST_TASKS,
}

ABLATION_ROWS: Tuple[Tuple[str, str], ...] = (
    ("Baseline", "source_only"),
    ("+MIM", "mim"),
    ("+CPBM_RA", "cpbm_ra"),
    ("+CPBM_NI", "cpbm_ni"),
    ("+CPBM_ALL", "cpbm_all"),
    ("+MuPBM", "mupbm"),
    ("+TPBM_ROT", "tpbm_rot"),
    ("+TPBM_QDR", "tpbm_qdr"),
    ("+TPBM_FLIP", "tpbm_flip"),
    ("+TPBM_ALL", "tpbm_all"),
    ("full", "instapbm"),
)

DEFAULT_SEEDS = (17, 29, 41)

_MASK = 0xFFFFFFFF


class NumericalAbort(ArithmeticError):
    """The objective produced a non-finite value; names the offending term."""

    def __init__(self, term: str, epoch: int, step_idx: int):
        self.term = term
        self.epoch = epoch
        self.step_idx = step_idx
        super().__init__(
            f"non-finite value in term {term!r} at epoch {epoch} step {step_idx}")


@dataclass
class TrainConfig:
    """Everything a run needs besides the datasets themselves."""

    method: str = "source_only"
    epochs: int = 200
    batch: int = 64
    optimizer: str = "adam"
    lr: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 1e-5
    loss: Optional[LossConfig] = None  # resolved per class count when None
    dm_weight: float = 1.0
    dm_ramp_steps: int = 10
    hidden: Tuple[int, ...] = (128, 64)
    seed_model: int = 17
    seed_data: int = 0
    eval_fraction: float = 0.2
    initial_marginal: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch < 2:
            raise ValueError(f"batch must be >= 2 (distances need pairs), got {self.batch}")
        if self.optimizer not in ("adam", "sgd_momentum"):
            raise ValueError(f"optimizer must be adam or sgd_momentum, got {self.optimizer!r}")
        if self.dm_weight < 0.0:
            raise ValueError(f"dm_weight must be >= 0, got {self.dm_weight}")
        if self.dm_ramp_steps < 0:
            raise ValueError(f"dm_ramp_steps must be >= 0, got {self.dm_ramp_steps}")
        if not (0.0 <= self.eval_fraction <= 0.5):
            raise ValueError(f"eval_fraction must lie in [0, 0.5], got {self.eval_fraction}")
        if not self.hidden or any(int(h) < 1 for h in self.hidden):
            raise ValueError(f"hidden sizes must be positive, got {self.hidden}")
        self.hidden = tuple(int(h) for h in self.hidden)

    def resolved_loss(self, n_classes: int) -> LossConfig:
        if self.loss is None:
            return LossConfig.for_classes(n_classes)
        self.loss.check_ceiling(n_classes)
        return self.loss

    def to_dict(self) -> Dict:
        d = dataclasses.asdict(self)
        if self.loss is not None:
            d["loss"] = dataclasses.asdict(self.loss)
        if self.initial_marginal is not None:
            d["initial_marginal"] = [float(v) for v in self.initial_marginal]
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: Dict) -> "TrainConfig":
        d = dict(d)
        if d.get("loss") is not None:
            d["loss"] = LossConfig(**d["loss"])
        if d.get("hidden") is not None:
            d["hidden"] = tuple(d["hidden"])
        if d.get("initial_marginal") is not None:
            d["initial_marginal"] = tuple(d["initial_marginal"])
        return cls(**d)


@dataclass
class EvalReport:
    """Accuracy breakdown over the labeled rows of one dataset."""

    accuracy: float
    per_class: List[Optional[float]]
    confusion: np.ndarray
    n_evaluated: int


@dataclass
class Metrics:
    """One record per epoch plus the final confusion matrix."""

    records: List[Dict] = field(default_factory=list)
    confusion: Optional[np.ndarray] = None

    def final(self) -> Dict:
        if not self.records:
            raise ValueError("no epochs recorded")
        return self.records[-1]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)

    def series(self, key: str) -> List:
        return [r[key] for r in self.records]


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def evaluate(params: ModelParams, ds: DomainDataset) -> EvalReport:
    """Argmax accuracy over rows with a valid label; sentinel rows are
    excluded from every denominator."""
    valid = ds.labels >= 0
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise ValueError("dataset has no labeled samples to evaluate")
    x = ds.x_flat()[valid]
    y = ds.labels[valid]
    preds = predict_logits(params, x).argmax(axis=1)
    k = ds.class_count
    confusion = np.zeros((k, k), dtype=np.int64)
    np.add.at(confusion, (y, preds), 1)
    per_class: List[Optional[float]] = []
    for c in range(k):
        row_total = confusion[c].sum()
        per_class.append(float(confusion[c, c] / row_total) if row_total else None)
    return EvalReport(
        accuracy=float((preds == y).mean()),
        per_class=per_class,
        confusion=confusion,
        n_evaluated=n_valid,
    )


def split_target(labels: np.ndarray, eval_fraction: float,
                 seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """Stratified adapt/eval index split; groups with one sample stay in adapt."""
    if eval_fraction == 0.0:
        idx = np.arange(labels.shape[0])
        return idx, idx.copy()
    rng = np.random.default_rng([int(seed) & _MASK, 909])
    adapt, held = [], []
    for value in np.unique(labels):
        rows = np.flatnonzero(labels == value)
        rows = rows[rng.permutation(rows.size)]
        n_eval = int(np.floor(eval_fraction * rows.size + 0.5))
        if rows.size >= 2:
            n_eval = min(max(n_eval, 1), rows.size - 1)
        else:
            n_eval = 0
        held.append(rows[:n_eval])
        adapt.append(rows[n_eval:])
    return np.sort(np.concatenate(adapt)), np.sort(np.concatenate(held))


# ---------------------------------------------------------------------------
# the training loop
# ---------------------------------------------------------------------------

def _entropy_of(p: np.ndarray) -> float:
    safe = np.maximum(np.asarray(p, dtype=np.float64), 1e-300)
    return float(-(safe * np.log(safe)).sum())


def _latent_features(params: ModelParams, x: np.ndarray) -> np.ndarray:
    """Tape-free extractor output (mirrors the forward pass up to the heads)."""
    h = np.asarray(x, dtype=np.float64)
    for w, b in params.phi:
        h = np.maximum(h @ w.data + b.data, 0.0)
    return h


def full_set_mmd(params: ModelParams, src_x: np.ndarray, tgt_x: np.ndarray) -> float:
    """Squared kernel distance between the two domains' full latent sets."""
    z_s = Tensor(_latent_features(params, src_x))
    z_t = Tensor(_latent_features(params, tgt_x))
    return float(mmd_distance(z_s, z_t).data)


def _transform_token(seed_data: int, epoch: int, step_idx: int) -> int:
    return ((int(seed_data) & _MASK) * 1_000_003 + epoch * 1_009 + step_idx) % (2 ** 31 - 1)


def _effective_loss(base: LossConfig, components: frozenset) -> LossConfig:
    return dataclasses.replace(
        base,
        lambda_M=base.lambda_M if "mim" in components else 0.0,
        lambda_C=base.lambda_C if "cpbm" in components else 0.0,
        lambda_U=base.lambda_U if "mupbm" in components else 0.0,
        lambda_S=base.lambda_S if "tpbm" in components else 0.0,
    )


def _active_components(cfg: TrainConfig, tgt_is_image: bool) -> frozenset:
    components = _METHOD_COMPONENTS[cfg.method]
    needs_images = components & {"cpbm", "tpbm"}
    if needs_images and not tgt_is_image:
        if cfg.method == "instapbm":
            # point data has no transform geometry; keep the input-agnostic terms
            return components - {"cpbm", "tpbm"}
        raise ValueError(f"method {cfg.method!r} needs image data")
    return components


def _check_pair(src: DomainDataset, tgt: DomainDataset) -> None:
    if src.class_count != tgt.class_count:
        raise ValueError(
            f"class counts differ: {src.class_count} vs {tgt.class_count}")
    d_src, d_tgt = src.x_flat().shape[1], tgt.x_flat().shape[1]
    if d_src != d_tgt:
        raise ValueError(f"input geometry differs: {d_src} vs {d_tgt} features")
    if src.is_image != tgt.is_image:
        raise ValueError("domains must both be images or both be points")


def train(cfg: TrainConfig, src: DomainDataset, tgt: DomainDataset,
          on_step: Optional[Callable[[int, int, Dict[str, float]], None]] = None,
          warm_start: Optional[ModelParams] = None,
          ) -> Tuple[ModelParams, Metrics]:
    """Run the configured objective and log per-epoch metrics.

    Returns the trained parameters and the metric history. ``on_step``
    receives (epoch, step, term report) right after each optimizer update.
    ``warm_start`` continues from a copy of existing parameters instead of a
    fresh seeded init; its layer spec must match the config.
    """
    _check_pair(src, tgt)
    k = src.class_count

    # sentinel rows carry no class; they never see the supervised term
    if (src.labels < 0).any():
        src = src.take(np.flatnonzero(src.labels >= 0))
    if src.n_samples == 0:
        raise ValueError("source dataset has no labeled samples")

    components = _active_components(cfg, tgt.is_image)
    base_loss = cfg.resolved_loss(k)
    loss_cfg = _effective_loss(base_loss, components)
    is_dm = "dm" in components

    adapt_idx, eval_idx = split_target(tgt.labels, cfg.eval_fraction, cfg.seed_data)
    adapt = tgt.take(adapt_idx)
    held_out = tgt.take(eval_idx)

    src_flat = src.x_flat()
    adapt_flat = adapt.x_flat()
    tgt_flat = tgt.x_flat()
    input_dim = src_flat.shape[1]

    layer_spec = [input_dim, *cfg.hidden, k]
    if warm_start is None:
        params = init_params(layer_spec, cfg.seed_model)
    else:
        if list(warm_start.layer_spec) != layer_spec:
            raise ValueError(
                f"warm-start layer spec {warm_start.layer_spec} does not "
                f"match config {layer_spec}")
        params = clone_params(warm_start)
    opt = OptimState(kind=cfg.optimizer, lr=cfg.lr, momentum=cfg.momentum,
                     weight_decay=cfg.weight_decay)
    tracker = MarginalTracker(
        q=np.asarray(cfg.initial_marginal, dtype=np.float64)
        if cfg.initial_marginal is not None else np.full(k, 1.0 / k),
        momentum=loss_cfg.marginal_momentum)

    n_src, n_adapt = src.n_samples, adapt.n_samples
    pair_min = min(n_src, n_adapt)
    if pair_min < 2:
        raise ValueError("need at least 2 samples per domain")
    batch = min(cfg.batch, pair_min)
    steps_per_epoch = max(1, pair_min // batch)

    cpbm_kinds = _CPBM_KIND_SETS.get(cfg.method, ())
    tpbm_tasks = _TPBM_TASK_SETS.get(cfg.method, ())
    global_step = 0
    metrics = Metrics()

    for epoch in range(cfg.epochs):
        perm_src = np.random.default_rng(
            [cfg.seed_data & _MASK, 11, epoch]).permutation(n_src)
        perm_tgt = np.random.default_rng(
            [cfg.seed_data & _MASK, 13, epoch]).permutation(n_adapt)
        term_sums: Dict[str, float] = {}

        for s in range(steps_per_epoch):
            rows_s = perm_src[s * batch:(s + 1) * batch]
            rows_t = perm_tgt[s * batch:(s + 1) * batch]
            x_s, y_s = src_flat[rows_s], src.labels[rows_s]
            x_t = adapt_flat[rows_t]

            if is_dm:
                total, report = _dm_step(cfg, params, x_s, y_s, x_t, global_step)
            else:
                bundle = _build_bundle(cfg, components, cpbm_kinds, tpbm_tasks,
                                       params, src, adapt, rows_s, rows_t,
                                       x_s, y_s, x_t, loss_cfg, epoch, s)
                total, report = total_objective(bundle, params, loss_cfg, tracker)

            if not np.isfinite(total.data):
                raise NumericalAbort(_first_bad_term(report), epoch, s)

            params.zero_grads()
            backward(total)
            step(params, opt)
            global_step += 1

            for name, value in report.items():
                term_sums[name] = term_sums.get(name, 0.0) + value
            if on_step is not None:
                on_step(epoch, s, dict(report))

        eval_rep = evaluate(params, held_out)
        trans_rep = evaluate(params, adapt)
        marginal = softmax_probs(predict_logits(params, tgt_flat)).mean(axis=0)
        record = {
            "epoch": epoch,
            "loss_terms": {name: value / steps_per_epoch
                           for name, value in sorted(term_sums.items())},
            "src_train_acc": evaluate(params, src).accuracy,
            "tgt_acc": eval_rep.accuracy,
            "tgt_acc_transductive": trans_rep.accuracy,
            "per_class_tgt_acc": eval_rep.per_class,
            "prediction_marginal": [float(v) for v in marginal],
            "h_q": tracker.entropy() if "mim" in components else _entropy_of(marginal),
        }
        metrics.records.append(record)
        metrics.confusion = eval_rep.confusion

    return params, metrics


def _first_bad_term(report: Dict[str, float]) -> str:
    for name, value in report.items():
        if name != "total" and not np.isfinite(value):
            return name
    return "total"


def _dm_step(cfg: TrainConfig, params: ModelParams, x_s: np.ndarray,
             y_s: np.ndarray, x_t: np.ndarray, global_step: int
             ) -> Tuple[Tensor, Dict[str, float]]:
    """Source cross-entropy plus the ramped feature-distance penalty."""
    z_s = features(params, Tensor(x_s))
    z_t = features(params, Tensor(x_t))
    w_psi, b_psi = params.psi
    # logits reuse the source feature tape instead of a second extractor pass
    ce = cross_entropy(add(matmul(z_s, w_psi), b_psi), y_s)
    distance = (mmd_distance(z_s, z_t) if cfg.method == "dm_mmd"
                else coral_distance(z_s, z_t))
    if cfg.dm_ramp_steps > 0:
        ramp = min(1.0, (global_step + 1) / cfg.dm_ramp_steps)
    else:
        ramp = 1.0
    weight = cfg.dm_weight * ramp
    total = add(ce, scale(distance, weight))
    name = "mmd" if cfg.method == "dm_mmd" else "coral"
    report = {"supervised": float(ce.data), name: float(distance.data),
              "dm_weight": weight, "total": float(total.data)}
    return total, report


def _build_bundle(cfg: TrainConfig, components: frozenset,
                  cpbm_kinds: Tuple[str, ...], tpbm_tasks: Tuple[str, ...],
                  params: ModelParams, src: DomainDataset, adapt: DomainDataset,
                  rows_s: np.ndarray, rows_t: np.ndarray,
                  x_s: np.ndarray, y_s: np.ndarray, x_t: np.ndarray,
                  loss_cfg: LossConfig, epoch: int, s: int) -> BatchBundle:
    """Assemble exactly the views the active terms consume."""
    token = _transform_token(cfg.seed_data, epoch, s)
    bundle = BatchBundle(src_x=x_s, src_y=y_s)
    if components & {"mim", "cpbm"}:
        bundle.tgt_x = x_t

    if "cpbm" in components:
        batch_imgs = ImageBatch(adapt.images.data[rows_t])
        bundle.tgt_x_aug = apply_semantic_preserving(
            batch_imgs, token, kinds=cpbm_kinds).flat()
        bundle.pair_x_a = x_s
        bundle.pair_x_b = np.roll(x_s, 1, axis=0)
        bundle.pair_diff_mask = y_s != np.roll(y_s, 1)

    if "mupbm" in components:
        rng = np.random.default_rng([cfg.seed_data & _MASK, 17, epoch, s])
        partner = rng.permutation(x_t.shape[0])
        betas = sample_mixup_beta(x_t.shape[0], loss_cfg.mixup_alpha, rng)
        probs = softmax_probs(predict_logits(params, x_t))
        b_col = betas[:, None]
        bundle.mixed_x = b_col * x_t + (1.0 - b_col) * x_t[partner]
        bundle.mixed_targets = b_col * probs + (1.0 - b_col) * probs[partner]

    if "tpbm" in components:
        both = np.concatenate([src.images.data[rows_s], adapt.images.data[rows_t]])
        st: Dict[str, Tuple[np.ndarray, np.ndarray]] = {}
        for task in tpbm_tasks:
            x_task, labels = apply_semantic_transforming(ImageBatch(both), task, token)
            st[task] = (x_task.flat(), labels)
        bundle.st_batches = st

    return bundle


# ---------------------------------------------------------------------------
# run directories
# ---------------------------------------------------------------------------

def save_run(out_dir, cfg: TrainConfig, params: ModelParams,
             metrics: Metrics) -> None:
    """Write config.json, metrics.jsonl, summary.json, confusion.csv,
    checkpoint.bin under one directory."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    resolved = cfg.to_dict()
    resolved["loss"] = dataclasses.asdict(cfg.resolved_loss(params.n_classes))
    (out_dir / "config.json").write_text(json.dumps(resolved, indent=2, sort_keys=True))
    (out_dir / "metrics.jsonl").write_text(metrics.to_jsonl())
    last = metrics.final()
    summary = {
        "method": cfg.method,
        "epochs": cfg.epochs,
        "target_accuracy": last["tgt_acc"],
        "target_accuracy_transductive": last["tgt_acc_transductive"],
        "source_accuracy": last["src_train_acc"],
        "per_class_target_accuracy": last["per_class_tgt_acc"],
        "loss_terms": last["loss_terms"],
        "prediction_marginal": last["prediction_marginal"],
        "h_q": last["h_q"],
    }
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    lines = [",".join(str(int(v)) for v in row) for row in metrics.confusion]
    (out_dir / "confusion.csv").write_text("\n".join(lines) + "\n")
    save_checkpoint(out_dir / "checkpoint.bin", params)


# ---------------------------------------------------------------------------
# the ablation matrix
# ---------------------------------------------------------------------------

def _default_meta_map(n_classes: int, sub_styles: int) -> Dict[int, int]:
    return {c * sub_styles + st: c
            for c in range(n_classes) for st in range(sub_styles)}


def build_benchmark_pair(spec: BenchmarkSpec, samples_per_class: int = 250,
                         data_seed: int = 0) -> Tuple[DomainDataset, DomainDataset]:
    """Generate the canonical glyph pair and push the target through the
    requested constructor."""
    src_spec, tgt_spec = default_pair_specs(
        samples_per_class=samples_per_class, seed=data_seed)
    src, tgt = generate_glyph_pair(src_spec, tgt_spec)
    if spec.kind == "LDS":
        return src, resample_lds(tgt, spec)
    if spec.kind == "ILDS":
        if spec.meta_class_map is None:
            spec = dataclasses.replace(
                spec, meta_class_map=_default_meta_map(
                    src_spec.n_classes, src_spec.sub_styles))
        return relabel_to_meta(src, spec), build_ilds(tgt, spec)
    n_out = int(round(spec.outlier_fraction * tgt.n_samples
                      / (1.0 - spec.outlier_fraction)))
    pool = outlier_pool("inverted_random", max(2 * n_out, 8), seed=spec.seed)
    return src, inject_two(tgt, pool, spec)


def ablation_suite(base_cfg: TrainConfig, benchmarks: Sequence[BenchmarkSpec],
                   samples_per_class: int = 250, data_seed: int = 0,
                   seeds: Sequence[int] = DEFAULT_SEEDS,
                   rows: Sequence[Tuple[str, str]] = ABLATION_ROWS,
                   progress: Optional[Callable[[str], None]] = None) -> Dict:
    """Run every component row on every benchmark; report per-seed and mean
    target accuracies in a row-major table."""
    columns = []
    pairs = []
    for i, spec in enumerate(benchmarks):
        name = spec.kind if spec.kind not in columns else f"{spec.kind}#{i}"
        columns.append(name)
        pairs.append(build_benchmark_pair(spec, samples_per_class, data_seed))

    table: Dict = {"columns": columns, "rows": []}
    for row_name, method in rows:
        row: Dict = {"row": row_name, "method": method, "per_benchmark": {}}
        bench_means = []
        for name, (src, tgt) in zip(columns, pairs):
            per_seed = {}
            for seed in seeds:
                cfg = dataclasses.replace(
                    base_cfg, method=method, seed_model=seed, seed_data=seed)
                _, metrics = train(cfg, src, tgt)
                per_seed[str(seed)] = metrics.final()["tgt_acc"]
                if progress is not None:
                    progress(f"{row_name} on {name} seed {seed}: "
                             f"{per_seed[str(seed)]:.3f}")
            mean = float(np.mean(list(per_seed.values())))
            row["per_benchmark"][name] = {"per_seed": per_seed, "mean": mean}
            bench_means.append(mean)
        row["mean"] = float(np.mean(bench_means))
        table["rows"].append(row)
    return table


def ablation_table_text(table: Dict) -> str:
    """Fixed-width text rendering of the ablation results."""
    columns = table["columns"]
    header = f"{'row':<12}" + "".join(f"{c:>10}" for c in columns) + f"{'mean':>10}"
    lines = [header, "-" * len(header)]
    for row in table["rows"]:
        cells = "".join(
            f"{row['per_benchmark'][c]['mean'] * 100:>10.1f}" for c in columns)
        lines.append(f"{row['row']:<12}" + cells + f"{row['mean'] * 100:>10.1f}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# label-shift failure probe
# ---------------------------------------------------------------------------

DEFAULT_PROBE_SCHEDULE = (1.0, 3.0, 10.0, 30.0, 100.0)


def lds_failure_probe(priors_src: Sequence[float], priors_tgt: Sequence[float],
                      dm_weight_schedule: Sequence[float] = DEFAULT_PROBE_SCHEDULE,
                      n: int = 1000, spread: float = 0.5,
                      means: Sequence[Sequence[float]] = ((-2.0, 0.0), (2.0, 0.0)),
                      seed_model: int = 17, seed_data: int = 0,
                      epochs: int = 120, batch: int = 64,
                      hidden: Tuple[int, ...] = (32, 16),
                      weight_decay: float = 1e-5,
                      optimizer: str = "adam", lr: float = 1e-3,
                      dm_ramp_steps: int = 10) -> Dict:
    """Escalate the feature-distance weight on a two-cluster pair with
    shifted label priors and record what tightly-matched features do to
    accuracy.

    One model is trained throughout: each schedule entry continues from the
    previous weight's parameters, so the curve follows a single matching
    trajectory as the pressure rises rather than re-rolling the dice per
    weight. The accuracy ceiling for any marginal-matched predictor is
    1 - TV(priors_src, priors_tgt); because the pair shares its
    class-conditionals, a model cannot hold source accuracy while its
    marginals are forced together, so past a threshold weight both
    accuracies fall through the ceiling as the distance drops toward zero.
    """
    priors_src = [float(p) for p in priors_src]
    priors_tgt = [float(p) for p in priors_tgt]
    if len(priors_src) != 2 or len(priors_tgt) != 2:
        raise ValueError("the probe is a 2-class construction")
    tv = 0.5 * sum(abs(a - b) for a, b in zip(priors_src, priors_tgt))
    src, tgt = generate_blob_pair(2, priors_src, priors_tgt, means, spread,
                                  n, seed=seed_data)
    curve = []
    params = None
    for weight in dm_weight_schedule:
        cfg = TrainConfig(method="dm_mmd", epochs=epochs, batch=batch,
                          dm_weight=float(weight), hidden=hidden,
                          weight_decay=weight_decay, optimizer=optimizer,
                          lr=lr, dm_ramp_steps=dm_ramp_steps,
                          seed_model=seed_model, seed_data=seed_data)
        params, metrics = train(cfg, src, tgt, warm_start=params)
        last = metrics.final()
        curve.append({
            "dm_weight": float(weight),
            "mmd": full_set_mmd(params, src.x_flat(), tgt.x_flat()),
            "source_acc": last["src_train_acc"],
            "target_acc": last["tgt_acc"],
            "target_acc_transductive": last["tgt_acc_transductive"],
        })
    return {
        "priors_src": priors_src,
        "priors_tgt": priors_tgt,
        "ceiling": 1.0 - tv,
        "curve": curve,
    }
