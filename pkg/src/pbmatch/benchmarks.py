"""Constructors that reshape a balanced domain pair into a shifted benchmark.

Three kinds, all operating on the target side only (the source dataset is
never resampled):

- LDS: long-tail the target label marginal with a single imbalance factor.
- ILDS: keep meta-class labels but long-tail the sub-class composition
  inside every meta-class.
- TwO: append out-of-support images carrying the sentinel label -1.

Counts follow the exponential decay n_k = round(n_max * IF^(-k/(K-1))),
the standard single-knob long-tail construction. Everything is
deterministic in (input, spec).
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np

from .datasets import (
    OUTLIER_LABEL,
    DomainDataset,
    load_dataset,
    save_dataset,
)
from .transforms import ImageBatch

BENCHMARK_KINDS = ("LDS", "ILDS", "TwO")

# salts for the independent draw streams used by each constructor
_SALT_CLASS_ORDER = 7
_SALT_LDS_ROWS = 1000
_SALT_ILDS_ORDER = 2000
_SALT_ILDS_ROWS = 2500
_SALT_TWO_POOL = 3000
_SALT_TWO_SHUFFLE = 3001


def _rng(seed: int, salt: int) -> np.random.Generator:
    return np.random.default_rng([int(seed) & 0xFFFFFFFF, salt])


@dataclass(frozen=True)
class BenchmarkSpec:
    """Recipe for one benchmark constructor run.

    ``class_order`` is either an explicit permutation of the class indices
    (tail position -> class) or the string "random" for a seeded draw.
    ``meta_class_map`` sends every sublabel to its meta-class (ILDS only).
    """

    kind: str
    imbalance_factor: float = 1.0
    class_order: Union[Sequence[int], str] = "random"
    meta_class_map: Optional[Dict[int, int]] = None
    outlier_fraction: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in BENCHMARK_KINDS:
            raise ValueError(f"kind must be one of {BENCHMARK_KINDS}, got {self.kind!r}")
        if not np.isfinite(self.imbalance_factor) or self.imbalance_factor < 1.0:
            raise ValueError(
                f"imbalance_factor must be finite and >= 1, got {self.imbalance_factor}")
        if not (0.0 <= self.outlier_fraction < 1.0):
            raise ValueError(
                f"outlier_fraction must lie in [0, 1), got {self.outlier_fraction}")
        if isinstance(self.class_order, str) and self.class_order != "random":
            raise ValueError(
                f'class_order must be a permutation or "random", got {self.class_order!r}')

    def to_dict(self) -> Dict:
        d = dataclasses.asdict(self)
        if not isinstance(d["class_order"], str):
            d["class_order"] = [int(c) for c in d["class_order"]]
        if d["meta_class_map"] is not None:
            d["meta_class_map"] = {str(k): int(v) for k, v in d["meta_class_map"].items()}
        return d

    @classmethod
    def from_dict(cls, d: Dict) -> "BenchmarkSpec":
        d = dict(d)
        if d.get("meta_class_map") is not None:
            d["meta_class_map"] = {int(k): int(v) for k, v in d["meta_class_map"].items()}
        return cls(**d)


def decay_counts(n_max: int, positions: int, factor: float) -> np.ndarray:
    """Per-position kept counts n_k = round(n_max * factor^(-k/(K-1)))."""
    if positions == 1:
        return np.array([n_max], dtype=np.int64)
    k = np.arange(positions, dtype=np.float64)
    raw = n_max * factor ** (-k / (positions - 1))
    return np.floor(raw + 0.5).astype(np.int64)


def _resolve_class_order(spec: BenchmarkSpec, class_count: int) -> np.ndarray:
    if isinstance(spec.class_order, str):
        return _rng(spec.seed, _SALT_CLASS_ORDER).permutation(class_count)
    order = np.asarray(spec.class_order, dtype=np.int64)
    if sorted(order.tolist()) != list(range(class_count)):
        raise ValueError(
            f"class_order must be a permutation of 0..{class_count - 1}, got {order.tolist()}")
    return order


def _balanced_count(counts: np.ndarray, what: str) -> int:
    present = counts[counts > 0]
    if present.size == 0:
        raise ValueError(f"no samples found for {what}")
    if counts.min() != counts.max():
        raise ValueError(
            f"{what} must be balanced before resampling, got counts {counts.tolist()}")
    return int(counts[0])


def _check_tail(counts: np.ndarray, n_max: int, factor: float) -> None:
    if counts[-1] == 0:
        raise ValueError(
            f"imbalance factor {factor} drives the tail to 0 of {n_max} samples "
            "per class; generate more samples per class or lower the factor")


# ---------------------------------------------------------------------------
# LDS: long-tail the label marginal
# ---------------------------------------------------------------------------

def resample_lds(target: DomainDataset, spec: BenchmarkSpec) -> DomainDataset:
    """Keep a decaying sample count per class, majority first in class_order."""
    if spec.kind != "LDS":
        raise ValueError(f"resample_lds needs kind LDS, got {spec.kind}")
    k = target.class_count
    counts_in = np.bincount(target.labels, minlength=k)
    n_max = _balanced_count(counts_in, "target classes")
    order = _resolve_class_order(spec, k)
    kept = decay_counts(n_max, k, spec.imbalance_factor)
    _check_tail(kept, n_max, spec.imbalance_factor)

    selected = []
    for position, cls in enumerate(order):
        rows = np.flatnonzero(target.labels == cls)
        shuffled = rows[_rng(spec.seed, _SALT_LDS_ROWS + int(cls)).permutation(rows.size)]
        selected.append(shuffled[: kept[position]])
    indices = np.sort(np.concatenate(selected))

    out = target.take(indices)
    hist = np.bincount(out.labels, minlength=k)
    out.metadata["benchmark"] = {
        "kind": "LDS",
        "imbalance_factor": spec.imbalance_factor,
        "class_order": [int(c) for c in order],
        "seed": spec.seed,
        "achieved_histogram": hist.tolist(),
        "tv_vs_uniform": label_histogram(out)[1],
    }
    return out


# ---------------------------------------------------------------------------
# ILDS: long-tail the sub-class mix inside each meta-class
# ---------------------------------------------------------------------------

def relabel_to_meta(ds: DomainDataset, spec: BenchmarkSpec) -> DomainDataset:
    """Replace labels by the meta-class of each sublabel; no resampling.

    This is the source-side half of the ILDS construction: pixel data is
    carried over byte-identically, only the label vector changes.
    """
    mapping, meta_count = _validated_meta_map(ds, spec)
    labels = np.array([mapping[int(s)] for s in ds.sublabels], dtype=np.int64)
    return DomainDataset(
        images=ds.images, labels=labels, class_count=meta_count,
        domain_role=ds.domain_role, sublabels=ds.sublabels,
        metadata=dict(ds.metadata))


def _validated_meta_map(ds: DomainDataset, spec: BenchmarkSpec) -> Tuple[Dict[int, int], int]:
    if ds.sublabels is None:
        raise ValueError("ILDS needs a dataset with sublabels")
    if spec.meta_class_map is None:
        raise ValueError("ILDS needs a BenchmarkSpec with meta_class_map set")
    mapping = {int(k): int(v) for k, v in spec.meta_class_map.items()}
    present = np.unique(ds.sublabels)
    missing = [int(s) for s in present if int(s) not in mapping]
    if missing:
        raise ValueError(f"sublabels missing from meta_class_map: {missing}")
    metas = sorted(set(mapping.values()))
    if metas != list(range(len(metas))):
        raise ValueError(f"meta labels must be contiguous from 0, got {metas}")
    return mapping, len(metas)


def build_ilds(target: DomainDataset, spec: BenchmarkSpec) -> DomainDataset:
    """Relabel to meta-classes and long-tail sub-classes within each meta."""
    if spec.kind != "ILDS":
        raise ValueError(f"build_ilds needs kind ILDS, got {spec.kind}")
    mapping, meta_count = _validated_meta_map(target, spec)
    sublabels = target.sublabels
    per_meta: Dict[int, list] = {m: [] for m in range(meta_count)}
    for sub in np.unique(sublabels):
        per_meta[mapping[int(sub)]].append(int(sub))

    selected = []
    sub_histograms: Dict[str, Dict[str, int]] = {}
    for meta in range(meta_count):
        subs = sorted(per_meta[meta])
        sub_counts = np.array([(sublabels == s).sum() for s in subs])
        n_max = _balanced_count(sub_counts, f"meta-class {meta} sub-classes")
        kept = decay_counts(n_max, len(subs), spec.imbalance_factor)
        _check_tail(kept, n_max, spec.imbalance_factor)
        order = _rng(spec.seed, _SALT_ILDS_ORDER + meta).permutation(len(subs))
        sub_histograms[str(meta)] = {}
        for position, oi in enumerate(order):
            sub = subs[oi]
            rows = np.flatnonzero(sublabels == sub)
            shuffled = rows[_rng(spec.seed, _SALT_ILDS_ROWS + sub).permutation(rows.size)]
            selected.append(shuffled[: kept[position]])
            sub_histograms[str(meta)][str(sub)] = int(kept[position])
    indices = np.sort(np.concatenate(selected))

    trimmed = target.take(indices)
    labels = np.array([mapping[int(s)] for s in trimmed.sublabels], dtype=np.int64)
    out = DomainDataset(
        images=trimmed.images, labels=labels, class_count=meta_count,
        domain_role=trimmed.domain_role, sublabels=trimmed.sublabels,
        metadata=dict(trimmed.metadata))
    out.metadata["benchmark"] = {
        "kind": "ILDS",
        "imbalance_factor": spec.imbalance_factor,
        "meta_class_map": {str(k): v for k, v in mapping.items()},
        "seed": spec.seed,
        "achieved_histogram": np.bincount(out.labels, minlength=meta_count).tolist(),
        "sub_histograms": sub_histograms,
        "tv_vs_uniform": label_histogram(out)[1],
    }
    return out


# ---------------------------------------------------------------------------
# TwO: target with outliers
# ---------------------------------------------------------------------------

def inject_two(target: DomainDataset, pool: ImageBatch, spec: BenchmarkSpec) -> DomainDataset:
    """Append sentinel-labeled outliers so they form outlier_fraction of the result."""
    if spec.kind != "TwO":
        raise ValueError(f"inject_two needs kind TwO, got {spec.kind}")
    if not target.is_image:
        raise ValueError("outlier injection needs an image dataset")
    rho = spec.outlier_fraction
    n = target.n_samples
    n_out = int(round(rho * n / (1.0 - rho)))
    if n_out == 0:
        out = target.take(np.arange(n))
        out.metadata["benchmark"] = {
            "kind": "TwO", "outlier_fraction": rho, "seed": spec.seed,
            "n_outliers": 0, "n_total": n,
        }
        return out
    if len(pool) < n_out:
        raise ValueError(
            f"outlier pool has {len(pool)} images but fraction {rho} of "
            f"{n} target samples needs {n_out}")
    if pool.data.shape[1:] != target.images.data.shape[1:]:
        raise ValueError(
            f"pool image shape {pool.data.shape[1:]} does not match "
            f"target {target.images.data.shape[1:]}")

    pick = _rng(spec.seed, _SALT_TWO_POOL).permutation(len(pool))[:n_out]
    outlier_imgs = pool.data[pick]
    images = np.concatenate([target.images.data, outlier_imgs], axis=0)
    labels = np.concatenate([target.labels,
                             np.full(n_out, OUTLIER_LABEL, dtype=np.int64)])
    sublabels = None
    if target.sublabels is not None:
        sublabels = np.concatenate([target.sublabels,
                                    np.full(n_out, OUTLIER_LABEL, dtype=np.int64)])
    perm = _rng(spec.seed, _SALT_TWO_SHUFFLE).permutation(n + n_out)
    out = DomainDataset(
        images=ImageBatch(images[perm]), labels=labels[perm],
        class_count=target.class_count, domain_role=target.domain_role,
        sublabels=None if sublabels is None else sublabels[perm],
        metadata=dict(target.metadata))
    out.metadata["benchmark"] = {
        "kind": "TwO", "outlier_fraction": rho, "seed": spec.seed,
        "n_outliers": n_out, "n_total": n + n_out,
    }
    return out


# ---------------------------------------------------------------------------
# reporting
# ---------------------------------------------------------------------------

def label_histogram(ds: DomainDataset) -> Tuple[np.ndarray, float]:
    """Per-class counts (sentinel rows excluded) and TV distance vs uniform."""
    valid = ds.labels[ds.labels >= 0]
    counts = np.bincount(valid, minlength=ds.class_count)
    if counts.sum() == 0:
        return counts, 0.0
    p = counts / counts.sum()
    tv = 0.5 * float(np.abs(p - 1.0 / ds.class_count).sum())
    return counts, tv


def benchmark_report(spec: BenchmarkSpec, source: DomainDataset,
                     target: DomainDataset) -> Dict:
    """The benchmark.json payload: spec plus achieved statistics per side."""
    report = {"spec": spec.to_dict()}
    for name, ds in (("source", source), ("target", target)):
        counts, tv = label_histogram(ds)
        report[name] = {
            "n_samples": ds.n_samples,
            "counts": counts.tolist(),
            "tv_vs_uniform": tv,
            "n_outliers": int((ds.labels == OUTLIER_LABEL).sum()),
        }
    bench_meta = target.metadata.get("benchmark")
    if bench_meta is not None:
        report["target"]["benchmark"] = bench_meta
    return report


def write_benchmark(out_dir, source: DomainDataset, target: DomainDataset,
                    spec: BenchmarkSpec) -> None:
    """Persist the pair plus benchmark.json under one directory."""
    out_dir = Path(out_dir)
    save_dataset(source, out_dir / "source")
    save_dataset(target, out_dir / "target")
    (out_dir / "benchmark.json").write_text(
        json.dumps(benchmark_report(spec, source, target), indent=2, sort_keys=True))


def load_pair(in_dir) -> Tuple[DomainDataset, DomainDataset]:
    """Read the source/ and target/ datasets written by write_benchmark."""
    in_dir = Path(in_dir)
    return load_dataset(in_dir / "source"), load_dataset(in_dir / "target")
