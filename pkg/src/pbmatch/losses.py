"""Training objectives.

Four target-side terms (marginal matching, consistency under
semantic-preserving views, interpolation consistency, pretext-task
supervision), their weighted combination with source cross-entropy, and
two feature-distribution distances used by alignment baselines.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .nets import ModelParams, forward
from .tensor import (
    Tensor,
    add,
    exp,
    log_softmax,
    matmul,
    mul,
    neg,
    reduce,
    relu,
    scale,
    sub,
    transpose,
)

# per-pair clamp on the disagreement divergence; unbounded KL invites
# divergence-chasing on easy pairs
KL_MARGIN = 5.0
# multiples of the median pairwise distance used when no bandwidths are given
DEFAULT_BANDWIDTH_SCALES = (0.5, 1.0, 2.0, 4.0)
MARGINAL_FLOOR = 1e-6


def _const(x) -> Tensor:
    return Tensor(np.asarray(x, dtype=np.float64))


def _as_bool_mask(mask) -> np.ndarray:
    data = mask.data if isinstance(mask, Tensor) else mask
    return np.asarray(data).astype(bool).reshape(-1)


def _entropy(q: np.ndarray) -> float:
    q = np.asarray(q, dtype=np.float64)
    terms = np.where(q > 0.0, q * np.log(np.where(q > 0.0, q, 1.0)), 0.0)
    return float(-terms.sum())


def _mean_row_dot(a: Tensor, b: Tensor) -> Tensor:
    """E over rows of sum_y a[row, y] * b[row, y] (b may broadcast)."""
    return reduce("mean", reduce("sum", mul(a, b), axis=1))


def _kl_rows(logp_a: Tensor, logp_b: Tensor) -> Tensor:
    """Per-row KL(p_a || p_b) from two log-probability tensors."""
    p_a = exp(logp_a)
    return reduce("sum", mul(p_a, sub(logp_a, logp_b)), axis=1)


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer labels under the logits."""
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.shape[0] != logits.shape[0]:
        raise ValueError(f"labels shape {labels.shape} does not match logits {logits.shape}")
    k = logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"label out of range [0, {k}): {labels.min()}..{labels.max()}")
    onehot = np.zeros((labels.shape[0], k))
    onehot[np.arange(labels.shape[0]), labels] = 1.0
    return neg(_mean_row_dot(_const(onehot), log_softmax(logits)))


# ---------------------------------------------------------------------------
# configuration and marginal state
# ---------------------------------------------------------------------------

@dataclass
class LossConfig:
    """Weights and knobs for the combined objective.

    ``entropy_ceiling`` is an absolute value in nats; build configs with
    :meth:`for_classes` to get the default 0.85 * ln K. The ceiling gates the
    marginal-diversity term: below it the term pushes predictions apart
    (anti-collapse brake), above it legitimately skewed marginals are left
    alone.
    """

    entropy_ceiling: float
    lambda_M: float = 0.25
    lambda_C: float = 1.0
    lambda_U: float = 0.5
    lambda_S: float = 0.5
    lambda_con: float = 0.1
    marginal_momentum: float = 0.1
    mixup_alpha: float = 0.2
    supervised_weight: float = 1.0

    def __post_init__(self):
        for name in ("lambda_M", "lambda_C", "lambda_U", "lambda_S",
                     "lambda_con", "supervised_weight"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0.0:
                raise ValueError(f"{name} must be finite and >= 0, got {v}")
        if not (0.0 < self.marginal_momentum < 1.0):
            raise ValueError(f"marginal_momentum must lie in (0,1), got {self.marginal_momentum}")
        if self.mixup_alpha <= 0.0:
            raise ValueError(f"mixup_alpha must be positive, got {self.mixup_alpha}")
        if not (self.entropy_ceiling > 0.0):
            raise ValueError(f"entropy_ceiling must be positive, got {self.entropy_ceiling}")

    @classmethod
    def for_classes(cls, n_classes: int, **overrides) -> "LossConfig":
        if n_classes < 2:
            raise ValueError("need at least 2 classes")
        overrides.setdefault("entropy_ceiling", 0.85 * math.log(n_classes))
        cfg = cls(**overrides)
        cfg.check_ceiling(n_classes)
        return cfg

    def check_ceiling(self, n_classes: int) -> None:
        if self.entropy_ceiling > math.log(n_classes) + 1e-12:
            raise ValueError(
                f"entropy_ceiling {self.entropy_ceiling} exceeds ln {n_classes} "
                f"= {math.log(n_classes):.6f}")


@dataclass
class MarginalTracker:
    """Moving average of the predicted label marginal."""

    q: np.ndarray
    momentum: float = 0.1
    count: int = 0

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=np.float64)
        if self.q.ndim != 1 or self.q.shape[0] < 2:
            raise ValueError(f"marginal must be a vector of >= 2 probabilities, got {self.q.shape}")
        if not (0.0 < self.momentum < 1.0):
            raise ValueError(f"momentum must lie in (0,1), got {self.momentum}")
        self._normalize()

    @classmethod
    def uniform(cls, n_classes: int, momentum: float = 0.1) -> "MarginalTracker":
        return cls(q=np.full(n_classes, 1.0 / n_classes), momentum=momentum)

    def _normalize(self) -> None:
        if np.any(self.q < 0.0):
            raise ValueError("marginal entries must be non-negative")
        self.q = np.maximum(self.q, MARGINAL_FLOOR)
        self.q = self.q / self.q.sum()

    def update(self, mean_p: np.ndarray) -> None:
        mean_p = np.asarray(mean_p, dtype=np.float64)
        if mean_p.shape != self.q.shape:
            raise ValueError(f"mean prediction shape {mean_p.shape} != marginal {self.q.shape}")
        self.q = (1.0 - self.momentum) * self.q + self.momentum * mean_p
        self._normalize()
        self.count += 1

    def entropy(self) -> float:
        return _entropy(self.q)


# ---------------------------------------------------------------------------
# the four target-side terms
# ---------------------------------------------------------------------------

def _diversity_term(target_logits: Tensor, log_q: np.ndarray) -> Tensor:
    """E_x sum_y p(y|x) log q(y) with q constant; its gradient is the
    moving-average estimator of the marginal-entropy derivative."""
    p = exp(log_softmax(target_logits))
    return _mean_row_dot(p, _const(log_q))


def _confidence_term(target_logits: Tensor) -> Tensor:
    """+E_x H(p(.|x)): mean conditional entropy, driven down when minimized."""
    logp = log_softmax(target_logits)
    return neg(_mean_row_dot(exp(logp), logp))


def mim_loss(target_logits: Tensor, tracker: MarginalTracker, ceiling: float) -> Tensor:
    """Marginal-diversity plus confidence objective on an unlabeled batch.

    The diversity part enters only while the tracked marginal's entropy is
    below ``ceiling``; the tracker is advanced with the batch mean
    prediction after the loss is formed.
    """
    if target_logits.ndim != 2 or target_logits.shape[1] != tracker.q.shape[0]:
        raise ValueError(
            f"logits shape {target_logits.shape} does not match marginal of "
            f"{tracker.q.shape[0]} classes")
    confidence = _confidence_term(target_logits)
    if tracker.entropy() < ceiling:
        loss = add(_diversity_term(target_logits, np.log(tracker.q)), confidence)
    else:
        loss = confidence
    tracker.update(exp(log_softmax(target_logits)).data.mean(axis=0))
    return loss


def cpbm_loss(logits_orig: Tensor, logits_aug: Tensor,
              src_logits_a: Optional[Tensor], src_logits_b: Optional[Tensor],
              diff_class_mask, lambda_con: float,
              margin: float = KL_MARGIN) -> Tensor:
    """Consistency under semantic-preserving views, minus clamped
    disagreement on source pairs with different labels."""
    if logits_orig.shape != logits_aug.shape:
        raise ValueError(
            f"original and transformed logits differ: {logits_orig.shape} vs {logits_aug.shape}")
    agreement = reduce("mean", _kl_rows(log_softmax(logits_orig), log_softmax(logits_aug)))
    mask = None if diff_class_mask is None else _as_bool_mask(diff_class_mask)
    if (src_logits_a is None or src_logits_b is None
            or mask is None or not mask.any() or lambda_con == 0.0):
        return agreement
    if src_logits_a.shape != src_logits_b.shape:
        raise ValueError(
            f"pair logits differ: {src_logits_a.shape} vs {src_logits_b.shape}")
    if mask.shape[0] != src_logits_a.shape[0]:
        raise ValueError(
            f"mask length {mask.shape[0]} != pair count {src_logits_a.shape[0]}")
    kl = _kl_rows(log_softmax(src_logits_a), log_softmax(src_logits_b))
    # min(kl, margin) within the op set: margin - relu(margin - kl)
    clamped = sub(_const(margin), relu(sub(_const(margin), kl)))
    masked_sum = reduce("sum", mul(clamped, _const(mask.astype(np.float64))))
    disagreement = scale(masked_sum, 1.0 / int(mask.sum()))
    return sub(agreement, scale(disagreement, lambda_con))


def mupbm_loss(mixed_logits: Tensor, mixed_targets,
               written_direction: bool = False, smoothing: float = 0.01) -> Tensor:
    """Match predictions on interpolated inputs to interpolated targets.

    Default direction is KL(target || prediction), i.e. cross-entropy minus
    the constant target entropy; ``written_direction=True`` selects
    KL(prediction || target) with the targets smoothed by ``smoothing`` so
    one-hot rows stay finite. Targets never receive gradient.
    """
    q = mixed_targets.data if isinstance(mixed_targets, Tensor) else np.asarray(mixed_targets)
    q = np.asarray(q, dtype=np.float64)
    if q.shape != mixed_logits.shape:
        raise ValueError(f"target shape {q.shape} does not match logits {mixed_logits.shape}")
    row_sums = q.sum(axis=1)
    if np.any(np.abs(row_sums - 1.0) > 1e-6):
        bad = int(np.argmax(np.abs(row_sums - 1.0)))
        raise ValueError(f"target row {bad} sums to {row_sums[bad]}, not 1")
    logp = log_softmax(mixed_logits)
    if written_direction:
        k = q.shape[1]
        q_smooth = (1.0 - smoothing) * q + smoothing / k
        return _mean_row_dot(exp(logp), sub(logp, _const(np.log(q_smooth))))
    ce = neg(_mean_row_dot(_const(q), logp))
    mean_target_entropy = float(np.mean([_entropy(row) for row in q]))
    return sub(ce, _const(mean_target_entropy))


def tpbm_loss(task_logits_by_task: Mapping[str, Tensor],
              task_labels_by_task: Mapping[str, np.ndarray]) -> Tensor:
    """Mean over pretext tasks of label cross-entropy."""
    if not task_logits_by_task:
        raise ValueError("no pretext tasks given")
    if set(task_logits_by_task) != set(task_labels_by_task):
        raise ValueError(
            f"task keys differ: {sorted(task_logits_by_task)} vs {sorted(task_labels_by_task)}")
    total = None
    for task in sorted(task_logits_by_task):
        ce = cross_entropy(task_logits_by_task[task], task_labels_by_task[task])
        total = ce if total is None else add(total, ce)
    return scale(total, 1.0 / len(task_logits_by_task))


# ---------------------------------------------------------------------------
# combined objective
# ---------------------------------------------------------------------------

@dataclass
class BatchBundle:
    """One step's inputs: source labeled batch, target batch, and the
    pre-applied transform outputs each active term consumes."""

    src_x: np.ndarray
    src_y: np.ndarray
    tgt_x: Optional[np.ndarray] = None
    tgt_x_aug: Optional[np.ndarray] = None
    pair_x_a: Optional[np.ndarray] = None
    pair_x_b: Optional[np.ndarray] = None
    pair_diff_mask: Optional[np.ndarray] = None
    mixed_x: Optional[np.ndarray] = None
    mixed_targets: Optional[np.ndarray] = None
    st_batches: Optional[Dict[str, Tuple[np.ndarray, np.ndarray]]] = None


def total_objective(batch_bundle: BatchBundle, params: ModelParams,
                    cfg: LossConfig, tracker: MarginalTracker
                    ) -> Tuple[Tensor, Dict[str, float]]:
    """Weighted sum of the active terms; zero-weight terms are never built.

    Returns the scalar loss and a report of each computed term's
    unweighted value plus the total.
    """
    b = batch_bundle
    terms: List[Tuple[str, float, Tensor]] = []

    if cfg.supervised_weight > 0.0:
        logits = forward(params, _const(b.src_x))
        terms.append(("supervised", cfg.supervised_weight, cross_entropy(logits, b.src_y)))

    tgt_logits = None
    if cfg.lambda_M > 0.0:
        if b.tgt_x is None:
            raise ValueError("lambda_M > 0 requires a target batch")
        tgt_logits = forward(params, _const(b.tgt_x))
        terms.append(("mim", cfg.lambda_M, mim_loss(tgt_logits, tracker, cfg.entropy_ceiling)))

    if cfg.lambda_C > 0.0:
        if b.tgt_x is None or b.tgt_x_aug is None:
            raise ValueError("lambda_C > 0 requires a target batch and its transformed view")
        if tgt_logits is None:
            tgt_logits = forward(params, _const(b.tgt_x))
        aug_logits = forward(params, _const(b.tgt_x_aug))
        pair_a = forward(params, _const(b.pair_x_a)) if b.pair_x_a is not None else None
        pair_b = forward(params, _const(b.pair_x_b)) if b.pair_x_b is not None else None
        terms.append(("cpbm", cfg.lambda_C,
                      cpbm_loss(tgt_logits, aug_logits, pair_a, pair_b,
                                b.pair_diff_mask, cfg.lambda_con)))

    if cfg.lambda_U > 0.0:
        if b.mixed_x is None or b.mixed_targets is None:
            raise ValueError("lambda_U > 0 requires interpolated inputs and targets")
        mixed_logits = forward(params, _const(b.mixed_x))
        terms.append(("mupbm", cfg.lambda_U, mupbm_loss(mixed_logits, b.mixed_targets)))

    if cfg.lambda_S > 0.0:
        if not b.st_batches:
            raise ValueError("lambda_S > 0 requires pretext-task batches")
        logits_map = {task: forward(params, _const(x), head=task)
                      for task, (x, _) in b.st_batches.items()}
        labels_map = {task: labels for task, (_, labels) in b.st_batches.items()}
        terms.append(("tpbm", cfg.lambda_S, tpbm_loss(logits_map, labels_map)))

    if not terms:
        raise ValueError("all objective weights are zero; nothing to optimize")

    total = None
    report: Dict[str, float] = {}
    for name, weight, term in terms:
        report[name] = float(term.data)
        weighted = scale(term, weight)
        total = weighted if total is None else add(total, weighted)
    report["total"] = float(total.data)
    return total, report


# ---------------------------------------------------------------------------
# feature-distribution distances (alignment baselines)
# ---------------------------------------------------------------------------

def _check_feature_pair(z_src: Tensor, z_tgt: Tensor) -> None:
    if z_src.ndim != 2 or z_tgt.ndim != 2:
        raise ValueError(
            f"features must be rank-2, got ranks {z_src.ndim} and {z_tgt.ndim}")
    if z_src.shape[1] != z_tgt.shape[1]:
        raise ValueError(
            f"feature widths differ: {z_src.shape[1]} vs {z_tgt.shape[1]}")


def _pairwise_sq_dists(a: Tensor, b: Tensor) -> Tensor:
    d = a.shape[1]
    ones_col = _const(np.ones((d, 1)))
    a2 = matmul(mul(a, a), ones_col)              # [n, 1]
    b2t = transpose(matmul(mul(b, b), ones_col))  # [1, m]
    cross = matmul(a, transpose(b))               # [n, m]
    # clamp the tiny negatives float cancellation can leave
    return relu(sub(add(a2, b2t), scale(cross, 2.0)))


def median_pairwise_distance(z_src: np.ndarray, z_tgt: np.ndarray) -> float:
    """Median distance over distinct pairs of the joint batch; 1.0 if degenerate."""
    joint = np.vstack([np.asarray(z_src, dtype=np.float64),
                       np.asarray(z_tgt, dtype=np.float64)])
    sq = np.sum(joint ** 2, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * joint @ joint.T, 0.0)
    upper = np.sqrt(d2[np.triu_indices(joint.shape[0], k=1)])
    med = float(np.median(upper)) if upper.size else 0.0
    return med if med > 0.0 else 1.0


def _mean_kernel(a: Tensor, b: Tensor, bandwidths: Sequence[float]) -> Tensor:
    d2 = _pairwise_sq_dists(a, b)
    acc = None
    for bw in bandwidths:
        term = exp(scale(d2, -1.0 / (2.0 * bw * bw)))
        acc = term if acc is None else add(acc, term)
    return reduce("mean", acc)


def mmd_distance(z_src: Tensor, z_tgt: Tensor,
                 bandwidths: Optional[Sequence[float]] = None,
                 kernel: str = "rbf") -> Tensor:
    """Squared maximum mean discrepancy (biased estimator) between feature sets.

    With ``kernel="rbf"`` a sum of Gaussian kernels over ``bandwidths`` is
    used (defaults: {0.5,1,2,4} x median pairwise distance of the joint
    batch, frozen per call). ``kernel="linear"`` gives the closed form
    ||mean(z_src) - mean(z_tgt)||^2.
    """
    _check_feature_pair(z_src, z_tgt)
    if kernel == "linear":
        diff = sub(reduce("mean", z_src, axis=0), reduce("mean", z_tgt, axis=0))
        return reduce("sum", mul(diff, diff))
    if kernel != "rbf":
        raise ValueError(f"unknown kernel: {kernel!r}")
    if bandwidths is None:
        med = median_pairwise_distance(z_src.data, z_tgt.data)
        bandwidths = [s * med for s in DEFAULT_BANDWIDTH_SCALES]
    bandwidths = [float(bw) for bw in bandwidths]
    if not bandwidths or any(bw <= 0.0 or not math.isfinite(bw) for bw in bandwidths):
        raise ValueError(f"bandwidths must be positive and finite, got {bandwidths}")
    k_ss = _mean_kernel(z_src, z_src, bandwidths)
    k_tt = _mean_kernel(z_tgt, z_tgt, bandwidths)
    k_st = _mean_kernel(z_src, z_tgt, bandwidths)
    return add(add(k_ss, k_tt), scale(k_st, -2.0))


def coral_distance(z_src: Tensor, z_tgt: Tensor) -> Tensor:
    """Frobenius gap between sample covariances, scaled by 1/(4 d^2)."""
    _check_feature_pair(z_src, z_tgt)
    if z_src.shape[0] < 2 or z_tgt.shape[0] < 2:
        raise ValueError(
            f"need >= 2 rows per side for covariances, got {z_src.shape[0]} and {z_tgt.shape[0]}")
    d = z_src.shape[1]

    def cov(z: Tensor) -> Tensor:
        centered = sub(z, reduce("mean", z, axis=0))
        return scale(matmul(transpose(centered), centered), 1.0 / (z.shape[0] - 1))

    diff = sub(cov(z_src), cov(z_tgt))
    return scale(reduce("sum", mul(diff, diff)), 1.0 / (4.0 * d * d))
