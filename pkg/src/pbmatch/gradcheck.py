"""Randomized gradient verification sweep.

Every differentiable tensor op and every objective term is checked against
central differences on a batch of random instances. The sweep is what the
``pbmatch gradcheck`` subcommand and the numerical acceptance tests run; it
returns per-check worst-case relative errors so a regression in any single
backward rule is attributable by name.

Points are drawn to stay away from the few genuine kinks (relu at zero,
max ties), since a subgradient mismatch there is not a bug.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Callable, Dict, List, Tuple

import numpy as np

from .losses import (
    BatchBundle,
    LossConfig,
    MarginalTracker,
    coral_distance,
    cpbm_loss,
    cross_entropy,
    median_pairwise_distance,
    mim_loss,
    mmd_distance,
    mupbm_loss,
    tpbm_loss,
    total_objective,
)
from .nets import ModelParams, init_params
from .tensor import (
    Tensor,
    add,
    div,
    exp,
    grad_check,
    log,
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

DEFAULT_INSTANCES = 20
DEFAULT_TOL = 1e-4


@dataclass
class CheckResult:
    """Worst case over the random instances of one named check."""

    name: str
    instances: int
    max_rel_error: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol


def _away_from_zero(x: np.ndarray, margin: float = 0.05) -> np.ndarray:
    """Push coordinates out of the +-margin band so kinks stay far away."""
    shift = np.where(x >= 0.0, margin, -margin)
    return np.where(np.abs(x) < margin, x + shift, x)


def _tie_safe(x: np.ndarray, axis) -> np.ndarray:
    """Spread near-ties along the reduced axis so max stays locally linear."""
    moved = np.moveaxis(x, -1 if axis is None else axis, -1)
    flat = moved.reshape(-1, moved.shape[-1]) if axis is not None else moved.reshape(1, -1)
    for row in flat:
        order = np.argsort(row)
        gaps = np.diff(row[order])
        if gaps.size and gaps.min() < 1e-3:
            row[order] += 2e-3 * np.arange(row.size)
    return x


def _rng_logits(rng, n, k, spread=2.0) -> np.ndarray:
    return rng.normal(0.0, spread, (n, k))


# ---------------------------------------------------------------------------
# instance builders: (rng, i) -> (fn, point)
# ---------------------------------------------------------------------------

Builder = Callable[[np.random.Generator, int], Tuple[Callable[[Tensor], Tensor], Tensor]]


def _sum(t: Tensor) -> Tensor:
    return reduce("sum", t)


def _build_add(rng, i):
    b = Tensor(rng.normal(size=(4, 3)))
    w = Tensor(rng.normal(size=(4, 3)))
    return (lambda x: _sum(mul(add(x, b), w))), Tensor(rng.normal(size=(4, 3)))


def _build_sub(rng, i):
    b = Tensor(rng.normal(size=(4, 3)))
    w = Tensor(rng.normal(size=(4, 3)))
    # broadcast on odd instances to exercise the unbroadcast path
    if i % 2:
        b = Tensor(rng.normal(size=(3,)))
    return (lambda x: _sum(mul(sub(x, b), w))), Tensor(rng.normal(size=(4, 3)))


def _build_mul(rng, i):
    b = Tensor(rng.normal(size=(3,)) if i % 2 else rng.normal(size=(4, 3)))
    return (lambda x: _sum(mul(x, b))), Tensor(rng.normal(size=(4, 3)))


def _build_div(rng, i):
    denom = _away_from_zero(rng.normal(size=(4, 3)), 0.5)
    if i % 2:
        # point in the denominator slot
        num = Tensor(rng.normal(size=(4, 3)))
        return (lambda x: _sum(div(num, x))), Tensor(denom)
    return (lambda x: _sum(div(x, Tensor(denom)))), Tensor(rng.normal(size=(4, 3)))


def _build_exp(rng, i):
    w = Tensor(rng.normal(size=(4, 3)))
    return (lambda x: _sum(mul(exp(x), w))), Tensor(rng.normal(0.0, 0.8, (4, 3)))


def _build_log(rng, i):
    w = Tensor(rng.normal(size=(4, 3)))
    point = rng.uniform(0.2, 3.0, (4, 3))
    return (lambda x: _sum(mul(log(x), w))), Tensor(point)


def _build_relu(rng, i):
    w = Tensor(rng.normal(size=(4, 3)))
    point = _away_from_zero(rng.normal(size=(4, 3)))
    return (lambda x: _sum(mul(relu(x), w))), Tensor(point)


def _build_neg(rng, i):
    w = Tensor(rng.normal(size=(4, 3)))
    return (lambda x: _sum(mul(neg(x), w))), Tensor(rng.normal(size=(4, 3)))


def _build_scale(rng, i):
    c = float(rng.normal() * 3.0) or 1.7
    w = Tensor(rng.normal(size=(4, 3)))
    return (lambda x: _sum(mul(scale(x, c), w))), Tensor(rng.normal(size=(4, 3)))


def _build_matmul(rng, i):
    if i % 2:
        a = Tensor(rng.normal(size=(3, 4)))
        return (lambda x: _sum(matmul(a, x))), Tensor(rng.normal(size=(4, 2)))
    b = Tensor(rng.normal(size=(4, 2)))
    return (lambda x: _sum(matmul(x, b))), Tensor(rng.normal(size=(3, 4)))


def _build_transpose(rng, i):
    w = Tensor(rng.normal(size=(3, 4)))
    return (lambda x: _sum(mul(transpose(x), w))), Tensor(rng.normal(size=(4, 3)))


def _build_reduce_sum(rng, i):
    axis = (None, 0, 1)[i % 3]
    w = None if axis is None else Tensor(rng.normal(size=(3,) if axis == 0 else (4,)))
    if axis is None:
        return (lambda x: reduce("sum", x)), Tensor(rng.normal(size=(4, 3)))
    return (lambda x: _sum(mul(reduce("sum", x, axis=axis), w))), Tensor(rng.normal(size=(4, 3)))


def _build_reduce_mean(rng, i):
    axis = (None, 0, 1)[i % 3]
    if axis is None:
        return (lambda x: reduce("mean", x)), Tensor(rng.normal(size=(4, 3)))
    w = Tensor(rng.normal(size=(3,) if axis == 0 else (4,)))
    return (lambda x: _sum(mul(reduce("mean", x, axis=axis), w))), Tensor(rng.normal(size=(4, 3)))


def _build_reduce_max(rng, i):
    axis = (None, 0, 1)[i % 3]
    point = _tie_safe(rng.normal(0.0, 2.0, (4, 3)), axis)
    if axis is None:
        return (lambda x: reduce("max", x)), Tensor(point)
    w = Tensor(rng.normal(size=(3,) if axis == 0 else (4,)))
    return (lambda x: _sum(mul(reduce("max", x, axis=axis), w))), Tensor(point)


def _build_log_softmax(rng, i):
    w = Tensor(rng.normal(size=(4, 3)))
    return (lambda x: _sum(mul(log_softmax(x), w))), Tensor(_rng_logits(rng, 4, 3))


def _build_cross_entropy(rng, i):
    k = 3 + i % 2
    labels = rng.integers(0, k, 5)
    return (lambda x: cross_entropy(x, labels)), Tensor(_rng_logits(rng, 5, k))


def _build_mim(rng, i):
    k = 4
    ceiling = 0.85 * np.log(k)
    if i % 2:
        q = np.full(k, 1.0 / k)             # entropy above ceiling: confidence only
    else:
        q = rng.dirichlet(np.full(k, 0.3))  # usually skewed: both terms active
    momentum = 0.1

    def fn(x: Tensor) -> Tensor:
        tracker = MarginalTracker(q=q.copy(), momentum=momentum)
        return mim_loss(x, tracker, ceiling)

    return fn, Tensor(_rng_logits(rng, 6, k))


def _build_cpbm(rng, i):
    k = 3
    orig = _rng_logits(rng, 5, k)
    aug = _rng_logits(rng, 5, k)
    pa = _rng_logits(rng, 4, k)
    pb = _rng_logits(rng, 4, k)
    mask = np.array([True, False, True, True])
    slot = i % 3
    if slot == 0:
        fn = lambda x: cpbm_loss(x, Tensor(aug), Tensor(pa), Tensor(pb), mask, 0.3)
        point = orig
    elif slot == 1:
        fn = lambda x: cpbm_loss(Tensor(orig), x, Tensor(pa), Tensor(pb), mask, 0.3)
        point = aug
    else:
        fn = lambda x: cpbm_loss(Tensor(orig), Tensor(aug), x, Tensor(pb), mask, 0.3)
        point = pa
    return fn, Tensor(point)


def _build_mupbm(rng, i):
    k = 3
    lam = rng.uniform(0.1, 0.9, (5, 1))
    eye = np.eye(k)
    targets = lam * eye[rng.integers(0, k, 5)] + (1 - lam) * eye[rng.integers(0, k, 5)]
    written = bool(i % 2)
    return (lambda x: mupbm_loss(x, targets, written_direction=written)), \
        Tensor(_rng_logits(rng, 5, k))


def _build_tpbm(rng, i):
    heads = {"rotate90": 4, "vflip": 2}
    vary = ("rotate90", "vflip")[i % 2]
    fixed = {t: Tensor(_rng_logits(rng, 5, c)) for t, c in heads.items() if t != vary}
    labels = {t: rng.integers(0, c, 5) for t, c in heads.items()}

    def fn(x: Tensor) -> Tensor:
        logits = dict(fixed)
        logits[vary] = x
        return tpbm_loss(logits, labels)

    return fn, Tensor(_rng_logits(rng, 5, heads[vary]))


def _mmd_builder(kernel: str) -> Builder:
    def build(rng, i):
        z_s = rng.normal(0.0, 1.0, (6, 4))
        z_t = rng.normal(0.3, 1.1, (5, 4))
        if kernel == "rbf":
            med = median_pairwise_distance(z_s, z_t)
            bws = [s * med for s in (0.5, 1.0, 2.0, 4.0)]
            kw = {"bandwidths": bws, "kernel": "rbf"}
        else:
            kw = {"kernel": "linear"}
        if i % 2:
            return (lambda x: mmd_distance(Tensor(z_s), x, **kw)), Tensor(z_t)
        return (lambda x: mmd_distance(x, Tensor(z_t), **kw)), Tensor(z_s)

    return build


def _build_coral(rng, i):
    z_s = rng.normal(0.0, 1.0, (6, 4))
    z_t = rng.normal(0.3, 1.2, (5, 4))
    if i % 2:
        return (lambda x: coral_distance(Tensor(z_s), x)), Tensor(z_t)
    return (lambda x: coral_distance(x, Tensor(z_t))), Tensor(z_s)


def _build_total(rng, i):
    k = 3
    d = 4
    params = init_params([d, 5, k], seed=int(rng.integers(0, 2**31 - 1)),
                         tasks=("rotate90", "vflip"))
    bundle = BatchBundle(
        src_x=rng.normal(size=(6, d)),
        src_y=rng.integers(0, k, 6),
        tgt_x=rng.normal(size=(6, d)),
        tgt_x_aug=rng.normal(size=(6, d)),
        pair_x_a=rng.normal(size=(4, d)),
        pair_x_b=rng.normal(size=(4, d)),
        pair_diff_mask=np.array([True, True, False, True]),
        mixed_x=rng.normal(size=(5, d)),
        mixed_targets=rng.dirichlet(np.full(k, 1.0), 5),
        st_batches={
            "rotate90": (rng.normal(size=(5, d)), rng.integers(0, 4, 5)),
            "vflip": (rng.normal(size=(5, d)), rng.integers(0, 2, 5)),
        },
    )
    cfg = LossConfig.for_classes(k)
    q0 = rng.dirichlet(np.full(k, 0.5))
    rest = params.phi[1:]
    bias0 = params.phi[0][1]

    def fn(x: Tensor) -> Tensor:
        p = ModelParams(phi=[(x, bias0)] + rest, psi=params.psi,
                        omega=params.omega, layer_spec=params.layer_spec,
                        seed=params.seed, tasks=params.tasks)
        tracker = MarginalTracker(q=q0.copy(), momentum=cfg.marginal_momentum)
        loss, _ = total_objective(bundle, p, cfg, tracker)
        return loss

    return fn, Tensor(params.phi[0][0].data.copy())


CHECKS: Dict[str, Builder] = {
    "op.add": _build_add,
    "op.sub": _build_sub,
    "op.mul": _build_mul,
    "op.div": _build_div,
    "op.exp": _build_exp,
    "op.log": _build_log,
    "op.relu": _build_relu,
    "op.neg": _build_neg,
    "op.scale": _build_scale,
    "op.matmul": _build_matmul,
    "op.transpose": _build_transpose,
    "op.reduce_sum": _build_reduce_sum,
    "op.reduce_mean": _build_reduce_mean,
    "op.reduce_max": _build_reduce_max,
    "op.log_softmax": _build_log_softmax,
    "term.cross_entropy": _build_cross_entropy,
    "term.mim": _build_mim,
    "term.cpbm": _build_cpbm,
    "term.mupbm": _build_mupbm,
    "term.tpbm": _build_tpbm,
    "term.mmd_rbf": _mmd_builder("rbf"),
    "term.mmd_linear": _mmd_builder("linear"),
    "term.coral": _build_coral,
    "term.total": _build_total,
}


def run_gradient_suite(tol: float = DEFAULT_TOL,
                       instances: int = DEFAULT_INSTANCES,
                       seed: int = 0,
                       names=None) -> List[CheckResult]:
    """Run every named check on ``instances`` fresh random instances.

    Returns one result per check with the worst relative error seen. A
    result with ``passed == False`` means some instance's analytic gradient
    disagreed with central differences beyond ``tol``.
    """
    if instances < 1:
        raise ValueError(f"instances must be >= 1, got {instances}")
    selected = CHECKS if names is None else {n: CHECKS[n] for n in names}
    results = []
    for name, build in selected.items():
        rng = np.random.default_rng([seed & 0xFFFFFFFF, zlib.crc32(name.encode())])
        worst = 0.0
        for i in range(instances):
            fn, point = build(rng, i)
            report = grad_check(fn, point, tol=tol)
            worst = max(worst, report.max_rel_error)
        results.append(CheckResult(name=name, instances=instances,
                                   max_rel_error=worst, tol=tol))
    return results


def suite_text(results: List[CheckResult]) -> str:
    """Fixed-width report, one line per check plus a verdict line."""
    lines = []
    for r in results:
        verdict = "ok" if r.passed else "FAIL"
        lines.append(f"{r.name:<22s} n={r.instances:<3d} "
                     f"max_rel_err={r.max_rel_error:.3e}  {verdict}")
    n_fail = sum(not r.passed for r in results)
    lines.append(f"{len(results)} checks, {n_fail} failed")
    return "\n".join(lines)
