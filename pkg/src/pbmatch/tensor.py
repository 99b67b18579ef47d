"""Minimal reverse-mode autodiff over dense float64 arrays.

Every differentiable value is a :class:`Tensor` wrapping a numpy array.
Operations record their inputs and a backward rule on the result node;
``backward`` linearizes the recorded graph in topological order (inputs
before consumers) and replays it exactly once, accumulating ``dLoss/dLeaf``
into every ``requires_grad`` tensor. Gradients accumulate across calls
(+=); callers zero them explicitly, so multi-term objectives compose by
summation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

ArrayLike = Union[np.ndarray, float, int, Sequence]


class Tensor:
    """Dense n-dimensional float64 value with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_rule")

    def __init__(self, data: ArrayLike, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        # parents kept as a tuple so replay order is deterministic
        self._parents: tuple = ()
        # rule maps the incoming gradient to one gradient per parent
        self._rule: Optional[Callable[[np.ndarray], tuple]] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    # -- operator sugar; everything dispatches through the module-level ops --
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _wrap(other))

    def sum(self, axis: Optional[int] = None):
        return reduce("sum", self, axis)

    def mean(self, axis: Optional[int] = None):
        return reduce("mean", self, axis)

    def max(self, axis: Optional[int] = None):
        return reduce("max", self, axis)

    def backward(self) -> None:
        backward(self)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_broadcast(a_shape: tuple, b_shape: tuple) -> None:
    # trailing-dimension broadcasting only, numpy semantics
    for da, db in zip(reversed(a_shape), reversed(b_shape)):
        if da != db and da != 1 and db != 1:
            raise ValueError(f"shapes not broadcast-compatible: {a_shape} vs {b_shape}")


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum out broadcast dimensions so grad matches an input's shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _tracked(t: Tensor) -> bool:
    return t.requires_grad or t._rule is not None


def _node(data: np.ndarray, parents: tuple, rule: Callable[[np.ndarray], tuple]) -> Tensor:
    """Build a result tensor, recording the backward rule iff any input is tracked."""
    out = Tensor(data)
    if any(_tracked(p) for p in parents):
        out._parents = parents
        out._rule = rule
    return out


# ---------------------------------------------------------------------------
# elementwise ops
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a.shape, b.shape)

    def rule(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(a.data + b.data, (a, b), rule)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a.shape, b.shape)

    def rule(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _node(a.data - b.data, (a, b), rule)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a.shape, b.shape)

    def rule(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _node(a.data * b.data, (a, b), rule)


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a.shape, b.shape)
    if np.any(b.data == 0.0):
        raise ValueError("division by zero")

    def rule(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return _node(a.data / b.data, (a, b), rule)


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def rule(g):
        return (g * out_data,)

    return _node(out_data, (a,), rule)


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0.0):
        raise ValueError("log of non-positive value")

    def rule(g):
        return (g / a.data,)

    return _node(np.log(a.data), (a,), rule)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0.0

    def rule(g):
        return (g * mask,)

    return _node(np.where(mask, a.data, 0.0), (a,), rule)


def neg(a: Tensor) -> Tensor:
    def rule(g):
        return (-g,)

    return _node(-a.data, (a,), rule)


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a Python constant (no gradient w.r.t. c)."""
    c = float(c)

    def rule(g):
        return (g * c,)

    return _node(a.data * c, (a,), rule)


_ELEMENTWISE_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}
_ELEMENTWISE_UNARY = {"exp": exp, "log": log, "relu": relu, "neg": neg}


def elementwise(op_kind: str, a: Tensor, b: Optional[Tensor] = None,
                c: Optional[float] = None) -> Tensor:
    """Dispatch over the elementwise kinds; ``scale`` takes its constant via ``c``."""
    if op_kind in _ELEMENTWISE_BINARY:
        if b is None:
            raise ValueError(f"{op_kind} requires a second operand")
        return _ELEMENTWISE_BINARY[op_kind](a, b)
    if op_kind in _ELEMENTWISE_UNARY:
        if b is not None:
            raise ValueError(f"{op_kind} is unary")
        return _ELEMENTWISE_UNARY[op_kind](a)
    if op_kind == "scale":
        if c is None:
            raise ValueError("scale requires the constant c")
        return scale(a, c)
    raise ValueError(f"unknown elementwise op kind: {op_kind!r}")


# ---------------------------------------------------------------------------
# matmul / reduce / log_softmax
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul needs rank-2 inputs, got ranks {a.ndim} and {b.ndim}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul inner dimensions differ: {a.shape} vs {b.shape}")

    def rule(g):
        return g @ b.data.T, a.data.T @ g

    return _node(a.data @ b.data, (a, b), rule)


def transpose(a: Tensor) -> Tensor:
    """Rank-2 transpose; lets losses form cross terms like zᵀz."""
    if a.ndim != 2:
        raise ValueError(f"transpose needs a rank-2 input, got rank {a.ndim}")

    def rule(g):
        return (g.T.copy(),)

    return _node(a.data.T.copy(), (a,), rule)


def reduce(op_kind: str, a: Tensor, axis: Optional[int] = None) -> Tensor:
    if axis is not None and not (0 <= axis < a.ndim):
        raise ValueError(f"axis {axis} out of range for rank {a.ndim}")

    if op_kind == "sum":
        def rule(g):
            expanded = g if axis is None else np.expand_dims(g, axis)
            return (np.broadcast_to(expanded, a.shape).copy(),)

        return _node(a.data.sum(axis=axis), (a,), rule)

    if op_kind == "mean":
        n = a.data.size if axis is None else a.shape[axis]

        def rule(g):
            expanded = g if axis is None else np.expand_dims(g, axis)
            return (np.broadcast_to(expanded, a.shape).copy() / n,)

        return _node(a.data.mean(axis=axis), (a,), rule)

    if op_kind == "max":
        # gradient routed to the first argmax along the reduced extent
        if axis is None:
            flat_idx = int(a.data.argmax())

            def rule(g):
                buf = np.zeros_like(a.data)
                buf.reshape(-1)[flat_idx] = g
                return (buf,)

        else:
            arg = np.expand_dims(a.data.argmax(axis=axis), axis)

            def rule(g):
                buf = np.zeros_like(a.data)
                np.put_along_axis(buf, arg, np.expand_dims(g, axis), axis)
                return (buf,)

        return _node(a.data.max(axis=axis), (a,), rule)

    raise ValueError(f"unknown reduce op kind: {op_kind!r}")


def log_softmax(logits: Tensor) -> Tensor:
    """Row-wise log-softmax over [batch, K] logits, stabilized by max-subtraction."""
    if logits.ndim != 2:
        raise ValueError(f"log_softmax needs a [batch, K] tensor, got shape {logits.shape}")
    if logits.shape[1] < 2:
        raise ValueError("log_softmax needs at least 2 classes")
    z = logits.data
    shifted = z - z.max(axis=1, keepdims=True)
    out_data = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    softmax = np.exp(out_data)

    def rule(g):
        return (g - softmax * g.sum(axis=1, keepdims=True),)

    return _node(out_data, (logits,), rule)


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------

def _linearize(root: Tensor) -> list:
    """Topologically order the recorded graph (inputs before consumers)."""
    order: list = []
    visited: set = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        # push reversed so replay preserves left-to-right parent order
        for p in reversed(node._parents):
            if id(p) not in visited:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate dLoss/dLeaf into every requires_grad tensor in the graph.

    Incoming gradients are gathered in a per-call table, so each recorded
    operation's rule fires exactly once and repeated backward calls add up
    without double-counting earlier passes.
    """
    if loss.shape != ():
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    order = _linearize(loss)
    incoming: dict = {id(loss): np.ones(())}
    for node in reversed(order):
        g = incoming.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad += g
        if node._rule is None:
            continue
        parent_grads = node._rule(np.asarray(g, dtype=np.float64))
        for p, pg in zip(node._parents, parent_grads):
            if not _tracked(p):
                continue
            key = id(p)
            if key in incoming:
                incoming[key] = incoming[key] + pg
            else:
                incoming[key] = pg


def zero_grads(tensors) -> None:
    for t in tensors:
        t.zero_grad()


# ---------------------------------------------------------------------------
# gradient verification
# ---------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    """Per-coordinate analytic vs central-difference comparison."""

    analytic: np.ndarray
    numeric: np.ndarray
    max_rel_error: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol

    def __str__(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return (f"grad_check: max relative error {self.max_rel_error:.3e} "
                f"vs tol {self.tol:.1e} -> {verdict}")


def grad_check(fn: Callable[[Tensor], Tensor], point: Tensor,
               step: float = 1e-5, tol: float = 1e-4) -> GradCheckReport:
    """Compare the analytic gradient of a scalar-valued fn against central differences.

    Relative error per coordinate uses max(|analytic|, |numeric|, 1e-6) as the
    denominator so near-zero coordinates are judged on absolute error.
    """
    x = Tensor(point.data.copy(), requires_grad=True)
    out = fn(x)
    if out.shape != ():
        raise ValueError("grad_check requires a scalar-valued function")
    if not np.isfinite(out.data):
        raise ValueError("function value is not finite at the given point")
    backward(out)
    analytic = x.grad.copy() if x.grad is not None else np.zeros_like(x.data)

    numeric = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    num_flat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        f_plus = float(fn(Tensor(x.data)).data)
        flat[i] = orig - step
        f_minus = float(fn(Tensor(x.data)).data)
        flat[i] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise ValueError("function value is not finite near the given point")
        num_flat[i] = (f_plus - f_minus) / (2.0 * step)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-6)
    max_rel = float(np.max(np.abs(analytic - numeric) / denom)) if flat.size else 0.0
    return GradCheckReport(analytic=analytic, numeric=numeric,
                           max_rel_error=max_rel, tol=tol)
