"""MLP predictive model: shared feature extractor, label head, auxiliary heads.

The feature extractor maps flattened images to a latent vector through
ReLU dense layers; the label head and each pretext-task head are single
dense layers on the latent. All heads share the extractor parameters, so
a step driven by any head moves the shared trunk.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from pbmatch.tensor import Tensor, matmul, relu

# pretext task identifier -> number of prediction classes
TASK_CLASSES = {"rotate90": 4, "vflip": 2, "patch_location": 4}

DEFAULT_HIDDEN = (128, 64)


@dataclass
class ModelParams:
    """Parameters of the feature extractor (phi), label head (psi), and task heads (omega)."""

    phi: List[Tuple[Tensor, Tensor]]
    psi: Tuple[Tensor, Tensor]
    omega: Dict[str, Tuple[Tensor, Tensor]]
    layer_spec: List[int]
    seed: int
    tasks: Tuple[str, ...]

    @property
    def input_dim(self) -> int:
        return self.layer_spec[0]

    @property
    def latent_dim(self) -> int:
        return self.layer_spec[-2]

    @property
    def n_classes(self) -> int:
        return self.layer_spec[-1]

    def all_tensors(self) -> List[Tensor]:
        """Every parameter tensor in declaration order: phi, psi, then task heads."""
        out: List[Tensor] = []
        for w, b in self.phi:
            out.extend([w, b])
        out.extend(self.psi)
        for task in self.tasks:
            out.extend(self.omega[task])
        return out

    def head_tensors(self, head: str) -> List[Tensor]:
        if head == "label":
            return list(self.psi)
        if head in self.omega:
            return list(self.omega[head])
        raise ValueError(f"unknown head: {head!r}")

    def zero_grads(self) -> None:
        for t in self.all_tensors():
            t.zero_grad()


def _dense_init(rng: np.random.Generator, fan_in: int, fan_out: int) -> Tuple[Tensor, Tensor]:
    # Kaiming-style fan-in scaling: uniform with std sqrt(2/fan_in)
    limit = np.sqrt(6.0 / fan_in)
    w = Tensor(rng.uniform(-limit, limit, (fan_in, fan_out)), requires_grad=True)
    b = Tensor(np.zeros(fan_out), requires_grad=True)
    return w, b


def init_params(spec: Sequence[int], seed: int,
                tasks: Sequence[str] = ("rotate90", "vflip", "patch_location")) -> ModelParams:
    """Build model parameters for a layer-size chain like [256, 128, 64, K].

    All sizes through the latent belong to the extractor; the final pair is
    the label head. Auxiliary heads map the latent to each task's classes.
    Deterministic in the seed.
    """
    spec = [int(s) for s in spec]
    if len(spec) < 2:
        raise ValueError("layer spec needs at least input and output sizes")
    if any(s < 1 for s in spec):
        raise ValueError(f"all layer sizes must be >= 1, got {spec}")
    for task in tasks:
        if task not in TASK_CLASSES:
            raise ValueError(f"unknown task: {task!r}")

    rng = np.random.default_rng(seed)
    phi = [_dense_init(rng, spec[i], spec[i + 1]) for i in range(len(spec) - 2)]
    psi = _dense_init(rng, spec[-2], spec[-1])
    omega = {task: _dense_init(rng, spec[-2], TASK_CLASSES[task]) for task in tasks}
    return ModelParams(phi=phi, psi=psi, omega=omega, layer_spec=spec,
                       seed=int(seed), tasks=tuple(tasks))


def clone_params(params: ModelParams) -> ModelParams:
    """Deep-copy parameters so further training leaves the original intact."""
    def pair(p: Tuple[Tensor, Tensor]) -> Tuple[Tensor, Tensor]:
        return (Tensor(p[0].data.copy(), requires_grad=p[0].requires_grad),
                Tensor(p[1].data.copy(), requires_grad=p[1].requires_grad))

    return ModelParams(phi=[pair(p) for p in params.phi], psi=pair(params.psi),
                       omega={t: pair(p) for t, p in params.omega.items()},
                       layer_spec=list(params.layer_spec), seed=params.seed,
                       tasks=params.tasks)


def features(params: ModelParams, x: Tensor) -> Tensor:
    """Latent representation g(x); ReLU after every extractor layer."""
    if x.ndim != 2 or x.shape[1] != params.input_dim:
        raise ValueError(f"input width {x.shape} does not match input dim {params.input_dim}")
    h = x
    for w, b in params.phi:
        h = relu(matmul(h, w) + b)
    return h


def forward(params: ModelParams, x: Tensor, head: str = "label") -> Tensor:
    """Logits of the requested head applied to g(x), recorded for backward."""
    z = features(params, x)
    if head == "label":
        w, b = params.psi
    elif head in params.omega:
        w, b = params.omega[head]
    else:
        raise ValueError(f"unknown head: {head!r} (have label, {', '.join(params.omega)})")
    return matmul(z, w) + b


def predict_logits(params: ModelParams, x: np.ndarray, head: str = "label") -> np.ndarray:
    """Tape-free inference path over plain arrays (evaluation, pseudo-targets)."""
    h = np.asarray(x, dtype=np.float64)
    if h.ndim != 2 or h.shape[1] != params.input_dim:
        raise ValueError(f"input width {h.shape} does not match input dim {params.input_dim}")
    for w, b in params.phi:
        h = np.maximum(h @ w.data + b.data, 0.0)
    if head == "label":
        w, b = params.psi
    elif head in params.omega:
        w, b = params.omega[head]
    else:
        raise ValueError(f"unknown head: {head!r}")
    return h @ w.data + b.data


def softmax_probs(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# optimizers
# ---------------------------------------------------------------------------

@dataclass
class OptimState:
    """SGD-with-momentum or Adam state over a fixed parameter list."""

    kind: str = "adam"
    lr: float = 1e-3
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-5
    step_count: int = 0
    _m: List[np.ndarray] = field(default_factory=list)
    _v: List[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in ("sgd_momentum", "adam"):
            raise ValueError(f"unknown optimizer kind: {self.kind!r}")
        if self.weight_decay < 0:
            raise ValueError("weight decay must be >= 0")


def step(params: ModelParams, opt: OptimState) -> None:
    """Apply one optimizer update from the accumulated gradients.

    Gradients are left untouched; the caller zeroes them.
    """
    tensors = params.all_tensors()
    if all(t.grad is None for t in tensors):
        raise ValueError("no parameter has a gradient; run backward first")
    if not opt._m:
        opt._m = [np.zeros_like(t.data) for t in tensors]
        opt._v = [np.zeros_like(t.data) for t in tensors]
    opt.step_count += 1
    t_count = opt.step_count
    for i, t in enumerate(tensors):
        # heads untouched by the current objective carry no gradient; skip them
        if t.grad is None:
            continue
        g = t.grad
        if opt.weight_decay > 0:
            g = g + opt.weight_decay * t.data
        if opt.kind == "sgd_momentum":
            opt._m[i] = opt.momentum * opt._m[i] + g
            t.data -= opt.lr * opt._m[i]
        else:
            opt._m[i] = opt.beta1 * opt._m[i] + (1 - opt.beta1) * g
            opt._v[i] = opt.beta2 * opt._v[i] + (1 - opt.beta2) * g * g
            m_hat = opt._m[i] / (1 - opt.beta1 ** t_count)
            v_hat = opt._v[i] / (1 - opt.beta2 ** t_count)
            t.data -= opt.lr * m_hat / (np.sqrt(v_hat) + opt.eps)


# ---------------------------------------------------------------------------
# checkpoint file: one JSON header line, then raw little-endian float64 blob
# ---------------------------------------------------------------------------

def save_checkpoint(path, params: ModelParams, step_count: int = 0) -> None:
    header = {
        "layer_spec": params.layer_spec,
        "seed": params.seed,
        "tasks": list(params.tasks),
        "step_count": int(step_count),
    }
    with open(path, "wb") as f:
        f.write(json.dumps(header).encode("utf-8"))
        f.write(b"\n")
        for t in params.all_tensors():
            f.write(t.data.astype("<f8").tobytes())


def load_checkpoint(path) -> Tuple[ModelParams, int]:
    with open(path, "rb") as f:
        header = json.loads(f.readline().decode("utf-8"))
        blob = f.read()
    params = init_params(header["layer_spec"], header["seed"], tasks=header["tasks"])
    flat = np.frombuffer(blob, dtype="<f8")
    offset = 0
    for t in params.all_tensors():
        n = t.data.size
        t.data = flat[offset:offset + n].reshape(t.data.shape).astype(np.float64)
        offset += n
    if offset != flat.size:
        raise ValueError(f"checkpoint blob has {flat.size} values, expected {offset}")
    return params, int(header["step_count"])
