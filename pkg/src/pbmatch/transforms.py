"""Image operation families: semantic-preserving, interpolation, semantic-transforming.

All operations act on batches of [0,1]-valued H x W grayscale images and are
deterministic given (seed, sample index): each sample draws from its own
generator seeded by the pair, so serial and parallel application agree.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np

SP_KINDS = ("shift", "small_rotate", "cutout", "brightness", "contrast", "gaussian_noise")
# semantic-preserving subsets used by the consistency objective
RA_KINDS = ("shift", "small_rotate", "cutout", "brightness", "contrast")
NI_KINDS = ("gaussian_noise",)

ST_TASKS = ("rotate90", "vflip", "patch_location")

# magnitude caps for semantic-preserving kinds (full strength)
MAX_SHIFT_PX = 2
MAX_ROTATE_DEG = 15.0
MAX_NOISE_SIGMA = 0.15
MAX_BRIGHTNESS_DELTA = 0.2
MAX_CONTRAST_DELTA = 0.3
CUTOUT_SIDE_FRACTION = 0.25


@dataclass
class ImageBatch:
    """Batch of grayscale images, values in [0,1], shape [batch, H, W]."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3:
            raise ValueError(f"ImageBatch needs [batch, H, W], got shape {self.data.shape}")
        if self.height < 4 or self.width < 4:
            raise ValueError(f"images must be at least 4x4, got {self.height}x{self.width}")
        if self.data.size and (self.data.min() < 0.0 or self.data.max() > 1.0):
            raise ValueError("image values must lie in [0, 1]")

    def __len__(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    def flat(self) -> np.ndarray:
        """Row-major [batch, H*W] view for the MLP input."""
        return self.data.reshape(len(self), -1)


@dataclass
class TransformOp:
    """One drawn operation: family, kind, and its sampled parameters."""

    family: str
    kind: str
    params: Dict[str, float] = field(default_factory=dict)


def _sample_rng(seed: int, index: int) -> np.random.Generator:
    # per-sample stream; (seed, index) fully determines the draw
    return np.random.default_rng([int(seed) & 0xFFFFFFFF, int(index)])


# ---------------------------------------------------------------------------
# semantic-preserving kinds (single image helpers)
# ---------------------------------------------------------------------------

def _shift(img: np.ndarray, dy: int, dx: int) -> np.ndarray:
    if dy == 0 and dx == 0:
        return img
    h, w = img.shape
    padded = np.pad(img, ((abs(dy), abs(dy)), (abs(dx), abs(dx))), mode="edge")
    return padded[abs(dy) - dy:abs(dy) - dy + h, abs(dx) - dx:abs(dx) - dx + w]


def _rotate_nearest(img: np.ndarray, angle_deg: float) -> np.ndarray:
    if angle_deg == 0.0:
        return img
    h, w = img.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    theta = np.deg2rad(angle_deg)
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    yy, xx = np.meshgrid(np.arange(h) - cy, np.arange(w) - cx, indexing="ij")
    # inverse map each output pixel back into the source image
    src_y = cos_t * yy + sin_t * xx + cy
    src_x = -sin_t * yy + cos_t * xx + cx
    iy = np.clip(np.rint(src_y).astype(int), 0, h - 1)
    ix = np.clip(np.rint(src_x).astype(int), 0, w - 1)
    return img[iy, ix]


def _cutout(img: np.ndarray, top: int, left: int, side: int) -> np.ndarray:
    if side <= 0:
        return img
    out = img.copy()
    out[top:top + side, left:left + side] = 0.0
    return out


def _apply_sp_op(img: np.ndarray, op: TransformOp) -> np.ndarray:
    p = op.params
    if op.kind == "shift":
        return _shift(img, int(p["dy"]), int(p["dx"]))
    if op.kind == "small_rotate":
        return _rotate_nearest(img, p["angle_deg"])
    if op.kind == "cutout":
        return _cutout(img, int(p["top"]), int(p["left"]), int(p["side"]))
    if op.kind == "brightness":
        return img + p["delta"]
    if op.kind == "contrast":
        mean = img.mean()
        return (img - mean) * p["factor"] + mean
    if op.kind == "gaussian_noise":
        rng = np.random.default_rng(int(p["noise_seed"]))
        return img + rng.normal(0.0, p["sigma"], img.shape)
    raise ValueError(f"unknown semantic-preserving kind: {op.kind!r}")


def draw_sp_ops(seed: int, index: int, h: int, w: int,
                kinds: Sequence[str] = SP_KINDS, strength: float = 1.0) -> list:
    """Draw the 1-2 op composition one sample will receive."""
    for k in kinds:
        if k not in SP_KINDS:
            raise ValueError(f"unknown semantic-preserving kind: {k!r}")
    rng = _sample_rng(seed, index)
    n_ops = int(rng.integers(1, 3)) if len(kinds) > 1 else 1
    chosen = rng.choice(len(kinds), size=min(n_ops, len(kinds)), replace=False)
    ops = []
    for ci in chosen:
        kind = kinds[int(ci)]
        if kind == "shift":
            m = int(round(MAX_SHIFT_PX * strength))
            params = {"dy": float(rng.integers(-m, m + 1)), "dx": float(rng.integers(-m, m + 1))}
        elif kind == "small_rotate":
            params = {"angle_deg": float(rng.uniform(-MAX_ROTATE_DEG, MAX_ROTATE_DEG) * strength)}
        elif kind == "cutout":
            side = int(round(CUTOUT_SIDE_FRACTION * min(h, w) * strength))
            top = int(rng.integers(0, max(h - side, 0) + 1))
            left = int(rng.integers(0, max(w - side, 0) + 1))
            params = {"top": float(top), "left": float(left), "side": float(side)}
        elif kind == "brightness":
            params = {"delta": float(rng.uniform(-MAX_BRIGHTNESS_DELTA, MAX_BRIGHTNESS_DELTA) * strength)}
        elif kind == "contrast":
            params = {"factor": 1.0 + float(rng.uniform(-MAX_CONTRAST_DELTA, MAX_CONTRAST_DELTA) * strength)}
        else:  # gaussian_noise
            params = {"sigma": float(rng.uniform(0.02, MAX_NOISE_SIGMA) * strength),
                      "noise_seed": float(rng.integers(0, 2**31))}
        ops.append(TransformOp(family="semantic_preserving", kind=kind, params=params))
    return ops


def apply_semantic_preserving(x: ImageBatch, seed: int,
                              kinds: Sequence[str] = SP_KINDS,
                              strength: float = 1.0) -> ImageBatch:
    """Per-sample random composition of 1-2 kinds; output clamped to [0,1]."""
    if strength == 0.0:
        return ImageBatch(x.data.copy())
    out = np.empty_like(x.data)
    for i in range(len(x)):
        img = x.data[i]
        for op in draw_sp_ops(seed, i, x.height, x.width, kinds, strength):
            img = _apply_sp_op(img, op)
        out[i] = np.clip(img, 0.0, 1.0)
    return ImageBatch(out)


# ---------------------------------------------------------------------------
# interpolation
# ---------------------------------------------------------------------------

def sample_mixup_beta(n: int, alpha: float, rng: np.random.Generator) -> np.ndarray:
    """Per-pair mixing weights from a symmetric Beta(alpha, alpha)."""
    if alpha <= 0:
        raise ValueError("mixup concentration must be positive")
    return rng.beta(alpha, alpha, size=n)


def mixup_interpolate(x: ImageBatch, x2: ImageBatch,
                      y: np.ndarray, y2: np.ndarray,
                      beta: Union[float, np.ndarray]) -> Tuple[ImageBatch, np.ndarray]:
    """Exact convex combination of two batches and their label distributions.

    ``beta`` may be a scalar or one weight per pair; mixed labels stay
    probability vectors.
    """
    if x.data.shape != x2.data.shape:
        raise ValueError(f"image shapes differ: {x.data.shape} vs {x2.data.shape}")
    y = np.asarray(y, dtype=np.float64)
    y2 = np.asarray(y2, dtype=np.float64)
    if y.shape != y2.shape or y.ndim != 2 or y.shape[0] != len(x):
        raise ValueError(f"label shapes invalid: {y.shape} vs {y2.shape} for batch {len(x)}")
    b = np.asarray(beta, dtype=np.float64)
    if np.any(b < 0.0) or np.any(b > 1.0):
        raise ValueError(f"beta must lie in [0,1], got {beta}")
    b_img = b.reshape(-1, 1, 1) if b.ndim else b
    b_lab = b.reshape(-1, 1) if b.ndim else b
    mixed_x = b_img * x.data + (1.0 - b_img) * x2.data
    mixed_y = b_lab * y + (1.0 - b_lab) * y2
    return ImageBatch(mixed_x), mixed_y


# ---------------------------------------------------------------------------
# semantic-transforming tasks
# ---------------------------------------------------------------------------

def rotate90_cw(img: np.ndarray, k: int) -> np.ndarray:
    """k clockwise quarter-turns."""
    return np.rot90(img, -int(k) % 4)


def vflip(img: np.ndarray, b: int) -> np.ndarray:
    """b in {0,1} vertical flips (upside down)."""
    return img[::-1].copy() if b % 2 else img.copy()


def extract_quadrant(img: np.ndarray, q: int) -> np.ndarray:
    """Paste quadrant q at the canvas origin, zero elsewhere.

    Quadrants are indexed row-major: 0 top-left, 1 top-right,
    2 bottom-left, 3 bottom-right.
    """
    h, w = img.shape
    if h % 2 or w % 2:
        raise ValueError(f"patch_location needs even dimensions, got {h}x{w}")
    hh, hw = h // 2, w // 2
    top = (q // 2) * hh
    left = (q % 2) * hw
    out = np.zeros_like(img)
    out[:hh, :hw] = img[top:top + hh, left:left + hw]
    return out


def apply_semantic_transforming(x: ImageBatch, task: str,
                                seed: int) -> Tuple[ImageBatch, np.ndarray]:
    """Apply the pretext task per sample; returns transformed images and labels.

    Labels come from one task-salted stream, so sample i's label depends
    only on (seed, task, i) and each task sees a different sequence.
    """
    if task not in ST_TASKS:
        raise ValueError(f"unknown semantic-transforming task: {task!r}")
    if task == "rotate90" and x.height != x.width:
        raise ValueError(f"rotate90 needs square images, got {x.height}x{x.width}")
    if task == "patch_location" and (x.height % 2 or x.width % 2):
        raise ValueError(f"patch_location needs even dimensions, got {x.height}x{x.width}")
    n_classes = {"rotate90": 4, "vflip": 2, "patch_location": 4}[task]
    salt = ST_TASKS.index(task) + 101
    rng = np.random.default_rng([int(seed) & 0xFFFFFFFF, salt])
    labels = rng.integers(0, n_classes, len(x)).astype(np.int64)
    out = np.empty_like(x.data)
    for i in range(len(x)):
        label = int(labels[i])
        if task == "rotate90":
            out[i] = rotate90_cw(x.data[i], label)
        elif task == "vflip":
            out[i] = vflip(x.data[i], label)
        else:
            out[i] = extract_quadrant(x.data[i], label)
    return ImageBatch(out), labels
