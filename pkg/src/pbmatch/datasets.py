"""Deterministic synthetic domain pairs.

Two families: 16x16 procedural glyph images whose rendering knobs create a
controllable domain gap, and 2-D Gaussian blob pairs with identical
class-conditionals but different label priors (pure label shift). Both
regenerate bit-identically from their recorded metadata; pixel values are
quantized to 32-bit float precision at generation time so the on-disk
format round-trips exactly.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .transforms import ImageBatch

CANVAS = 16
INK_LEVEL = 0.95
MAX_CLASSES = 6
MAX_SUB_STYLES = 4
DOMAIN_ROLES = ("source", "target")
OUTLIER_LABEL = -1
OUTLIER_STYLES = ("blank", "checker", "inverted_random")


def _quantize(x: np.ndarray) -> np.ndarray:
    """Round to exactly representable 32-bit values (disk format precision)."""
    return x.astype(np.float32).astype(np.float64)


# ---------------------------------------------------------------------------
# containers
# ---------------------------------------------------------------------------

@dataclass
class DomainDataset:
    """Labeled sample collection for one side of a domain pair.

    ``images`` holds an ImageBatch for glyph data or an [n, 2] point array
    for blob data. Label -1 marks outlier rows with no valid class (they are
    excluded from accuracy denominators).
    """

    images: Union[ImageBatch, np.ndarray]
    labels: np.ndarray
    class_count: int
    domain_role: str
    sublabels: Optional[np.ndarray] = None
    metadata: Dict = field(default_factory=dict)

    def __post_init__(self):
        if self.domain_role not in DOMAIN_ROLES:
            raise ValueError(f"domain_role must be one of {DOMAIN_ROLES}, got {self.domain_role!r}")
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.ndim != 1 or self.labels.shape[0] != self.n_samples:
            raise ValueError(
                f"labels shape {self.labels.shape} does not match {self.n_samples} samples")
        if self.labels.size and (self.labels.min() < OUTLIER_LABEL
                                 or self.labels.max() >= self.class_count):
            raise ValueError(
                f"labels must lie in [-1, {self.class_count}), got "
                f"{self.labels.min()}..{self.labels.max()}")
        if self.sublabels is not None:
            self.sublabels = np.asarray(self.sublabels, dtype=np.int64)
            if self.sublabels.shape != self.labels.shape:
                raise ValueError("sublabels must align with labels")
            for sub in np.unique(self.sublabels):
                owners = np.unique(self.labels[self.sublabels == sub])
                if owners.size != 1:
                    raise ValueError(
                        f"sublabel {sub} maps to several labels: {owners.tolist()}")

    @property
    def is_image(self) -> bool:
        return isinstance(self.images, ImageBatch)

    @property
    def n_samples(self) -> int:
        return len(self.images) if self.is_image else self.images.shape[0]

    def x_flat(self) -> np.ndarray:
        """Row-major [n, D] feature view (pixels or point coordinates)."""
        return self.images.flat() if self.is_image else np.asarray(self.images)

    def take(self, indices: np.ndarray) -> "DomainDataset":
        """Row subset in the given order; metadata is carried over."""
        indices = np.asarray(indices)
        data = (ImageBatch(self.images.data[indices]) if self.is_image
                else self.images[indices])
        return DomainDataset(
            images=data, labels=self.labels[indices],
            class_count=self.class_count, domain_role=self.domain_role,
            sublabels=None if self.sublabels is None else self.sublabels[indices],
            metadata=dict(self.metadata))


@dataclass(frozen=True)
class GlyphDomainSpec:
    """Rendering recipe for one glyph domain; knobs carry the domain shift."""

    n_classes: int = 4
    sub_styles: int = 2
    samples_per_class: int = 100
    stroke_thickness: int = 1
    background: float = 0.1
    invert: bool = False
    noise: float = 0.05
    jitter: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not (2 <= self.n_classes <= MAX_CLASSES):
            raise ValueError(f"n_classes must lie in [2, {MAX_CLASSES}], got {self.n_classes}")
        if not (1 <= self.sub_styles <= MAX_SUB_STYLES):
            raise ValueError(f"sub_styles must lie in [1, {MAX_SUB_STYLES}], got {self.sub_styles}")
        if self.samples_per_class < 1:
            raise ValueError("samples_per_class must be >= 1")
        if not (1 <= self.stroke_thickness <= 3):
            raise ValueError(f"stroke_thickness must lie in [1, 3], got {self.stroke_thickness}")
        if not (0.0 <= self.background <= 0.5):
            raise ValueError(f"background must lie in [0, 0.5], got {self.background}")
        if not (0.0 <= self.noise <= 0.3):
            raise ValueError(f"noise must lie in [0, 0.3], got {self.noise}")
        if not (0.0 <= self.jitter <= 3.0):
            raise ValueError(f"jitter must lie in [0, 3], got {self.jitter}")

    def to_dict(self) -> Dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: Dict) -> "GlyphDomainSpec":
        return cls(**d)


# ---------------------------------------------------------------------------
# glyph rendering
# ---------------------------------------------------------------------------

_ROWS, _COLS = np.meshgrid(np.arange(CANVAS, dtype=np.float64),
                           np.arange(CANVAS, dtype=np.float64), indexing="ij")


def _segment_mask(r0, c0, r1, c1, thickness) -> np.ndarray:
    """Pixels within thickness/2 of the segment (crisp stroke)."""
    dr, dc = r1 - r0, c1 - c0
    length_sq = dr * dr + dc * dc
    if length_sq == 0.0:
        dist = np.hypot(_ROWS - r0, _COLS - c0)
    else:
        t = np.clip(((_ROWS - r0) * dr + (_COLS - c0) * dc) / length_sq, 0.0, 1.0)
        dist = np.hypot(_ROWS - (r0 + t * dr), _COLS - (c0 + t * dc))
    return dist <= thickness / 2.0 + 0.1


def _circle_mask(cr, cc, radius, thickness) -> np.ndarray:
    dist = np.hypot(_ROWS - cr, _COLS - cc)
    return np.abs(dist - radius) <= thickness / 2.0 + 0.1


# per-class stroke templates: line segments (r0,c0,r1,c1) and circles (cr,cc,rad)
_TEMPLATES: List[Tuple[List[Tuple[float, float, float, float]],
                       List[Tuple[float, float, float]]]] = [
    ([(3, 7.5, 12, 7.5), (7.5, 3, 7.5, 12)], []),            # cross
    ([(3, 4, 12, 4), (12, 4, 12, 11)], []),                  # corner
    ([], [(7.5, 7.5, 4.0)]),                                 # ring
    ([(3, 3, 12, 12)], []),                                  # slash
    ([(3, 3, 3, 12), (3, 7.5, 12, 7.5)], []),                # tee
    ([(3, 4, 12, 7.5), (3, 11, 12, 7.5)], []),               # vee
]


def _render_glyph_mask(class_idx: int, style: int, thickness: int) -> np.ndarray:
    segments, circles = _TEMPLATES[class_idx]
    mask = np.zeros((CANVAS, CANVAS), dtype=bool)
    for r0, c0, r1, c1 in segments:
        mask |= _segment_mask(r0, c0, r1, c1, thickness)
    for cr, cc, rad in circles:
        mask |= _circle_mask(cr, cc, rad, thickness)
    if style == 1:
        # serif: short caps across every segment endpoint; a tick on rings
        for r0, c0, r1, c1 in segments:
            for r, c in ((r0, c0), (r1, c1)):
                mask |= _segment_mask(r, c - 1.5, r, c + 1.5, thickness)
        for cr, cc, rad in circles:
            mask |= _segment_mask(cr - rad - 1.5, cc, cr - rad + 1.5, cc, thickness)
    elif style == 2:
        # double stroke: echo the glyph two pixels to the right
        echo = np.zeros_like(mask)
        echo[:, 2:] = mask[:, :-2]
        mask = mask | echo
    elif style == 3:
        # stippled stroke: keep pixels of one checker parity
        mask = mask & (((_ROWS + _COLS).astype(int) % 2) == 0)
    return mask


def _shift_mask(mask: np.ndarray, dy: int, dx: int) -> np.ndarray:
    out = np.zeros_like(mask)
    src_r = slice(max(0, -dy), CANVAS - max(0, dy))
    dst_r = slice(max(0, dy), CANVAS - max(0, -dy))
    src_c = slice(max(0, -dx), CANVAS - max(0, dx))
    dst_c = slice(max(0, dx), CANVAS - max(0, -dx))
    out[dst_r, dst_c] = mask[src_r, src_c]
    return out


def generate_glyph_domain(spec: GlyphDomainSpec, domain_role: str) -> DomainDataset:
    """Render one glyph domain: balanced classes, round-robin sub-styles."""
    k, s = spec.n_classes, spec.sub_styles
    n = k * spec.samples_per_class
    base_masks = {(c, st): _render_glyph_mask(c, st, spec.stroke_thickness)
                  for c in range(k) for st in range(s)}
    images = np.empty((n, CANVAS, CANVAS))
    labels = np.empty(n, dtype=np.int64)
    sublabels = np.empty(n, dtype=np.int64)
    jit = int(round(spec.jitter))
    idx = 0
    for c in range(k):
        for i in range(spec.samples_per_class):
            style = i % s
            rng = np.random.default_rng([spec.seed & 0xFFFFFFFF, idx])
            mask = base_masks[(c, style)]
            if jit > 0:
                dy, dx = rng.integers(-jit, jit + 1, 2)
                mask = _shift_mask(mask, int(dy), int(dx))
            img = np.where(mask, INK_LEVEL, spec.background)
            if spec.invert:
                img = 1.0 - img
            if spec.noise > 0.0:
                img = img + rng.normal(0.0, spec.noise, img.shape)
            images[idx] = np.clip(img, 0.0, 1.0)
            labels[idx] = c
            sublabels[idx] = c * s + style
            idx += 1
    return DomainDataset(
        images=ImageBatch(_quantize(images)), labels=labels,
        class_count=k, domain_role=domain_role, sublabels=sublabels,
        metadata={"generator": "glyph", "spec": spec.to_dict(),
                  "domain_role": domain_role})


def generate_glyph_pair(src_spec: GlyphDomainSpec,
                        tgt_spec: GlyphDomainSpec) -> Tuple[DomainDataset, DomainDataset]:
    """Source and target glyph domains; shapes must agree so only the
    rendering knobs differ."""
    if src_spec.n_classes != tgt_spec.n_classes:
        raise ValueError(
            f"class counts differ: {src_spec.n_classes} vs {tgt_spec.n_classes}")
    if src_spec.sub_styles != tgt_spec.sub_styles:
        raise ValueError(
            f"sub-style counts differ: {src_spec.sub_styles} vs {tgt_spec.sub_styles}")
    return (generate_glyph_domain(src_spec, "source"),
            generate_glyph_domain(tgt_spec, "target"))


def default_pair_specs(n_classes: int = 4, sub_styles: int = 2,
                       samples_per_class: int = 100, seed: int = 0
                       ) -> Tuple[GlyphDomainSpec, GlyphDomainSpec]:
    """Canonical shifted pair: thin strokes on a dark field vs thick strokes
    on a brighter, noisier field with more positional jitter.

    Knobs are set so a source-trained MLP lands well below its source
    accuracy on the target (a real but recoverable gap).
    """
    src = GlyphDomainSpec(
        n_classes=n_classes, sub_styles=sub_styles,
        samples_per_class=samples_per_class, stroke_thickness=1,
        background=0.08, invert=False, noise=0.04, jitter=1.0, seed=seed)
    tgt = GlyphDomainSpec(
        n_classes=n_classes, sub_styles=sub_styles,
        samples_per_class=samples_per_class, stroke_thickness=2,
        background=0.14, invert=False, noise=0.08, jitter=2.0, seed=seed + 1)
    return src, tgt


# ---------------------------------------------------------------------------
# blob pairs (pure label shift)
# ---------------------------------------------------------------------------

def _generate_blob_domain(k: int, priors: np.ndarray, means: np.ndarray,
                          spread: float, n: int, seed: int, role: str) -> DomainDataset:
    salt = DOMAIN_ROLES.index(role)
    rng = np.random.default_rng([int(seed) & 0xFFFFFFFF, salt])
    labels = rng.choice(k, size=n, p=priors)
    points = means[labels] + rng.normal(0.0, spread, (n, 2))
    return DomainDataset(
        images=_quantize(points), labels=labels.astype(np.int64),
        class_count=k, domain_role=role,
        metadata={"generator": "blob", "domain_role": role,
                  "params": {"K": k, "priors": priors.tolist(),
                             "means": means.tolist(), "spread": spread,
                             "n": n, "seed": seed}})


def generate_blob_pair(K: int, source_priors: Sequence[float],
                       target_priors: Sequence[float],
                       means: Sequence[Sequence[float]], spread: float,
                       n: int, seed: int) -> Tuple[DomainDataset, DomainDataset]:
    """2-D Gaussian clusters with shared class-conditionals and per-domain
    label priors."""
    source_priors = np.asarray(source_priors, dtype=np.float64)
    target_priors = np.asarray(target_priors, dtype=np.float64)
    means_arr = np.asarray(means, dtype=np.float64)
    if spread < 0.0:
        raise ValueError(f"spread must be non-negative, got {spread}")
    if means_arr.shape != (K, 2):
        raise ValueError(f"means must be {K} 2-D points, got shape {means_arr.shape}")
    for name, p in (("source_priors", source_priors), ("target_priors", target_priors)):
        if p.shape != (K,) or np.any(p < 0.0) or abs(p.sum() - 1.0) > 1e-9:
            raise ValueError(f"{name} must be {K} non-negative values summing to 1")
    return (_generate_blob_domain(K, source_priors, means_arr, spread, n, seed, "source"),
            _generate_blob_domain(K, target_priors, means_arr, spread, n, seed, "target"))


# ---------------------------------------------------------------------------
# outlier pools
# ---------------------------------------------------------------------------

def outlier_pool(style: str, n: int, seed: int) -> ImageBatch:
    """Images far from the glyph manifold: flat fields, checkerboards, or
    bright-skewed noise."""
    if style not in OUTLIER_STYLES:
        raise ValueError(f"style must be one of {OUTLIER_STYLES}, got {style!r}")
    if n < 1:
        raise ValueError("need n >= 1 outliers")
    rng = np.random.default_rng([int(seed) & 0xFFFFFFFF, OUTLIER_STYLES.index(style)])
    if style == "blank":
        levels = rng.integers(0, 2, n).astype(np.float64)
        images = np.broadcast_to(levels[:, None, None], (n, CANVAS, CANVAS)).copy()
    elif style == "checker":
        parity = (_ROWS + _COLS).astype(int) % 2
        phases = rng.integers(0, 2, n)
        images = np.stack([(parity == ph).astype(np.float64) for ph in phases])
    else:
        # squared-uniform pulled toward 1: dense brightness, inverse of the
        # sparse-ink glyph statistics
        images = 1.0 - rng.uniform(0.0, 1.0, (n, CANVAS, CANVAS)) ** 2
    return ImageBatch(_quantize(images))


# ---------------------------------------------------------------------------
# regeneration and the on-disk format
# ---------------------------------------------------------------------------

def regenerate(metadata: Dict) -> DomainDataset:
    """Rebuild a dataset from its recorded metadata, bit-identically."""
    gen = metadata.get("generator")
    role = metadata.get("domain_role")
    if gen == "glyph":
        return generate_glyph_domain(GlyphDomainSpec.from_dict(metadata["spec"]), role)
    if gen == "blob":
        p = metadata["params"]
        return _generate_blob_domain(
            p["K"], np.asarray(p["priors"]), np.asarray(p["means"]),
            p["spread"], p["n"], p["seed"], role)
    raise ValueError(f"cannot regenerate from metadata with generator {gen!r}")


def save_dataset(ds: DomainDataset, path) -> None:
    """Write meta.json + images.f32le + labels.u32le (+ sublabels.u32le)."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    raw = ds.images.data if ds.is_image else np.asarray(ds.images)
    meta = {
        "kind": "images" if ds.is_image else "points",
        "shape": list(raw.shape),
        "class_count": ds.class_count,
        "domain_role": ds.domain_role,
        "n": ds.n_samples,
        "has_sublabels": ds.sublabels is not None,
        "metadata": ds.metadata,
    }
    (path / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    (path / "images.f32le").write_bytes(raw.astype("<f4").tobytes())
    (path / "labels.u32le").write_bytes(
        ds.labels.astype(np.int64).astype("<u4").tobytes())
    if ds.sublabels is not None:
        (path / "sublabels.u32le").write_bytes(
            ds.sublabels.astype(np.int64).astype("<u4").tobytes())


def load_dataset(path) -> DomainDataset:
    path = Path(path)
    meta = json.loads((path / "meta.json").read_text())
    shape = tuple(meta["shape"])
    raw = np.frombuffer((path / "images.f32le").read_bytes(),
                        dtype="<f4").astype(np.float64).reshape(shape)
    labels = np.frombuffer((path / "labels.u32le").read_bytes(),
                           dtype="<u4").astype(np.int64)
    # the sentinel wraps around in unsigned storage
    labels = np.where(labels == 0xFFFFFFFF, OUTLIER_LABEL, labels)
    sublabels = None
    if meta.get("has_sublabels"):
        sublabels = np.frombuffer((path / "sublabels.u32le").read_bytes(),
                                  dtype="<u4").astype(np.int64)
    images = ImageBatch(raw) if meta["kind"] == "images" else raw
    return DomainDataset(
        images=images, labels=labels, class_count=meta["class_count"],
        domain_role=meta["domain_role"], sublabels=sublabels,
        metadata=meta.get("metadata", {}))
