"""Per-pixel semantic probability maps over the 11 face classes.

The class inventory is fixed: background, face skin, the 8 structural
components (eyebrows, eyes, nose, lips, teeth), and hair. Maps are
H x W x 11 arrays that form a probability simplex at every pixel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError

CLASS_NAMES = (
    "background",
    "face_skin",
    "left_eyebrow",
    "right_eyebrow",
    "left_eye",
    "right_eye",
    "nose",
    "upper_lip",
    "lower_lip",
    "teeth",
    "hair",
)

NUM_CLASSES = len(CLASS_NAMES)  # 11

# Component classes that get their own structural mask: eyebrows, eyes,
# nose, lips, teeth. Background, skin and hair are excluded.
STRUCTURAL_CLASS_IDS = (2, 3, 4, 5, 6, 7, 8, 9)

SIMPLEX_TOL = 1e-5


@dataclass(frozen=True)
class SemanticMap:
    """H x W x 11 per-pixel class probabilities."""

    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs)
        if probs.dtype not in (np.float32, np.float64):
            probs = probs.astype(np.float32)
        probs = np.ascontiguousarray(probs)
        object.__setattr__(self, "probs", probs)
        if probs.ndim != 3 or probs.shape[2] != NUM_CLASSES:
            raise ParameterError(
                f"semantic map must be HxWx{NUM_CLASSES}, got shape {probs.shape}")
        if np.any(probs < 0):
            raise ParameterError("semantic probabilities must be non-negative")
        sums = probs.astype(np.float64).sum(axis=2)
        worst = float(np.abs(sums - 1.0).max())
        if worst > SIMPLEX_TOL:
            raise ParameterError(
                f"per-pixel probabilities must sum to 1 within {SIMPLEX_TOL}, "
                f"worst deviation {worst:.3g}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.probs.shape[0], self.probs.shape[1]

    def to_labels(self) -> np.ndarray:
        """Per-pixel argmax class indices, int64 H x W."""
        return np.argmax(self.probs, axis=2).astype(np.int64)

    def channel(self, class_id: int) -> np.ndarray:
        if not 0 <= class_id < NUM_CLASSES:
            raise ParameterError(f"class_id must be in 0..{NUM_CLASSES - 1}, got {class_id}")
        return self.probs[:, :, class_id]


def encode_labels(label_image: np.ndarray) -> SemanticMap:
    """One-hot encode an H x W integer label image."""
    labels = np.asarray(label_image)
    if labels.ndim != 2:
        raise ParameterError(f"label image must be HxW, got shape {labels.shape}")
    labels = labels.astype(np.int64)
    if labels.min() < 0 or labels.max() >= NUM_CLASSES:
        raise ParameterError(
            f"label indices must be in 0..{NUM_CLASSES - 1}, "
            f"got range [{labels.min()}, {labels.max()}]")
    probs = np.zeros(labels.shape + (NUM_CLASSES,), dtype=np.float32)
    np.put_along_axis(probs, labels[:, :, None], 1.0, axis=2)
    return SemanticMap(probs=probs)


def uniform_map(height: int, width: int) -> SemanticMap:
    """The maximally uninformative prior: every class at 1/11."""
    if height < 1 or width < 1:
        raise ParameterError(f"dimensions must be >= 1, got {height}x{width}")
    probs = np.full((height, width, NUM_CLASSES), 1.0 / NUM_CLASSES, dtype=np.float32)
    return SemanticMap(probs=probs)


def _box_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row-stochastic matrix averaging n_in samples into n_out with box overlap."""
    m = np.zeros((n_out, n_in), dtype=np.float64)
    scale = n_in / n_out
    for o in range(n_out):
        lo = o * scale
        hi = (o + 1) * scale
        i0 = int(np.floor(lo))
        i1 = int(np.ceil(hi))
        for i in range(i0, min(i1, n_in)):
            overlap = min(hi, i + 1) - max(lo, i)
            if overlap > 0:
                m[o, i] = overlap / scale
    return m


def resample_area(arr: np.ndarray, out_hw: tuple[int, int]) -> np.ndarray:
    """Area (box-overlap) resampling of an HxW or HxWxC array, float64."""
    h, w = out_hw
    if h < 1 or w < 1:
        raise ParameterError(f"output dims must be >= 1, got {out_hw}")
    a = np.asarray(arr, dtype=np.float64)
    squeeze = a.ndim == 2
    if squeeze:
        a = a[:, :, None]
    mh = _box_matrix(a.shape[0], h)
    mw = _box_matrix(a.shape[1], w)
    out = np.einsum("oi,ijc,pj->opc", mh, a, mw, optimize=True)
    return out[:, :, 0] if squeeze else out


def resample_semantic(sem: SemanticMap, out_hw: tuple[int, int]) -> SemanticMap:
    """Per-channel area downsampling, then per-pixel renormalization."""
    out = resample_area(sem.probs, out_hw)
    out = np.clip(out, 0.0, None)
    out /= out.sum(axis=2, keepdims=True)
    return SemanticMap(probs=out.astype(np.float32))
