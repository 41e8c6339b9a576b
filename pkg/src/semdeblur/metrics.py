"""Image-quality metrics, face embeddings, and the recognition protocol."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .errors import ContractError, ParameterError, ProtocolError
from .semantics import resample_area

# Rec. 601 luma weights.
LUMA = np.array([0.299, 0.587, 0.114], dtype=np.float64)

PSNR_DISPLAY_CAP = 60.0


def _check_pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if x.shape != y.shape:
        raise ParameterError(f"shape mismatch {x.shape} vs {y.shape}")
    return x, y


def psnr(a, b) -> float:
    """10*log10(1/MSE) for [0,1] images; +inf when the images are equal."""
    x, y = _check_pair(a, b)
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(1.0 / mse)


def _luma(img: np.ndarray) -> np.ndarray:
    if img.ndim == 3:
        if img.shape[2] != 3:
            raise ParameterError(f"expected 3 color channels, got {img.shape[2]}")
        return img @ LUMA
    return img


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(a, b, window_size: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03, data_range: float = 1.0) -> float:
    """Mean local SSIM on luma; 11x11 Gaussian window, valid positions only."""
    x, y = _check_pair(a, b)
    x = _luma(x)
    y = _luma(y)
    if x.shape[0] < window_size or x.shape[1] < window_size:
        raise ParameterError(
            f"image {x.shape} smaller than the {window_size}x{window_size} window")
    w = gaussian_window(window_size, sigma)
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2

    def filt(img):
        return ndimage.correlate(img, w, mode="constant")

    half = window_size // 2
    sl = (slice(half, x.shape[0] - half), slice(half, x.shape[1] - half))
    mu_x = filt(x)[sl]
    mu_y = filt(y)[sl]
    xx = filt(x * x)[sl] - mu_x ** 2
    yy = filt(y * y)[sl] - mu_y ** 2
    xy = filt(x * y)[sl] - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * xy + c2)
    den = (mu_x ** 2 + mu_y ** 2 + c1) * (xx + yy + c2)
    return float(np.mean(num / den))


def fscore(pred_labels: np.ndarray, gt_labels: np.ndarray, class_id: int) -> float:
    """Pixel F1 for one class; 1.0 if both masks empty, 0.0 if exactly one is."""
    pred = np.asarray(pred_labels)
    gt = np.asarray(gt_labels)
    if pred.shape != gt.shape:
        raise ParameterError(f"shape mismatch {pred.shape} vs {gt.shape}")
    p = pred == class_id
    g = gt == class_id
    np_, ng = int(p.sum()), int(g.sum())
    if np_ == 0 and ng == 0:
        return 1.0
    if np_ == 0 or ng == 0:
        return 0.0
    tp = int((p & g).sum())
    precision = tp / np_
    recall = tp / ng
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


class FaceEmbedder:
    """Interface: embed(image HxWx3 in [0,1]) -> unit-norm vector."""

    dim: int = 0

    def embed(self, image: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class PoolEmbedder(FaceEmbedder):
    """Dependency-free default: 16x16 grayscale, mean-subtracted, L2-normed."""

    def __init__(self, side: int = 16):
        self.side = side
        self.dim = side * side

    def embed(self, image: np.ndarray) -> np.ndarray:
        img = np.asarray(image, dtype=np.float64)
        gray = _luma(img)
        small = resample_area(gray, (self.side, self.side)).ravel()
        small = small - small.mean()
        norm = np.linalg.norm(small)
        if norm == 0:
            # flat image has no structure; any fixed unit vector is as good
            out = np.zeros(self.dim)
            out[0] = 1.0
            return out
        return small / norm


def _checked_embed(embedder: FaceEmbedder, image: np.ndarray) -> np.ndarray:
    v = np.asarray(embedder.embed(image), dtype=np.float64)
    norm = float(np.linalg.norm(v))
    if abs(norm - 1.0) > 1e-6:
        raise ContractError(f"embedder returned norm {norm}, expected 1")
    return v


def identity_distance(embedder: FaceEmbedder, a: np.ndarray, b: np.ndarray) -> float:
    """L2 distance between unit-norm embeddings; lies in [0, 2]."""
    va = _checked_embed(embedder, a)
    vb = _checked_embed(embedder, b)
    return float(np.linalg.norm(va - vb))


def topk_recognition(probe_embeds: np.ndarray, probe_ids, gallery_embeds: np.ndarray,
                     gallery_ids, k: int) -> float:
    """Fraction of probes whose identity is among the k nearest gallery rows.

    Distances are embedding L2; ties resolve in gallery index order.
    """
    probes = np.asarray(probe_embeds, dtype=np.float64)
    gallery = np.asarray(gallery_embeds, dtype=np.float64)
    probe_ids = list(probe_ids)
    gallery_ids = list(gallery_ids)
    if k < 1:
        raise ParameterError(f"k must be >= 1, got {k}")
    if probes.ndim != 2 or gallery.ndim != 2 or probes.shape[1] != gallery.shape[1]:
        raise ParameterError("probe/gallery embedding dimensions disagree")
    if len(probe_ids) != probes.shape[0] or len(gallery_ids) != gallery.shape[0]:
        raise ParameterError("identity list lengths disagree with embeddings")
    missing = sorted(set(probe_ids) - set(gallery_ids))
    if missing:
        raise ProtocolError(f"probe identities missing from gallery: {missing[:5]}")
    hits = 0
    for v, pid in zip(probes, probe_ids):
        d = np.linalg.norm(gallery - v, axis=1)
        order = np.argsort(d, kind="stable")[:k]
        if any(gallery_ids[int(j)] == pid for j in order):
            hits += 1
    return hits / len(probe_ids)
