"""Face alignment by 5-point similarity transform, plus shared warping helpers.

Landmarks arrive in a fixed order: left eye, right eye, nose tip, left mouth
corner, right mouth corner. Alignment solves the least-squares similarity
(rotation + isotropic scale + translation) onto a canonical template and
resamples bilinearly with replicate borders.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import AlignmentError, ParameterError

# Canonical landmark template for a 128x128 output, (x, y) pixel coords.
# Derived from the usual 112x112 five-point layout scaled by 128/112.
TEMPLATE_128 = np.array([
    [38.2946, 51.6963],
    [73.5318, 51.5014],
    [56.0252, 71.7366],
    [41.5493, 92.3655],
    [70.7299, 92.2041],
], dtype=np.float64) * (128.0 / 112.0)

LANDMARK_NAMES = ("left_eye", "right_eye", "nose_tip", "mouth_left", "mouth_right")


def read_landmarks(path) -> np.ndarray:
    """Read a 5-line 'x y' landmark file."""
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if len(lines) != 5:
        raise ParameterError(f"{path}: expected 5 landmark rows, got {len(lines)}")
    pts = np.array([[float(v) for v in ln.split()] for ln in lines], dtype=np.float64)
    if pts.shape != (5, 2):
        raise ParameterError(f"{path}: each row must be 'x y'")
    return pts


def _validate_landmarks(pts: np.ndarray) -> np.ndarray:
    pts = np.asarray(pts, dtype=np.float64)
    if pts.shape != (5, 2):
        raise ParameterError(f"expected 5 landmarks of 2 coords, got shape {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise AlignmentError("landmarks contain non-finite coordinates")
    for i in range(5):
        for j in range(i + 1, 5):
            if np.hypot(*(pts[i] - pts[j])) < 1e-9:
                raise AlignmentError(
                    f"landmarks {LANDMARK_NAMES[i]} and {LANDMARK_NAMES[j]} coincide")
    centered = pts - pts.mean(axis=0)
    svals = np.linalg.svd(centered, compute_uv=False)
    if svals[1] < 1e-8 * max(svals[0], 1.0):
        raise AlignmentError("landmarks are collinear")
    return pts


def similarity_transform(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Least-squares similarity mapping src points to dst points.

    Returns a 2x3 matrix A with dst ~ A @ [x, y, 1]^T. Reflections are
    excluded (determinant forced positive).
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    n = src.shape[0]
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    sc = src - mu_s
    dc = dst - mu_d
    var_s = (sc ** 2).sum() / n
    if var_s <= 0:
        raise AlignmentError("source landmarks are all coincident")
    cov = dc.T @ sc / n
    u, s, vt = np.linalg.svd(cov)
    sign = np.ones(2)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        sign[1] = -1.0
    rot = u @ np.diag(sign) @ vt
    scale = (s * sign).sum() / var_s
    trans = mu_d - scale * rot @ mu_s
    mat = np.empty((2, 3), dtype=np.float64)
    mat[:, :2] = scale * rot
    mat[:, 2] = trans
    return mat


def invert_affine(mat: np.ndarray) -> np.ndarray:
    lin = mat[:, :2]
    inv = np.linalg.inv(lin)
    out = np.empty((2, 3), dtype=np.float64)
    out[:, :2] = inv
    out[:, 2] = -inv @ mat[:, 2]
    return out


def bilinear_sample(image: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Sample image at float coords with replicate border; coords clamped."""
    img = np.asarray(image, dtype=np.float64)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[:, :, None]
    h, w = img.shape[:2]
    xs = np.clip(xs, 0.0, w - 1.0)
    ys = np.clip(ys, 0.0, h - 1.0)
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (xs - x0)[..., None]
    fy = (ys - y0)[..., None]
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    out = top * (1 - fy) + bot * fy
    return out[:, :, 0] if squeeze else out


def warp_affine(image: np.ndarray, inv_mat: np.ndarray, out_hw: tuple[int, int]) -> np.ndarray:
    """Warp image so output(p) = image(inv_mat @ p), bilinear, replicate."""
    h, w = out_hw
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    xs = inv_mat[0, 0] * xx + inv_mat[0, 1] * yy + inv_mat[0, 2]
    ys = inv_mat[1, 0] * xx + inv_mat[1, 1] * yy + inv_mat[1, 2]
    return bilinear_sample(image, xs, ys)


def align_face(image: np.ndarray, landmarks: np.ndarray, out_size: int = 128) -> np.ndarray:
    """Warp a face image onto the canonical template size out_size x out_size."""
    if out_size < 8:
        raise ParameterError(f"out_size must be >= 8, got {out_size}")
    pts = _validate_landmarks(landmarks)
    template = TEMPLATE_128 * (out_size / 128.0)
    fwd = similarity_transform(pts, template)
    return warp_affine(image, invert_affine(fwd), (out_size, out_size))


def rotation_about_center(angle_deg: float, h: int, w: int,
                          scale: float = 1.0, tx: float = 0.0, ty: float = 0.0) -> np.ndarray:
    """Forward affine: rotate/scale about the image center, then translate."""
    theta = np.deg2rad(angle_deg)
    c, s = np.cos(theta), np.sin(theta)
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    lin = scale * np.array([[c, -s], [s, c]])
    mat = np.empty((2, 3), dtype=np.float64)
    mat[:, :2] = lin
    mat[:, 2] = np.array([cx + tx, cy + ty]) - lin @ np.array([cx, cy])
    return mat


def apply_affine_to_points(mat: np.ndarray, pts: np.ndarray) -> np.ndarray:
    pts = np.asarray(pts, dtype=np.float64)
    return pts @ mat[:, :2].T + mat[:, 2]
