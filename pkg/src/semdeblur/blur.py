"""Motion-blur kernel synthesis and the image degradation model.

Kernels are rasterized from random 2D camera-shake trajectories: an inertial
random walk with rare direction-reversal impulses, centered, rescaled to fit
the kernel grid, and bilinearly splatted. Degradation is per-channel 2D
correlation (replicate boundary) plus additive Gaussian noise, clipped to
[0, 1]. All randomized operations are pure functions of their seed.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import FileFormatError, ParameterError

# Supported nominal kernel sizes, smallest to largest.
KERNEL_SIZES = (13, 15, 17, 19, 21, 23, 25, 27)

BANK_MAGIC = b"KBNK1"


@dataclass(frozen=True)
class CameraTrajectory:
    """Centered 2D camera path in kernel-grid units."""

    positions: np.ndarray  # (num_steps, 2) float64
    num_steps: int
    rng_seed: int

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        object.__setattr__(self, "positions", pos)
        if self.num_steps < 2:
            raise ParameterError(f"trajectory needs at least 2 steps, got {self.num_steps}")
        if pos.shape != (self.num_steps, 2):
            raise ParameterError(f"positions shape {pos.shape} != ({self.num_steps}, 2)")
        if not np.all(np.isfinite(pos)):
            raise ParameterError("trajectory contains non-finite positions")


@dataclass(frozen=True)
class BlurKernel:
    """Normalized 2D point-spread function.

    Taps are stored as float32 so that in-memory kernels and kernels read
    back from a bank file are bit-identical.
    """

    taps: np.ndarray  # (size, size) float32, non-negative, sums to 1
    size: int
    source_seed: int

    def __post_init__(self):
        taps = np.ascontiguousarray(self.taps, dtype=np.float32)
        object.__setattr__(self, "taps", taps)
        if self.size % 2 == 0 or self.size < 3:
            raise ParameterError(f"kernel size must be odd and >= 3, got {self.size}")
        if taps.shape != (self.size, self.size):
            raise ParameterError(f"taps shape {taps.shape} != ({self.size}, {self.size})")
        if np.any(taps < 0):
            raise ParameterError("kernel taps must be non-negative")
        total = float(taps.astype(np.float64).sum())
        if abs(total - 1.0) > 1e-6:
            raise ParameterError(f"kernel taps must sum to 1 within 1e-6, got {total}")


@dataclass(frozen=True)
class DegradationConfig:
    noise_sigma: float = 0.01
    boundary: str = "replicate"
    rng_seed: int = 0

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ParameterError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.boundary != "replicate":
            raise ParameterError(f"unsupported boundary mode {self.boundary!r}")


@dataclass
class KernelBank:
    kernels: list[BlurKernel]
    split: str = "train"
    sizes: tuple[int, ...] = ()

    def __post_init__(self):
        if self.split not in ("train", "test"):
            raise ParameterError(f"split must be 'train' or 'test', got {self.split!r}")
        if not self.sizes:
            self.sizes = tuple(sorted({k.size for k in self.kernels}))

    def __len__(self) -> int:
        return len(self.kernels)

    def __getitem__(self, idx: int) -> BlurKernel:
        return self.kernels[idx]


def _simulate_walk(num_steps: int, inertia: float, impulse_prob: float,
                   rng: np.random.Generator) -> np.ndarray:
    """Inertial 2D random walk; one normal(2) and one uniform draw per step."""
    positions = np.zeros((num_steps, 2), dtype=np.float64)
    vel = np.zeros(2, dtype=np.float64)
    pos = np.zeros(2, dtype=np.float64)
    for i in range(1, num_steps):
        vel = inertia * vel + rng.normal(0.0, 1.0, size=2)
        if rng.random() < impulse_prob:
            vel = -2.0 * vel  # hand-jitter reversal
        pos = pos + vel
        positions[i] = pos
    return positions


def sample_trajectory(num_steps: int, inertia: float, impulse_prob: float,
                      rng_seed: int) -> CameraTrajectory:
    """Sample a centered camera-shake trajectory, deterministic in the seed."""
    if num_steps < 2:
        raise ParameterError(f"num_steps must be >= 2, got {num_steps}")
    if not 0.0 <= inertia <= 1.0:
        raise ParameterError(f"inertia must be in [0, 1], got {inertia}")
    if not 0.0 <= impulse_prob <= 1.0:
        raise ParameterError(f"impulse_prob must be in [0, 1], got {impulse_prob}")
    rng = np.random.default_rng(rng_seed)
    positions = _simulate_walk(num_steps, inertia, impulse_prob, rng)
    positions -= positions.mean(axis=0, keepdims=True)
    return CameraTrajectory(positions=positions, num_steps=num_steps, rng_seed=rng_seed)


def _splat_bilinear(canvas: np.ndarray, points: np.ndarray) -> None:
    """Deposit unit mass per point into the four surrounding cells."""
    n = canvas.shape[0]
    x0 = np.floor(points[:, 0]).astype(np.int64)
    y0 = np.floor(points[:, 1]).astype(np.int64)
    dx = points[:, 0] - x0
    dy = points[:, 1] - y0
    for ox, oy, w in ((0, 0, (1 - dx) * (1 - dy)), (1, 0, dx * (1 - dy)),
                      (0, 1, (1 - dx) * dy), (1, 1, dx * dy)):
        xs = x0 + ox
        ys = y0 + oy
        ok = (xs >= 0) & (xs < n) & (ys >= 0) & (ys < n)
        np.add.at(canvas, (ys[ok], xs[ok]), w[ok])


def rasterize_kernel(traj: CameraTrajectory, size: int) -> BlurKernel:
    """Splat a trajectory onto a size x size grid and normalize to unit sum."""
    if size % 2 == 0 or size < 3:
        raise ParameterError(f"kernel size must be odd and >= 3, got {size}")
    pts = traj.positions - traj.positions.mean(axis=0, keepdims=True)
    half = (size - 1) / 2.0
    extent = float(np.abs(pts).max()) if pts.size else 0.0
    if extent > half:
        pts = pts * (half / extent)
    canvas = np.zeros((size, size), dtype=np.float64)
    _splat_bilinear(canvas, pts + half)
    total = canvas.sum()
    if total <= 0:
        raise FileFormatError("trajectory splatted no mass onto the kernel grid")
    taps = np.float32(canvas / total)
    # One renormalization in float64 keeps the float32 sum within 1e-6 of 1.
    taps = np.float32(taps.astype(np.float64) / taps.astype(np.float64).sum())
    return BlurKernel(taps=taps, size=size, source_seed=traj.rng_seed)


def _kernel_taps(kernel) -> np.ndarray:
    taps = getattr(kernel, "taps", kernel)
    return np.asarray(taps, dtype=np.float64)


def apply_blur(image: np.ndarray, kernel, boundary: str = "replicate") -> np.ndarray:
    """Per-channel 2D correlation with replicate boundary.

    Returns the raw correlation (no clipping); for inputs in [0, 1] the
    output stays in [0, 1] up to float rounding because taps are
    non-negative and sum to 1.
    """
    if boundary != "replicate":
        raise ParameterError(f"unsupported boundary mode {boundary!r}")
    taps = _kernel_taps(kernel)
    img = np.asarray(image, dtype=np.float64)
    k = taps.shape[0]
    if img.ndim not in (2, 3):
        raise ParameterError(f"image must be HxW or HxWxC, got shape {img.shape}")
    if img.shape[0] < k or img.shape[1] < k:
        raise ParameterError(
            f"kernel {k}x{k} larger than image {img.shape[0]}x{img.shape[1]}")
    if img.ndim == 2:
        return ndimage.correlate(img, taps, mode="nearest")
    out = np.empty_like(img)
    for c in range(img.shape[2]):
        out[..., c] = ndimage.correlate(img[..., c], taps, mode="nearest")
    return out


def degrade(image: np.ndarray, kernel, cfg: DegradationConfig) -> np.ndarray:
    """Blur, add i.i.d. Gaussian noise, clip to [0, 1]. Pure in cfg.rng_seed."""
    blurred = apply_blur(image, kernel, cfg.boundary)
    if cfg.noise_sigma > 0:
        rng = np.random.default_rng(cfg.rng_seed)
        blurred = blurred + rng.normal(0.0, cfg.noise_sigma, size=blurred.shape)
    return np.clip(blurred, 0.0, 1.0)


def generate_kernel_bank(count: int, sizes, seed: int, split: str = "train",
                         num_steps: int = 512) -> KernelBank:
    """Synthesize `count` kernels round-robin over `sizes`, reproducibly."""
    sizes = tuple(int(s) for s in sizes)
    if count < 1:
        raise ParameterError(f"count must be >= 1, got {count}")
    if not sizes:
        raise ParameterError("size list must not be empty")
    for s in sizes:
        if s not in KERNEL_SIZES:
            raise ParameterError(f"size {s} not in supported range {KERNEL_SIZES}")
    master = np.random.default_rng(seed)
    kernels = []
    for i in range(count):
        size = sizes[i % len(sizes)]
        kseed = int(master.integers(0, 2**62))
        inertia = float(master.uniform(0.55, 0.95))
        impulse = float(master.uniform(0.0, 0.02))
        fill = float(master.uniform(0.70, 1.0))
        traj = sample_trajectory(num_steps, inertia, impulse, kseed)
        extent = float(np.abs(traj.positions).max())
        if extent > 0:
            # Stretch to roughly fill the grid so nominal size reflects support.
            scale = fill * (size - 1) / 2.0 / extent
            traj = CameraTrajectory(positions=traj.positions * scale,
                                    num_steps=traj.num_steps, rng_seed=traj.rng_seed)
        kernels.append(rasterize_kernel(traj, size))
    return KernelBank(kernels=kernels, split=split, sizes=tuple(sorted(set(sizes))))


def write_kernel_bank(bank: KernelBank, path) -> None:
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(BANK_MAGIC)
        fh.write(struct.pack("<II", len(bank.kernels), len(bank.sizes)))
        fh.write(struct.pack(f"<{len(bank.sizes)}I", *bank.sizes))
        for k in bank.kernels:
            fh.write(struct.pack("<qi", k.source_seed, k.size))
            fh.write(k.taps.astype("<f4").tobytes())


def read_kernel_bank(path, split: str = "train") -> KernelBank:
    path = Path(path)
    data = path.read_bytes()
    if data[:5] != BANK_MAGIC:
        raise FileFormatError(f"{path} is not a kernel bank (bad magic)")
    off = 5
    try:
        count, nsizes = struct.unpack_from("<II", data, off)
        off += 8
        sizes = struct.unpack_from(f"<{nsizes}I", data, off)
        off += 4 * nsizes
        kernels = []
        for _ in range(count):
            seed, k = struct.unpack_from("<qi", data, off)
            off += 12
            taps = np.frombuffer(data, dtype="<f4", count=k * k, offset=off)
            off += 4 * k * k
            kernels.append(BlurKernel(taps=taps.reshape(k, k).copy(), size=k,
                                      source_seed=seed))
    except (struct.error, ValueError) as exc:
        raise FileFormatError(f"{path} is truncated or corrupt: {exc}") from exc
    return KernelBank(kernels=kernels, split=split, sizes=tuple(sizes))


def dump_kernel_pngs(bank: KernelBank, out_dir) -> list[Path]:
    """Write each kernel as an 8-bit grayscale PNG (max tap -> 255)."""
    from PIL import Image

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, k in enumerate(bank.kernels):
        taps = k.taps.astype(np.float64)
        peak = taps.max()
        img = np.zeros_like(taps, dtype=np.uint8) if peak <= 0 else \
            np.round(taps / peak * 255.0).astype(np.uint8)
        p = out_dir / f"kernel_{i:05d}_s{k.size}.png"
        Image.fromarray(img, mode="L").save(p)
        paths.append(p)
    return paths
