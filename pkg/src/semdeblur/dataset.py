"""Dataset synthesis, the JSONL manifest, and batch iteration.

A manifest pins everything needed to regenerate each blurred image
bit-exactly: the clear image path, a kernel id into a bank file, a per-entry
noise seed, and the shared degradation config. Blurred images are quantized
to 8 bits whether served lazily or materialized to disk, so the two modes
are interchangeable.
"""

from __future__ import annotations

import json
import shutil
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .align import TEMPLATE_128, align_face, invert_affine, read_landmarks, \
    rotation_about_center, warp_affine
from .blur import DegradationConfig, KernelBank, degrade, read_kernel_bank
from .errors import FileFormatError, ParameterError
from .seeds import derive_seed, rng_for
from .semantics import NUM_CLASSES, SemanticMap, encode_labels

MANIFEST_FORMAT = "facedeblur-manifest-v1"


def save_image(path, arr: np.ndarray) -> None:
    """Write a [0,1] float image as 8-bit PNG."""
    a = np.clip(np.asarray(arr, dtype=np.float64), 0.0, 1.0)
    Image.fromarray(np.round(a * 255.0).astype(np.uint8)).save(path)


def load_image(path) -> np.ndarray:
    """Read an 8-bit image as HxWx3 float32 in [0,1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    return arr / np.float32(255.0)


def save_labels(path, labels: np.ndarray) -> None:
    lab = np.asarray(labels)
    if lab.min() < 0 or lab.max() >= NUM_CLASSES:
        raise ParameterError(f"labels out of range 0..{NUM_CLASSES - 1}")
    Image.fromarray(lab.astype(np.uint8), mode="L").save(path)


def load_labels(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"), dtype=np.int64)
    if arr.max() >= NUM_CLASSES:
        raise FileFormatError(f"{path}: label index {arr.max()} out of range")
    return arr


def quantize01(arr: np.ndarray) -> np.ndarray:
    """Round to the 8-bit grid; equals a PNG write/read round trip."""
    a = np.clip(np.asarray(arr, dtype=np.float64), 0.0, 1.0)
    return (np.round(a * 255.0).astype(np.uint8).astype(np.float32)
            / np.float32(255.0))


@dataclass
class ManifestEntry:
    clear_path: str
    kernel_id: int
    noise_seed: int
    labels_path: str | None = None
    identity: str | None = None
    blurred_path: str | None = None

    def to_json(self) -> dict:
        d = {"clear_path": self.clear_path, "kernel_id": self.kernel_id,
             "noise_seed": self.noise_seed}
        for k in ("labels_path", "identity", "blurred_path"):
            v = getattr(self, k)
            if v is not None:
                d[k] = v
        return d


@dataclass
class DatasetManifest:
    root: Path
    entries: list[ManifestEntry]
    degradation: DegradationConfig
    kernel_bank_path: str
    alignment: list = field(default_factory=lambda: TEMPLATE_128.tolist())
    _bank: KernelBank | None = None

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def bank(self) -> KernelBank:
        if self._bank is None:
            self._bank = read_kernel_bank(self.root / self.kernel_bank_path)
        return self._bank

    def path(self, rel: str) -> Path:
        return self.root / rel


def save_manifest(manifest: DatasetManifest, path) -> None:
    path = Path(path)
    header = {
        "format": MANIFEST_FORMAT,
        "degradation": {"noise_sigma": manifest.degradation.noise_sigma,
                        "boundary": manifest.degradation.boundary,
                        "rng_seed": manifest.degradation.rng_seed},
        "kernel_bank": manifest.kernel_bank_path,
        "alignment": manifest.alignment,
    }
    with open(path, "w") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for e in manifest.entries:
            fh.write(json.dumps(e.to_json(), sort_keys=True) + "\n")


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    root = path.parent
    lines = path.read_text().splitlines()
    if not lines:
        raise FileFormatError(f"{path} is empty")
    header = json.loads(lines[0])
    if header.get("format") != MANIFEST_FORMAT:
        raise FileFormatError(f"{path}: not a {MANIFEST_FORMAT} file")
    deg = header["degradation"]
    cfg = DegradationConfig(noise_sigma=deg["noise_sigma"], boundary=deg["boundary"],
                            rng_seed=deg["rng_seed"])
    entries = []
    for ln in lines[1:]:
        if not ln.strip():
            continue
        d = json.loads(ln)
        entries.append(ManifestEntry(
            clear_path=d["clear_path"], kernel_id=d["kernel_id"],
            noise_seed=d["noise_seed"], labels_path=d.get("labels_path"),
            identity=d.get("identity"), blurred_path=d.get("blurred_path")))
    manifest = DatasetManifest(root=root, entries=entries, degradation=cfg,
                               kernel_bank_path=header["kernel_bank"],
                               alignment=header["alignment"])
    bank_file = root / header["kernel_bank"]
    if not bank_file.exists():
        raise FileFormatError(f"kernel bank {bank_file} is missing")
    nk = len(manifest.bank)
    for e in entries:
        for rel in (e.clear_path, e.labels_path, e.blurred_path):
            if rel is not None and not (root / rel).exists():
                raise FileFormatError(f"manifest references missing file {rel}")
        if not 0 <= e.kernel_id < nk:
            raise FileFormatError(f"kernel_id {e.kernel_id} outside bank of {nk}")
    return manifest


def entry_blurred(manifest: DatasetManifest, idx: int) -> np.ndarray:
    """Regenerate (or load) one blurred image; quantized to the 8-bit grid."""
    e = manifest.entries[idx]
    if e.blurred_path is not None:
        return load_image(manifest.path(e.blurred_path))
    clear = load_image(manifest.path(e.clear_path))
    cfg = DegradationConfig(noise_sigma=manifest.degradation.noise_sigma,
                            boundary=manifest.degradation.boundary,
                            rng_seed=e.noise_seed)
    return quantize01(degrade(clear, manifest.bank[e.kernel_id], cfg))


def get_sample(manifest: DatasetManifest, idx: int) -> dict:
    e = manifest.entries[idx]
    sample = {
        "clear": load_image(manifest.path(e.clear_path)),
        "blurred": entry_blurred(manifest, idx),
        "sem": None,
        "identity": e.identity,
        "kernel_id": e.kernel_id,
        "kernel_size": manifest.bank[e.kernel_id].size,
        "entry_idx": idx,
    }
    if e.labels_path is not None:
        sample["sem"] = encode_labels(load_labels(manifest.path(e.labels_path)))
    return sample


def synthesize_dataset(clear_dir, labels_dir, bank: KernelBank, cfg: DegradationConfig,
                       out_dir, pairs_per_image: int | None = None,
                       materialize: bool = False, landmarks_dir=None,
                       seed: int = 0, out_size: int = 128) -> DatasetManifest:
    """Build a self-contained dataset directory and its manifest.

    Enumerates the image x kernel cross product (or `pairs_per_image`
    kernels per image, sampled without replacement) and copies aligned clear
    images, labels and the kernel bank into out_dir.
    """
    from .blur import write_kernel_bank

    clear_dir = Path(clear_dir)
    out_dir = Path(out_dir)
    image_paths = sorted(clear_dir.glob("*.png"))
    if not image_paths:
        raise ParameterError(f"no .png images found in {clear_dir}")
    identities = {}
    ident_file = clear_dir / "identities.json"
    if ident_file.exists():
        identities = json.loads(ident_file.read_text())

    (out_dir / "clear").mkdir(parents=True, exist_ok=True)
    if labels_dir is not None:
        (out_dir / "labels").mkdir(exist_ok=True)
    if materialize:
        (out_dir / "blurred").mkdir(exist_ok=True)
    bank_rel = "kernels.kbnk"
    write_kernel_bank(bank, out_dir / bank_rel)

    entries = []
    rng = rng_for(seed, "pairs")
    for i, img_path in enumerate(image_paths):
        img = load_image(img_path)
        if landmarks_dir is not None:
            pts = read_landmarks(Path(landmarks_dir) / (img_path.stem + ".txt"))
            img = align_face(img, pts, out_size)
        elif img.shape[:2] != (out_size, out_size):
            raise ParameterError(
                f"{img_path.name} is {img.shape[1]}x{img.shape[0]}, expected "
                f"{out_size}x{out_size} (or supply landmarks)")
        clear_rel = f"clear/{img_path.stem}.png"
        save_image(out_dir / clear_rel, img)

        labels_rel = None
        if labels_dir is not None:
            lab_path = Path(labels_dir) / (img_path.stem + ".png")
            if not lab_path.exists():
                raise FileFormatError(f"missing label file {lab_path}")
            labels_rel = f"labels/{img_path.stem}.png"
            shutil.copyfile(lab_path, out_dir / labels_rel)

        if pairs_per_image is None or pairs_per_image >= len(bank):
            kernel_ids = range(len(bank))
        else:
            kernel_ids = sorted(rng.choice(len(bank), size=pairs_per_image,
                                           replace=False).tolist())
        for kid in kernel_ids:
            noise_seed = derive_seed(seed, "noise", i, int(kid))
            entry = ManifestEntry(clear_path=clear_rel, kernel_id=int(kid),
                                  noise_seed=noise_seed, labels_path=labels_rel,
                                  identity=identities.get(img_path.stem))
            entries.append(entry)

    manifest = DatasetManifest(root=out_dir, entries=entries, degradation=cfg,
                               kernel_bank_path=bank_rel)
    manifest._bank = bank
    if materialize:
        for idx, e in enumerate(manifest.entries):
            blurred = entry_blurred(manifest, idx)
            rel = f"blurred/{idx:06d}.png"
            save_image(out_dir / rel, blurred)
            e.blurred_path = rel
    save_manifest(manifest, out_dir / "manifest.jsonl")
    return manifest


def augment_affine_params(rng: np.random.Generator) -> tuple[float, float, float, float]:
    """Rotation <= 10 deg, scale 0.95..1.05, translation <= 4 px."""
    angle = float(rng.uniform(-10.0, 10.0))
    scale = float(rng.uniform(0.95, 1.05))
    tx = float(rng.uniform(-4.0, 4.0))
    ty = float(rng.uniform(-4.0, 4.0))
    return angle, scale, tx, ty


def augment_sample(clear: np.ndarray, blurred: np.ndarray, sem: SemanticMap | None,
                   rng: np.random.Generator):
    """Apply one random affine identically to the clear/blurred/label triplet."""
    h, w = clear.shape[:2]
    angle, scale, tx, ty = augment_affine_params(rng)
    inv = invert_affine(rotation_about_center(angle, h, w, scale, tx, ty))
    clear_a = np.clip(warp_affine(clear, inv, (h, w)), 0.0, 1.0).astype(np.float32)
    blurred_a = np.clip(warp_affine(blurred, inv, (h, w)), 0.0, 1.0).astype(np.float32)
    sem_a = None
    if sem is not None:
        probs = warp_affine(sem.probs, inv, (h, w))
        probs = np.clip(probs, 0.0, None)
        probs /= probs.sum(axis=2, keepdims=True)
        sem_a = SemanticMap(probs=probs.astype(np.float32))
    return clear_a, blurred_a, sem_a


def _stack_batch(samples: list[dict]) -> dict:
    batch = {
        "clear": np.stack([s["clear"] for s in samples]),
        "blurred": np.stack([s["blurred"] for s in samples]),
        "identity": [s["identity"] for s in samples],
        "kernel_id": [s["kernel_id"] for s in samples],
        "kernel_size": [s["kernel_size"] for s in samples],
        "entry_idx": [s["entry_idx"] for s in samples],
        "sem": None,
        "labels_idx": None,
    }
    if all(s["sem"] is not None for s in samples):
        sem = np.stack([s["sem"].probs for s in samples])
        batch["sem"] = sem
        batch["labels_idx"] = np.argmax(sem, axis=3).astype(np.int64)
    return batch


def iterate_batches(manifest: DatasetManifest, batch_size: int = 16,
                    augment: bool = False, seed: int = 0,
                    epochs: int | None = None):
    """Yield shuffled batches; partial final batch is emitted.

    Epoch order and augmentation draws are pure functions of (seed, epoch,
    entry index).
    """
    if len(manifest) == 0:
        raise ParameterError("manifest has no entries")
    if batch_size < 1:
        raise ParameterError(f"batch_size must be >= 1, got {batch_size}")
    epoch = 0
    while epochs is None or epoch < epochs:
        order = rng_for(seed, "epoch", epoch).permutation(len(manifest))
        for lo in range(0, len(order), batch_size):
            samples = []
            for idx in order[lo:lo + batch_size]:
                s = get_sample(manifest, int(idx))
                if augment:
                    arng = rng_for(seed, "aug", epoch, int(idx))
                    s["clear"], s["blurred"], s["sem"] = augment_sample(
                        s["clear"], s["blurred"], s["sem"], arng)
                samples.append(s)
            yield _stack_batch(samples)
        epoch += 1
