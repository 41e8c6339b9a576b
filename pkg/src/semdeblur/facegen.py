"""Procedural demo faces with ground-truth labels and landmarks.

Real face datasets are not bundled; these parametric faces exercise the full
pipeline (alignment, parsing, deblurring, recognition) with exact semantic
labels. Identity controls geometry and palette; the variant seed jitters
pose, lighting and expression so one identity yields distinct samples.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .seeds import rng_for
from .semantics import NUM_CLASSES


def _ellipse(xx, yy, cx, cy, rx, ry):
    return ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1.0


def make_face(identity_seed: int, variant_seed: int, size: int = 128):
    """One face: (image HxWx3 float32, labels HxW int64, landmarks (5,2))."""
    irng = rng_for(identity_seed, "identity")
    vrng = rng_for(identity_seed, "variant", variant_seed)
    s = size / 128.0

    # identity: palette and base geometry
    skin = np.array([0.72, 0.55, 0.42]) + irng.uniform(-0.12, 0.18, 3)
    hair = np.array([0.18, 0.12, 0.08]) + irng.uniform(0.0, 0.45, 3)
    eye = np.array([0.25, 0.2, 0.15]) + irng.uniform(0.0, 0.35, 3)
    lip = np.array([0.62, 0.3, 0.3]) + irng.uniform(-0.1, 0.15, 3)
    brow = hair * irng.uniform(0.6, 0.9)
    bg = np.array([0.35, 0.4, 0.5]) + irng.uniform(-0.2, 0.2, 3)
    face_rx = irng.uniform(30, 37) * s
    face_ry = irng.uniform(40, 47) * s
    eye_rx = irng.uniform(5.5, 7.5) * s
    eye_ry = irng.uniform(2.8, 4.2) * s
    brow_ry = irng.uniform(1.8, 3.0) * s
    nose_rx = irng.uniform(4.0, 6.0) * s
    hair_top = irng.uniform(24, 34) * s

    # variant: pose jitter, lighting, expression
    dx = vrng.uniform(-3.0, 3.0) * s
    dy = vrng.uniform(-3.0, 3.0) * s
    pose = vrng.uniform(0.96, 1.04)
    light_dir = vrng.uniform(0, 2 * np.pi)
    light_amp = vrng.uniform(0.03, 0.10)
    mouth_open = vrng.random() < 0.6
    noise = vrng.normal(0.0, 0.015, (size, size, 3))

    cx, cy = size / 2 + dx, size * 0.61 + dy

    def px(x, y):
        # base coords are for the 128 grid, centered on (64, 78)
        return (cx + (x - 64.0) * s * pose, cy + (y - 78.0) * s * pose)

    le = px(43.8, 59.1 + vrng.uniform(-1, 1))
    re = px(84.0, 58.9 + vrng.uniform(-1, 1))
    nose_tip = px(64.0, 82.0)
    ml = px(47.5, 105.5)
    mr = px(80.8, 105.4)
    landmarks = np.array([le, re, nose_tip, ml, mr])

    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    labels = np.zeros((size, size), dtype=np.int64)
    img = np.empty((size, size, 3))
    img[:] = bg

    def paint(mask, cid, color):
        labels[mask] = cid
        img[mask] = color

    hcx, hcy = px(64.0, 50.0)
    paint(_ellipse(xx, yy, hcx, hcy, face_rx + 8 * s, face_ry - 2 * s), 10, hair)
    paint(_ellipse(xx, yy, cx, cy, face_rx, face_ry), 1, skin)
    # hairline: reclaim the band above the forehead
    hairline = _ellipse(xx, yy, cx, cy, face_rx, face_ry) & (yy < hcy - hair_top + 14 * s)
    paint(hairline, 10, hair)

    mouth_cx, mouth_cy = px(64.0, 105.0)
    paint(_ellipse(xx, yy, le[0], le[1] - 10 * s, 8.5 * s, brow_ry), 2, brow)
    paint(_ellipse(xx, yy, re[0], re[1] - 10 * s, 8.5 * s, brow_ry), 3, brow)
    paint(_ellipse(xx, yy, le[0], le[1], eye_rx, eye_ry), 4, eye)
    paint(_ellipse(xx, yy, re[0], re[1], eye_rx, eye_ry), 5, eye)
    paint(_ellipse(xx, yy, nose_tip[0], nose_tip[1] - 6 * s, nose_rx, 9 * s), 6,
          skin * 0.82)
    upper = _ellipse(xx, yy, mouth_cx, mouth_cy, 17 * s, 4.5 * s) & (yy <= mouth_cy)
    lower = _ellipse(xx, yy, mouth_cx, mouth_cy + 2 * s, 16 * s, 5 * s) & (yy > mouth_cy)
    paint(upper, 7, lip)
    paint(lower, 8, lip * 0.9)
    if mouth_open:
        teeth = (np.abs(xx - mouth_cx) < 9 * s) & (np.abs(yy - mouth_cy) < 1.8 * s)
        paint(teeth, 9, np.array([0.92, 0.9, 0.85]))

    shade = ((xx - cx) * np.cos(light_dir) + (yy - cy) * np.sin(light_dir)) / size
    img = img * (1.0 + light_amp * shade[:, :, None]) + noise
    img = np.clip(img, 0.0, 1.0).astype(np.float32)
    assert labels.max() < NUM_CLASSES
    return img, labels, landmarks


def write_demo_dataset(out_dir, num_identities: int = 4, per_identity: int = 2,
                       seed: int = 0, size: int = 128) -> dict:
    """Write clear/, labels/, landmarks/ trees plus identities.json."""
    from .dataset import save_image, save_labels

    out_dir = Path(out_dir)
    clear_dir = out_dir / "clear"
    labels_dir = out_dir / "labels"
    lm_dir = out_dir / "landmarks"
    for d in (clear_dir, labels_dir, lm_dir):
        d.mkdir(parents=True, exist_ok=True)
    identities = {}
    for ident in range(num_identities):
        for var in range(per_identity):
            stem = f"face_{ident:03d}_{var:02d}"
            img, labels, lms = make_face(seed + ident, var, size)
            save_image(clear_dir / f"{stem}.png", img)
            save_labels(labels_dir / f"{stem}.png", labels)
            (lm_dir / f"{stem}.txt").write_text(
                "".join(f"{x:.3f} {y:.3f}\n" for x, y in lms))
            identities[stem] = f"id{ident:03d}"
    (clear_dir / "identities.json").write_text(json.dumps(identities, indent=0))
    return {"clear": clear_dir, "labels": labels_dir, "landmarks": lm_dir}
