"""Evaluation harness: PSNR/SSIM reports, parsing F-score tables, identity
distance, and gallery/probe recognition."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .dataset import DatasetManifest, get_sample
from .errors import ConfigError
from .metrics import PSNR_DISPLAY_CAP, FaceEmbedder, fscore, identity_distance, \
    psnr, ssim, topk_recognition
from .networks import Generator, ParsingModel, parse_face, sem_to_tensor, to_image, to_tensor
from .semantics import CLASS_NAMES, NUM_CLASSES, SemanticMap, uniform_map


@dataclass
class MetricsReport:
    per_image: list
    aggregates: dict
    metadata: dict = field(default_factory=dict)


def _entry_semantics(sample: dict, parser: ParsingModel | None,
                     semantic_source: str) -> SemanticMap:
    if semantic_source == "parser":
        if parser is None:
            raise ConfigError("semantic_source='parser' needs a parser model")
        return parse_face(parser, sample["blurred"])
    if semantic_source == "labels":
        if sample["sem"] is None:
            raise ConfigError("semantic_source='labels' but the entry has no labels")
        return sample["sem"]
    if semantic_source == "uniform":
        h, w = sample["blurred"].shape[:2]
        return uniform_map(h, w)
    raise ConfigError(f"unknown semantic_source {semantic_source!r}")


def run_generator(generator, blurred: np.ndarray, sem: SemanticMap) -> np.ndarray:
    """Run a Generator module (eval mode, clamped) or a plain callable stub."""
    if isinstance(generator, Generator):
        was_training = generator.training
        generator.eval()
        try:
            with torch.no_grad():
                _, out128 = generator(to_tensor(blurred), sem_to_tensor(sem))
        finally:
            generator.train(was_training)
        return to_image(out128)
    return generator(blurred, sem)


def aggregate_rows(per_image: list) -> dict:
    """Overall and per-kernel-size means, recomputed exactly from the rows."""
    agg = {"count": len(per_image), "mean_psnr": float("nan"),
           "mean_ssim": float("nan"), "per_size": {}}
    if per_image:
        agg["mean_psnr"] = float(np.mean([r["psnr"] for r in per_image]))
        agg["mean_ssim"] = float(np.mean([r["ssim"] for r in per_image]))
    for size in sorted({r["kernel_size"] for r in per_image}):
        rows = [r for r in per_image if r["kernel_size"] == size]
        agg["per_size"][int(size)] = {
            "count": len(rows),
            "mean_psnr": float(np.mean([r["psnr"] for r in rows])),
            "mean_ssim": float(np.mean([r["ssim"] for r in rows])),
        }
    return agg


def evaluate_deblurring(generator, parser: ParsingModel | None,
                        manifest: DatasetManifest, semantic_source: str = "parser",
                        metadata: dict | None = None) -> MetricsReport:
    """Per-entry PSNR/SSIM of the restored image against the clear image.

    Per-entry failures are collected into metadata['errors'], not raised.
    """
    per_image = []
    errors = []
    for idx in range(len(manifest)):
        try:
            sample = get_sample(manifest, idx)
            sem = _entry_semantics(sample, parser, semantic_source)
            out = run_generator(generator, sample["blurred"], sem)
            per_image.append({
                "entry_id": idx,
                "kernel_size": int(sample["kernel_size"]),
                "psnr": psnr(out, sample["clear"]),
                "ssim": ssim(out, sample["clear"]),
            })
        except (OSError, ConfigError) as exc:
            errors.append({"entry_id": idx, "error": str(exc)})
    meta = dict(metadata or {})
    meta["errors"] = errors
    meta["semantic_source"] = semantic_source
    return MetricsReport(per_image=per_image, aggregates=aggregate_rows(per_image),
                         metadata=meta)


def _cap(value: float) -> float:
    return float(min(value, PSNR_DISPLAY_CAP))


def write_report_csv(report: MetricsReport, path) -> None:
    """Per-image rows; PSNR display is capped at 60 dB."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["entry_id", "kernel_size", "psnr", "ssim"])
        for r in report.per_image:
            writer.writerow([r["entry_id"], r["kernel_size"],
                             f"{_cap(r['psnr']):.4f}", f"{r['ssim']:.6f}"])


def write_report_json(report: MetricsReport, path) -> None:
    agg = json.loads(json.dumps(report.aggregates))  # deep copy
    agg["mean_psnr"] = _cap(agg["mean_psnr"])
    for size_agg in agg["per_size"].values():
        size_agg["mean_psnr"] = _cap(size_agg["mean_psnr"])
    payload = {"aggregates": agg, "metadata": report.metadata,
               "count": len(report.per_image)}
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def plot_report(report: MetricsReport, out_dir,
                identity: dict | None = None) -> list[Path]:
    """PSNR/SSIM-vs-kernel-size line plots, plus an identity-distance bar plot."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    sizes = sorted(report.aggregates["per_size"])
    for metric in ("psnr", "ssim"):
        vals = [report.aggregates["per_size"][s][f"mean_{metric}"] for s in sizes]
        if metric == "psnr":
            vals = [_cap(v) for v in vals]
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.plot(sizes, vals, marker="o")
        ax.set_xlabel("kernel size")
        ax.set_ylabel(metric.upper())
        ax.grid(True, alpha=0.3)
        fig.tight_layout()
        p = out_dir / f"{metric}_vs_kernel_size.png"
        fig.savefig(p, dpi=120)
        plt.close(fig)
        paths.append(p)
    if identity:
        fig, ax = plt.subplots(figsize=(4, 3.5))
        names = list(identity)
        ax.bar(names, [identity[n] for n in names], color=["#888", "#3a7"])
        ax.set_ylabel("mean identity distance")
        fig.tight_layout()
        p = out_dir / "identity_distance.png"
        fig.savefig(p, dpi=120)
        plt.close(fig)
        paths.append(p)
    return paths


def evaluate_parsing(parser: ParsingModel, manifest: DatasetManifest,
                     inputs: str = "clear") -> dict:
    """Mean per-class F-score over the manifest; inputs from clear or blurred."""
    if inputs not in ("clear", "blurred"):
        raise ConfigError(f"inputs must be 'clear' or 'blurred', got {inputs!r}")
    sums = np.zeros(NUM_CLASSES)
    count = 0
    for idx in range(len(manifest)):
        sample = get_sample(manifest, idx)
        if sample["sem"] is None:
            raise ConfigError("parsing evaluation needs labels")
        gt = sample["sem"].to_labels()
        img = sample["clear"] if inputs == "clear" else sample["blurred"]
        pred = parse_face(parser, img).to_labels()
        for cid in range(NUM_CLASSES):
            sums[cid] += fscore(pred, gt, cid)
        count += 1
    means = sums / max(count, 1)
    out = {CLASS_NAMES[cid]: float(means[cid]) for cid in range(NUM_CLASSES)}
    out["average"] = float(np.mean(means[1:]))  # facial classes, background excluded
    return out


def write_fscore_csv(columns: dict[str, dict], path) -> None:
    """Table of per-class F-scores; one column per evaluation condition."""
    names = list(columns)
    rows = list(CLASS_NAMES) + ["average"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class"] + names)
        for r in rows:
            writer.writerow([r] + [f"{columns[n][r]:.4f}" for n in names])


def identity_report(generator, parser, manifest: DatasetManifest,
                    embedder: FaceEmbedder, semantic_source: str = "parser") -> dict:
    """Mean identity distance to the clear image, blurred vs deblurred."""
    d_blur, d_deblur = [], []
    for idx in range(len(manifest)):
        sample = get_sample(manifest, idx)
        sem = _entry_semantics(sample, parser, semantic_source)
        out = run_generator(generator, sample["blurred"], sem)
        d_blur.append(identity_distance(embedder, sample["clear"], sample["blurred"]))
        d_deblur.append(identity_distance(embedder, sample["clear"], out))
    return {"blurred": float(np.mean(d_blur)), "deblurred": float(np.mean(d_deblur))}


def recognition_report(generator, parser, manifest: DatasetManifest,
                       embedder: FaceEmbedder, ks=(1, 3, 5),
                       semantic_source: str = "parser") -> dict:
    """Top-K accuracy: probes are restored images, gallery is one clear image
    per identity (first manifest occurrence)."""
    gallery_embeds, gallery_ids = [], []
    seen = set()
    probe_embeds, probe_ids = [], []
    for idx in range(len(manifest)):
        sample = get_sample(manifest, idx)
        ident = sample["identity"]
        if ident is None:
            raise ConfigError("recognition protocol needs identity labels")
        if ident not in seen:
            seen.add(ident)
            gallery_embeds.append(embedder.embed(sample["clear"]))
            gallery_ids.append(ident)
        sem = _entry_semantics(sample, parser, semantic_source)
        out = run_generator(generator, sample["blurred"], sem)
        probe_embeds.append(embedder.embed(out))
        probe_ids.append(ident)
    return {f"top{k}": topk_recognition(np.stack(probe_embeds), probe_ids,
                                        np.stack(gallery_embeds), gallery_ids, k)
            for k in ks}
