"""Scaled-down training experiments used by the acceptance suite.

These are directional stand-ins for the full training runs: small image
counts, one kernel, thousands rather than millions of iterations. They are
deliberately CPU-sized; hyperparameters here (batch size, learning rate) are
free choices tuned for the desk-scale budget, not published constants.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .blur import DegradationConfig, generate_kernel_bank
from .dataset import DatasetManifest, get_sample, synthesize_dataset
from .facegen import write_demo_dataset
from .losses import LossWeights
from .metrics import psnr
from .networks import GeneratorConfig, ParsingModelConfig, build_generator, \
    build_parsing_model, parse_face
from .training import DeblurTrainState, TrainConfig, direct_schedule, \
    make_optimizer, train_deblurring, train_parsing


def build_overfit_manifest(workdir, num_images: int = 8, seed: int = 0,
                           sizes=(13,), kernels: int = 1,
                           noise_sigma: float = 0.01) -> DatasetManifest:
    """Demo faces x a tiny kernel bank, materialized under workdir."""
    workdir = Path(workdir)
    per_identity = 2
    identities = max(1, (num_images + per_identity - 1) // per_identity)
    dirs = write_demo_dataset(workdir / "faces", num_identities=identities,
                              per_identity=per_identity, seed=seed)
    # trim to exactly num_images
    images = sorted(Path(dirs["clear"]).glob("*.png"))
    for extra in images[num_images:]:
        extra.unlink()
        (Path(dirs["labels"]) / extra.name).unlink()
    bank = generate_kernel_bank(kernels, sizes, seed=seed + 1)
    cfg = DegradationConfig(noise_sigma=noise_sigma, rng_seed=seed)
    return synthesize_dataset(dirs["clear"], dirs["labels"], bank, cfg,
                              workdir / "data", seed=seed)


def training_set_psnr(manifest: DatasetManifest, gen=None,
                      semantic_source: str = "labels") -> float:
    """Mean PSNR vs clear: of the blurred baseline, or of the generator output."""
    from .evaluate import run_generator, _entry_semantics

    vals = []
    for idx in range(len(manifest)):
        sample = get_sample(manifest, idx)
        if gen is None:
            out = sample["blurred"]
        else:
            sem = _entry_semantics(sample, None, semantic_source)
            out = np.clip(run_generator(gen, sample["blurred"], sem), 0.0, 1.0)
        vals.append(psnr(out, sample["clear"]))
    return float(np.mean(vals))


@dataclass
class OverfitResult:
    baseline_psnr: float
    trained_psnr: float
    gain_db: float
    iters: int


def overfit_experiment(workdir, seed: int = 0, iters: int = 3000,
                       batch_size: int = 1, lr: float = 5e-4,
                       num_images: int = 8, semantic_source: str = "labels",
                       manifest: DatasetManifest | None = None) -> OverfitResult:
    """Content-loss-only training on a tiny fixed set; reports the PSNR gain
    of the trained generator over the blurred input baseline."""
    if manifest is None:
        manifest = build_overfit_manifest(workdir, num_images=num_images, seed=seed)
    weights = LossWeights(lambda_s=0.0, lambda_p=0.0, lambda_adv=0.0)
    cfg = TrainConfig(total_iters=iters, batch_size=batch_size, lr_deblur=lr,
                      weights=weights, seed=seed, log_every=0)
    gen = build_generator(GeneratorConfig(), seed=seed)
    state = DeblurTrainState(gen=gen, disc=None, parser=None,
                             opt_g=make_optimizer(gen.parameters(), cfg.lr_deblur),
                             opt_d=None, schedule=direct_schedule([13]), cfg=cfg,
                             semantic_source=semantic_source)
    train_deblurring(state, manifest, val_entries=0)
    baseline = training_set_psnr(manifest)
    trained = training_set_psnr(manifest, gen=gen, semantic_source=semantic_source)
    return OverfitResult(baseline_psnr=baseline, trained_psnr=trained,
                         gain_db=trained - baseline, iters=iters)


@dataclass
class SensitivityResult:
    semantic_psnrs: list
    uniform_psnrs: list

    @property
    def semantic_mean(self) -> float:
        return float(np.mean(self.semantic_psnrs))

    @property
    def uniform_mean(self) -> float:
        return float(np.mean(self.uniform_psnrs))


def semantic_sensitivity_experiment(workdir, seeds=(0, 1, 2), iters: int = 1000,
                                    batch_size: int = 1, lr: float = 5e-4,
                                    num_images: int = 8) -> SensitivityResult:
    """Ground-truth one-hot semantics vs the uniform prior, same data and
    seeds; returns training-set PSNRs per arm."""
    workdir = Path(workdir)
    manifest = build_overfit_manifest(workdir, num_images=num_images, seed=0)
    sem_psnrs, uni_psnrs = [], []
    for seed in seeds:
        for source, sink in (("labels", sem_psnrs), ("uniform", uni_psnrs)):
            res = overfit_experiment(workdir / f"{source}_{seed}", seed=seed,
                                     iters=iters, batch_size=batch_size, lr=lr,
                                     semantic_source=source, manifest=manifest)
            sink.append(res.trained_psnr)
    return SensitivityResult(semantic_psnrs=sem_psnrs, uniform_psnrs=uni_psnrs)


def pixel_accuracy(model, image: np.ndarray, labels: np.ndarray) -> float:
    pred = parse_face(model, image).to_labels()
    return float(np.mean(pred == labels))


@dataclass
class ParsingOverfitResult:
    accuracy: float
    reached_at: int | None  # first checked iteration with accuracy >= target
    iters_run: int


def parsing_overfit_experiment(workdir, seed: int = 0, max_iters: int = 2000,
                               lr: float = 1e-3, check_every: int = 100,
                               target: float = 0.99) -> ParsingOverfitResult:
    """Single-sample parser overfit; checks pixel accuracy every few steps."""
    manifest = build_overfit_manifest(workdir, num_images=1, seed=seed,
                                      noise_sigma=0.0)
    sample = get_sample(manifest, 0)
    image = sample["clear"]
    labels = sample["sem"].to_labels()
    model = build_parsing_model(ParsingModelConfig(), seed=seed)
    weights = LossWeights()
    opt_state = None
    reached = None
    done = 0
    for start in range(0, max_iters, check_every):
        stop = min(start + check_every, max_iters)
        cfg = TrainConfig(total_iters=stop, batch_size=1, lr_parsing=lr,
                          weights=weights, seed=seed, log_every=0)
        res = train_parsing(model, manifest, cfg, inputs="clear",
                            start_iter=start, opt_state=opt_state)
        ckpt = res["checkpoint"]
        opt_state = (ckpt.tensors, ckpt.extras["param_groups"])
        done = stop
        if pixel_accuracy(model, image, labels) >= target:
            reached = stop
            break
    return ParsingOverfitResult(accuracy=pixel_accuracy(model, image, labels),
                                reached_at=reached, iters_run=done)
