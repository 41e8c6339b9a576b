"""Two-phase training: parsing first, then deblurring with a frozen parser.

Deblurring follows the incremental curriculum over kernel sizes and
alternates one discriminator update with one generator update per
iteration. Batch composition, augmentation, and noise are pure functions of
(seed, iteration), which is what makes checkpoint resume bit-exact.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .checkpoints import Checkpoint, load_checkpoint, load_state_dict_from_numpy, \
    save_checkpoint, state_dict_to_numpy
from .dataset import DatasetManifest, augment_sample, get_sample
from .errors import ConfigError, ContractError, ParameterError
from .losses import LossWeights, ScaleTerms, content_loss, perceptual_loss, \
    adversarial_losses, structural_loss, total_loss
from .metrics import psnr
from .networks import Generator, ParsingModel, to_image
from .seeds import rng_for
from .semantics import uniform_map

DEFAULT_PERIOD_K = 30000


@dataclass
class KernelSchedule:
    """Incremental curriculum state over ascending kernel-size buckets."""

    size_groups: list
    period_K: int = DEFAULT_PERIOD_K
    current_iter: int = 0

    def __post_init__(self):
        if not self.size_groups or any(not g for g in self.size_groups):
            raise ParameterError("size_groups must be non-empty buckets")
        if self.period_K < 1:
            raise ParameterError(f"period_K must be >= 1, got {self.period_K}")
        flat = [s for g in self.size_groups for s in g]
        if flat != sorted(flat):
            raise ParameterError("buckets must be ascending in kernel size")


def incremental_schedule(sizes, period_K: int = DEFAULT_PERIOD_K) -> KernelSchedule:
    """One singleton bucket per size, smallest first."""
    return KernelSchedule(size_groups=[[int(s)] for s in sorted(sizes)],
                          period_K=period_K)


def direct_schedule(sizes) -> KernelSchedule:
    """No curriculum: every size active from iteration 0."""
    return KernelSchedule(size_groups=[sorted(int(s) for s in sizes)])


def active_kernel_subset(schedule: KernelSchedule, iteration: int) -> set:
    """Sizes available at `iteration`: an ascending, saturating bucket prefix."""
    if iteration < 0:
        raise ParameterError(f"iteration must be >= 0, got {iteration}")
    last = min(iteration // schedule.period_K, len(schedule.size_groups) - 1)
    return {s for g in schedule.size_groups[:last + 1] for s in g}


@dataclass
class TrainConfig:
    total_iters: int
    batch_size: int = 16
    lr_parsing: float = 5e-6
    lr_deblur: float = 4e-5
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    optimizer: str = "adam"
    augment: bool = False
    log_every: int = 100
    checkpoint_every: int = 0  # 0: only at the end

    def __post_init__(self):
        if self.total_iters < 1:
            raise ParameterError(f"total_iters must be >= 1, got {self.total_iters}")
        if self.batch_size < 1:
            raise ParameterError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr_parsing <= 0 or self.lr_deblur <= 0:
            raise ParameterError("learning rates must be positive")
        if self.optimizer != "adam":
            raise ConfigError(f"unsupported optimizer {self.optimizer!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        d = dict(d)
        d["weights"] = LossWeights(**d["weights"])
        return TrainConfig(**d)


def make_optimizer(params, lr: float) -> torch.optim.Adam:
    return torch.optim.Adam(params, lr=lr, betas=(0.9, 0.999), eps=1e-8)


def params_checksum(module: torch.nn.Module) -> str:
    h = hashlib.sha256()
    for name, p in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(p.detach().cpu().numpy().tobytes())
    return h.hexdigest()


def _optimizer_tensors(opt: torch.optim.Optimizer, prefix: str):
    tensors = {}
    groups = []
    sd = opt.state_dict()
    for pidx, st in sd["state"].items():
        for key, val in st.items():
            if isinstance(val, torch.Tensor):
                # copy: .numpy() aliases the live optimizer buffers
                tensors[f"{prefix}.{pidx}.{key}"] = val.detach().cpu().numpy().copy()
            else:
                tensors[f"{prefix}.{pidx}.{key}"] = np.asarray(val, dtype=np.float64)
    for g in sd["param_groups"]:
        groups.append({k: v for k, v in g.items()})
    return tensors, groups


def _restore_optimizer(opt: torch.optim.Optimizer, tensors: dict, prefix: str,
                       groups: list) -> None:
    state: dict = {}
    pre = prefix + "."
    for name, arr in tensors.items():
        if not name.startswith(pre):
            continue
        pidx_s, key = name[len(pre):].split(".", 1)
        entry = state.setdefault(int(pidx_s), {})
        t = torch.from_numpy(np.ascontiguousarray(arr)).clone()
        entry[key] = t if arr.ndim else t.reshape(())
    opt.load_state_dict({"state": state, "param_groups": groups})


def _entry_tensors(manifest: DatasetManifest, idx: int, semantic_source: str,
                   parser: ParsingModel | None, augment_rng=None):
    """One sample as CHW float32 tensors: (clear, blurred, semantics)."""
    s = get_sample(manifest, idx)
    clear, blurred, sem = s["clear"], s["blurred"], s["sem"]
    if augment_rng is not None:
        clear, blurred, sem = augment_sample(clear, blurred, sem, augment_rng)
    clear_t = torch.from_numpy(clear.transpose(2, 0, 1).copy())
    blur_t = torch.from_numpy(blurred.transpose(2, 0, 1).copy())
    if semantic_source == "labels":
        if sem is None:
            raise ConfigError("semantic_source='labels' but the manifest has no labels")
        sem_arr = sem.probs
    elif semantic_source == "uniform":
        sem_arr = uniform_map(*clear.shape[:2]).probs
    elif semantic_source == "parser":
        if parser is None:
            raise ConfigError("semantic_source='parser' but no parser was given")
        with torch.no_grad():
            scores = parser(blur_t[None])
            sem_t = torch.softmax(scores, dim=1)[0]
        return clear_t, blur_t, sem_t
    else:
        raise ConfigError(f"unknown semantic_source {semantic_source!r}")
    sem_t = torch.from_numpy(sem_arr.transpose(2, 0, 1).copy())
    return clear_t, blur_t, sem_t


def _assemble_batch(manifest, idxs, semantic_source, parser, cache, cfg, t):
    clears, blurs, sems = [], [], []
    for j, idx in enumerate(idxs):
        idx = int(idx)
        if cfg.augment:
            arng = rng_for(cfg.seed, "aug", t, j)
            trip = _entry_tensors(manifest, idx, semantic_source, parser, arng)
        elif idx in cache:
            trip = cache[idx]
        else:
            trip = _entry_tensors(manifest, idx, semantic_source, parser)
            cache[idx] = trip
        clears.append(trip[0])
        blurs.append(trip[1])
        sems.append(trip[2])
    return torch.stack(clears), torch.stack(blurs), torch.stack(sems)


def _write_history(path: Path, fieldnames, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        writer.writerows(rows)


def train_parsing(model: ParsingModel, manifest: DatasetManifest, cfg: TrainConfig,
                  out_dir=None, inputs: str = "clear",
                  start_iter: int = 0, opt_state=None,
                  early_stop_patience: int = 0, eval_every: int = 500) -> dict:
    """Cross-entropy training of the parser. Returns history and checkpoint.

    `inputs` selects clear or blurred images; the blurred variant is the
    fine-tuning pass. With `early_stop_patience` > 0, training stops after
    that many evals without improvement of the smoothed loss.
    """
    if inputs not in ("clear", "blurred"):
        raise ConfigError(f"inputs must be 'clear' or 'blurred', got {inputs!r}")
    if any(e.labels_path is None for e in manifest.entries):
        raise ConfigError("parsing training needs labels for every manifest entry")
    opt = make_optimizer(model.parameters(), cfg.lr_parsing)
    if opt_state is not None:
        _restore_optimizer(opt, opt_state[0], "opt", opt_state[1])
    n = len(manifest)
    history = []
    cache: dict = {}
    best = float("inf")
    stale = 0
    model.train()
    stop_iter = cfg.total_iters
    for t in range(start_iter, cfg.total_iters):
        idxs = rng_for(cfg.seed, "parsebatch", t).integers(0, n, size=cfg.batch_size)
        clear, blur, sem = _assemble_batch(manifest, idxs, "labels", None, cache, cfg, t)
        x = blur if inputs == "blurred" else clear
        target = sem.argmax(dim=1)
        scores = model(x)
        loss = F.cross_entropy(scores, target)
        opt.zero_grad()
        loss.backward()
        opt.step()
        history.append({"iter": t, "loss": float(loss.item())})
        if early_stop_patience > 0 and (t + 1) % eval_every == 0:
            recent = float(np.mean([h["loss"] for h in history[-eval_every:]]))
            if recent < best - 1e-6:
                best = recent
                stale = 0
            else:
                stale += 1
                if stale >= early_stop_patience:
                    stop_iter = t + 1
                    break
    ckpt = Checkpoint(
        kind="parsing",
        config={"model": asdict(model.cfg), "train": cfg.to_dict(), "inputs": inputs},
        tensors={**{f"model.{k}": v for k, v in state_dict_to_numpy(model.state_dict()).items()},
                 **_optimizer_tensors(opt, "opt")[0]},
        extras={"iter": stop_iter, "seed": cfg.seed,
                "param_groups": _optimizer_tensors(opt, "opt")[1]},
    )
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        save_checkpoint(ckpt, out_dir / "parsing.ckpt")
        _write_history(out_dir / "parsing_history.csv", ["iter", "loss"], history)
    return {"history": history, "checkpoint": ckpt, "stop_iter": stop_iter}


def load_parsing_model(path) -> ParsingModel:
    from .networks import ParsingModelConfig

    ckpt = load_checkpoint(path, expect_kind="parsing")
    model = ParsingModel(ParsingModelConfig(**ckpt.config["model"]))
    load_state_dict_from_numpy(model, ckpt.tensors, prefix="model.")
    return model


@dataclass
class DeblurTrainState:
    gen: Generator
    disc: object
    parser: ParsingModel | None
    opt_g: torch.optim.Optimizer
    opt_d: torch.optim.Optimizer | None
    schedule: KernelSchedule
    cfg: TrainConfig
    iteration: int = 0
    semantic_source: str = "parser"


def _active_entry_idxs(manifest: DatasetManifest, schedule: KernelSchedule,
                       t: int) -> list[int]:
    sizes = active_kernel_subset(schedule, t)
    bank = manifest.bank
    idxs = [i for i, e in enumerate(manifest.entries) if bank[e.kernel_id].size in sizes]
    if not idxs:
        raise ConfigError(
            f"no manifest entries use the active kernel sizes {sorted(sizes)}")
    return idxs


def save_trainer_state(state: DeblurTrainState, path) -> None:
    tensors = {f"gen.{k}": v for k, v in state_dict_to_numpy(state.gen.state_dict()).items()}
    og_t, og_g = _optimizer_tensors(state.opt_g, "optg")
    tensors.update(og_t)
    extras = {"iter": state.iteration, "semantic_source": state.semantic_source,
              "schedule": {"size_groups": state.schedule.size_groups,
                           "period_K": state.schedule.period_K},
              "optg_groups": og_g, "has_disc": state.disc is not None,
              "has_parser": state.parser is not None}
    if state.disc is not None:
        tensors.update({f"disc.{k}": v
                        for k, v in state_dict_to_numpy(state.disc.state_dict()).items()})
        od_t, od_g = _optimizer_tensors(state.opt_d, "optd")
        tensors.update(od_t)
        extras["optd_groups"] = od_g
    if state.parser is not None:
        tensors.update({f"parser.{k}": v
                        for k, v in state_dict_to_numpy(state.parser.state_dict()).items()})
        extras["parser_config"] = asdict(state.parser.cfg)
    cfgd = {"train": state.cfg.to_dict(), "generator": asdict(state.gen.cfg)}
    if state.disc is not None:
        cfgd["discriminator"] = asdict(state.disc.cfg)
    save_checkpoint(Checkpoint(kind="trainer", config=cfgd, tensors=tensors,
                               extras=extras), path)


def load_trainer_state(path) -> DeblurTrainState:
    from .networks import DiscriminatorConfig, GeneratorConfig, ParsingModelConfig, \
        build_discriminator

    ckpt = load_checkpoint(path, expect_kind="trainer")
    cfg = TrainConfig.from_dict(ckpt.config["train"])
    gen = Generator(GeneratorConfig(**ckpt.config["generator"]))
    load_state_dict_from_numpy(gen, ckpt.tensors, prefix="gen.")
    opt_g = make_optimizer(gen.parameters(), cfg.lr_deblur)
    _restore_optimizer(opt_g, ckpt.tensors, "optg", ckpt.extras["optg_groups"])
    disc = None
    opt_d = None
    if ckpt.extras["has_disc"]:
        disc = build_discriminator(DiscriminatorConfig(**ckpt.config["discriminator"]), 0)
        load_state_dict_from_numpy(disc, ckpt.tensors, prefix="disc.")
        opt_d = make_optimizer(disc.parameters(), cfg.lr_deblur)
        _restore_optimizer(opt_d, ckpt.tensors, "optd", ckpt.extras["optd_groups"])
    parser = None
    if ckpt.extras["has_parser"]:
        parser = ParsingModel(ParsingModelConfig(**ckpt.extras["parser_config"]))
        load_state_dict_from_numpy(parser, ckpt.tensors, prefix="parser.")
        for p in parser.parameters():
            p.requires_grad_(False)
        parser.eval()
    sched = KernelSchedule(size_groups=ckpt.extras["schedule"]["size_groups"],
                           period_K=ckpt.extras["schedule"]["period_K"],
                           current_iter=ckpt.extras["iter"])
    return DeblurTrainState(gen=gen, disc=disc, parser=parser, opt_g=opt_g,
                            opt_d=opt_d, schedule=sched, cfg=cfg,
                            iteration=ckpt.extras["iter"],
                            semantic_source=ckpt.extras["semantic_source"])


def train_deblurring(state: DeblurTrainState, manifest: DatasetManifest,
                     out_dir=None, feature_extractor=None,
                     val_entries: int = 4) -> dict:
    """Run the deblurring phase from state.iteration to cfg.total_iters.

    Per iteration: sample a batch uniformly over entries whose kernel size is
    schedule-active, get semantics per `state.semantic_source`, update the
    discriminator (when adversarial weight > 0), then the generator. The
    parser stays frozen.
    """
    cfg = state.cfg
    w = cfg.weights
    gen, disc, parser = state.gen, state.disc, state.parser
    use_adv = w.lambda_adv > 0
    if use_adv and disc is None:
        raise ConfigError("adversarial weight > 0 requires a discriminator")
    use_perc = w.lambda_p > 0
    if use_perc and feature_extractor is None:
        raise ConfigError("perceptual weight > 0 requires a feature extractor")
    if parser is not None:
        for p in parser.parameters():
            if p.requires_grad:
                raise ContractError("parser must be frozen during deblurring")
        parser.eval()
    parser_sum_before = params_checksum(parser) if parser is not None else None

    cache: dict = {}
    history = []
    gen.train()
    if disc is not None:
        disc.train()
    active_idxs = None
    active_until = -1
    for t in range(state.iteration, cfg.total_iters):
        if t > active_until:
            active_idxs = _active_entry_idxs(manifest, state.schedule, t)
            # the active set only changes at bucket boundaries
            boundary = (t // state.schedule.period_K + 1) * state.schedule.period_K
            active_until = boundary - 1
        pick = rng_for(cfg.seed, "batch", t).integers(0, len(active_idxs),
                                                      size=cfg.batch_size)
        idxs = [active_idxs[int(i)] for i in pick]
        clear, blur, sem = _assemble_batch(manifest, idxs, state.semantic_source,
                                           parser, cache, cfg, t)
        out64, out128 = gen(blur, sem)
        row = {"iter": t}

        if use_adv:
            d_real = disc(clear)
            d_fake = disc(out128.detach())
            _, d_loss = adversarial_losses(d_real, d_fake)
            state.opt_d.zero_grad()
            d_loss.backward()
            state.opt_d.step()
            row["d_loss"] = float(d_loss.item())

        gt64 = F.avg_pool2d(clear, 2)
        sem64 = Generator._downsample_semantics(sem)
        lc1 = content_loss(out64, gt64)
        lc2 = content_loss(out128, clear)
        zero = out128.new_zeros(())
        ls1 = structural_loss(out64, gt64, sem64) if w.lambda_s > 0 else zero
        ls2 = structural_loss(out128, clear, sem) if w.lambda_s > 0 else zero
        lp = perceptual_loss(out128, clear, feature_extractor) if use_perc else None
        ladv = None
        if use_adv:
            # g_loss only reads d_fake; reuse the pre-update d_real detached
            g_loss, _ = adversarial_losses(d_real.detach(), disc(out128))
            ladv = g_loss
        loss = total_loss([ScaleTerms(lc1, ls1), ScaleTerms(lc2, ls2, lp, ladv)], w)
        state.opt_g.zero_grad()
        loss.backward()
        state.opt_g.step()

        row.update({"loss": float(loss.item()), "content64": float(lc1.item()),
                    "content128": float(lc2.item()),
                    "structural64": float(ls1.item()),
                    "structural128": float(ls2.item()),
                    "perceptual": float(lp.item()) if lp is not None else 0.0,
                    "adv_g": float(ladv.item()) if ladv is not None else 0.0})
        if cfg.log_every and (t % cfg.log_every == 0 or t == cfg.total_iters - 1):
            row["val_psnr"] = _validation_psnr(state, manifest, cache, val_entries)
            history.append(row)
        state.iteration = t + 1
        state.schedule.current_iter = t + 1
        if out_dir is not None and cfg.checkpoint_every \
                and state.iteration % cfg.checkpoint_every == 0:
            save_trainer_state(state, Path(out_dir) / f"trainer_{state.iteration:08d}.ckpt")

    if parser is not None and params_checksum(parser) != parser_sum_before:
        raise ContractError("parser parameters changed during deblurring training")
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        save_trainer_state(state, out_dir / "trainer.ckpt")
        save_checkpoint(Checkpoint(
            kind="generator", config=asdict(gen.cfg),
            tensors=state_dict_to_numpy(gen.state_dict()),
            extras={"iter": state.iteration}), out_dir / "generator.ckpt")
        if disc is not None:
            save_checkpoint(Checkpoint(
                kind="discriminator", config=asdict(disc.cfg),
                tensors=state_dict_to_numpy(disc.state_dict()),
                extras={"iter": state.iteration}), out_dir / "discriminator.ckpt")
        fields = sorted({k for r in history for k in r})
        _write_history(out_dir / "deblur_history.csv", fields,
                       [{f: r.get(f, "") for f in fields} for r in history])
    return {"history": history, "state": state}


def _validation_psnr(state: DeblurTrainState, manifest, cache, val_entries: int) -> float:
    """Mean PSNR of the clamped output on the first few manifest entries."""
    if val_entries < 1:
        return float("nan")
    gen = state.gen
    was_training = gen.training
    gen.eval()
    vals = []
    try:
        with torch.no_grad():
            for idx in range(min(val_entries, len(manifest))):
                if idx in cache and not state.cfg.augment:
                    clear_t, blur_t, sem_t = cache[idx]
                else:
                    clear_t, blur_t, sem_t = _entry_tensors(
                        manifest, idx, state.semantic_source, state.parser)
                _, out128 = gen(blur_t[None], sem_t[None])
                vals.append(psnr(to_image(out128), to_image(clear_t[None])))
    finally:
        gen.train(was_training)
    vals = [v for v in vals if np.isfinite(v)]
    return float(np.mean(vals)) if vals else float("inf")


def load_generator(path) -> Generator:
    from .networks import GeneratorConfig

    ckpt = load_checkpoint(path, expect_kind="generator")
    gen = Generator(GeneratorConfig(**ckpt.config))
    load_state_dict_from_numpy(gen, ckpt.tensors)
    return gen


def finite_diff_gradcheck(loss_fn, params, eps: float = 1e-5) -> float:
    """Worst relative error between analytic and central-difference gradients.

    `loss_fn` must rebuild the forward graph on every call. Parameters are
    perturbed in place one element at a time; 64-bit tensors expected.
    """
    params = [p for p in params if p.requires_grad]
    if not params:
        raise ParameterError("no parameters require grad")
    for p in params:
        if p.grad is not None:
            p.grad = None
    loss = loss_fn()
    if not torch.isfinite(loss):
        raise ParameterError("loss is not finite")
    loss.backward()
    worst = 0.0
    for p in params:
        grad = p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p)
        flat = p.data.view(-1)
        gflat = grad.view(-1)
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + eps
            with torch.no_grad():
                hi = loss_fn().item()
            flat[i] = orig - eps
            with torch.no_grad():
                lo = loss_fn().item()
            flat[i] = orig
            numeric = (hi - lo) / (2.0 * eps)
            analytic = gflat[i].item()
            err = abs(analytic - numeric) / max(1.0, abs(analytic), abs(numeric))
            worst = max(worst, err)
    return worst
