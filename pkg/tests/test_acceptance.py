"""Acceptance suite: one test per shipping criterion.

Every test prints a single verdict line ("[ACCEPTANCE n] name: PASS|FAIL
(detail)") so a verbose run reads as a checklist; the runtime budget is part
of each criterion. Criteria 5 and 6 are hour-scale CPU training runs and
carry the `experiment` (and `slow`) markers; skip them with
`-m "not experiment"` during development. Oracles here are deliberately
self-contained scalar loops, independent of the library code they check.
"""

import math
import time

import numpy as np
import pytest
import torch
from torch import nn

from semdeblur.blur import KERNEL_SIZES, BlurKernel, apply_blur, degrade, \
    generate_kernel_bank, DegradationConfig
from semdeblur.dataset import load_image, load_manifest, quantize01, \
    synthesize_dataset
from semdeblur.experiments import overfit_experiment, parsing_overfit_experiment, \
    semantic_sensitivity_experiment
from semdeblur.facegen import write_demo_dataset
from semdeblur.losses import LossWeights, RandomConvExtractor, ScaleTerms, \
    adversarial_losses, content_loss, perceptual_loss, structural_loss, total_loss
from semdeblur.metrics import fscore, psnr, ssim, topk_recognition
from semdeblur.networks import DiscriminatorConfig, GeneratorConfig, \
    build_discriminator, build_generator
from semdeblur.semantics import NUM_CLASSES, STRUCTURAL_CLASS_IDS
from semdeblur.training import TrainConfig, DeblurTrainState, direct_schedule, \
    finite_diff_gradcheck, incremental_schedule, active_kernel_subset, \
    load_trainer_state, make_optimizer, params_checksum, train_deblurring

BUDGET_S = {1: 10.0, 2: 120.0, 3: 10.0, 4: 1.0, 5: 7200.0, 6: 14400.0,
            7: 30.0, 8: 600.0, 9: 300.0}


def _verdict(num: int, name: str, ok: bool, detail: str = "") -> bool:
    line = f"[ACCEPTANCE {num}] {name}: {'PASS' if ok else 'FAIL'}"
    if detail:
        line += f" ({detail})"
    print(line)
    return ok


# ---------------------------------------------------------------- oracles

def _loop_conv(img, taps):
    """Replicate-boundary correlation as an explicit pixel loop."""
    img = np.asarray(img, dtype=np.float64)
    taps = np.asarray(taps, dtype=np.float64)
    k = taps.shape[0]
    h = k // 2
    padded = np.pad(img, h, mode="edge")
    out = np.empty_like(img)
    for y in range(img.shape[0]):
        for x in range(img.shape[1]):
            out[y, x] = (padded[y:y + k, x:x + k] * taps).sum()
    return out


def _delta_kernel(size):
    taps = np.zeros((size, size), dtype=np.float32)
    taps[size // 2, size // 2] = 1.0
    return BlurKernel(taps=taps, size=size, source_seed=0)


def _dyadic_kernel(rng, size, denom_bits=12):
    """Taps are dyadic rationals summing to exactly 1, so correlating a
    dyadic constant is exact in float64."""
    counts = rng.multinomial(2 ** denom_bits,
                             np.full(size * size, 1.0 / (size * size)))
    return counts.reshape(size, size).astype(np.float64) / (2 ** denom_bits)


def _content_oracle(pred, gt):
    acc = 0.0
    c, h, w = pred.shape
    for ci in range(c):
        for y in range(h):
            for x in range(w):
                acc += abs(pred[ci, y, x] - gt[ci, y, x])
    return acc / (c * h * w)


def _structural_oracle(pred, gt, sem):
    c, h, w = pred.shape
    total = 0.0
    for cid in STRUCTURAL_CLASS_IDS:
        acc = 0.0
        for ci in range(c):
            for y in range(h):
                for x in range(w):
                    acc += sem[cid, y, x] * abs(pred[ci, y, x] - gt[ci, y, x])
        total += acc / (c * h * w)
    return total


def _conv_s2_relu_oracle(x, weight, bias):
    """3x3 stride-2 zero-padded convolution plus ReLU, as explicit loops."""
    cin, h, w = x.shape
    cout = weight.shape[0]
    oh = (h + 2 - 3) // 2 + 1
    ow = (w + 2 - 3) // 2 + 1
    padded = np.zeros((cin, h + 2, w + 2))
    padded[:, 1:-1, 1:-1] = x
    out = np.zeros((cout, oh, ow))
    for co in range(cout):
        for oy in range(oh):
            for ox in range(ow):
                acc = bias[co]
                for ci in range(cin):
                    patch = padded[ci, 2 * oy:2 * oy + 3, 2 * ox:2 * ox + 3]
                    acc += float((patch * weight[co, ci]).sum())
                out[co, oy, ox] = acc
    return np.maximum(out, 0.0)


def _perceptual_oracle(pred, gt, extractor):
    w1 = extractor.conv1.weight.detach().numpy().astype(np.float64)
    b1 = extractor.conv1.bias.detach().numpy().astype(np.float64)
    w2 = extractor.conv2.weight.detach().numpy().astype(np.float64)
    b2 = extractor.conv2.bias.detach().numpy().astype(np.float64)
    total = 0.0
    f1 = {}
    for name, img in (("p", pred), ("g", gt)):
        f1[name] = _conv_s2_relu_oracle(img, w1, b1)
    total += float(((f1["p"] - f1["g"]) ** 2).mean())
    f2p = _conv_s2_relu_oracle(f1["p"], w2, b2)
    f2g = _conv_s2_relu_oracle(f1["g"], w2, b2)
    total += float(((f2p - f2g) ** 2).mean())
    return total


def _adversarial_oracle(d_real, d_fake, eps=1e-7):
    dr = [min(max(float(v), eps), 1.0 - eps) for v in d_real]
    df = [min(max(float(v), eps), 1.0 - eps) for v in d_fake]
    g = sum(-math.log(f) for f in df) / len(df)
    d = sum(-math.log(r) for r in dr) / len(dr) \
        + sum(-math.log(1.0 - f) for f in df) / len(df)
    return g, d


def _ssim_oracle(a, b, window_size=11, sigma=1.5, k1=0.01, k2=0.03):
    """Windowed SSIM with definitional (x - mu)^2 moments at each position."""
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    luma = np.array([0.299, 0.587, 0.114])
    if x.ndim == 3:
        x = x @ luma
        y = y @ luma
    half = window_size // 2
    ax = np.arange(window_size, dtype=np.float64) - half
    g1 = np.exp(-ax ** 2 / (2.0 * sigma ** 2))
    w = np.outer(g1, g1)
    w /= w.sum()
    c1, c2 = k1 ** 2, k2 ** 2
    vals = []
    for yy in range(half, x.shape[0] - half):
        for xx in range(half, x.shape[1] - half):
            px = x[yy - half:yy + half + 1, xx - half:xx + half + 1]
            py = y[yy - half:yy + half + 1, xx - half:xx + half + 1]
            mx = float((w * px).sum())
            my = float((w * py).sum())
            vx = float((w * (px - mx) ** 2).sum())
            vy = float((w * (py - my) ** 2).sum())
            cxy = float((w * (px - mx) * (py - my)).sum())
            vals.append(((2 * mx * my + c1) * (2 * cxy + c2))
                        / ((mx ** 2 + my ** 2 + c1) * (vx + vy + c2)))
    return float(np.mean(vals))


def _topk_oracle(probes, probe_ids, gallery, gallery_ids, k):
    hits = 0
    for v, pid in zip(probes, probe_ids):
        scored = sorted((float(np.linalg.norm(g - v)), j)
                        for j, g in enumerate(gallery))
        near = [gallery_ids[j] for _, j in scored[:k]]
        hits += int(pid in near)
    return hits / len(probes)


def _simplex(rng, h, w):
    m = rng.random((NUM_CLASSES, h, w)) + 1e-3
    return m / m.sum(axis=0, keepdims=True)


# --------------------------------------------------------------- criteria

def test_criterion_1_degradation_invariants():
    t0 = time.monotonic()
    rng = np.random.default_rng(101)

    bank = generate_kernel_bank(16, KERNEL_SIZES, seed=3)
    sum_err = max(abs(float(k.taps.sum()) - 1.0) for k in bank.kernels)

    img = rng.random((20, 20, 3))
    delta_ok = np.array_equal(apply_blur(img, _delta_kernel(13)), img)

    fixed_ok = True
    for c in (0.5, 0.375):
        for size in (5, 13):
            const = np.full((16, 16), c)
            out = apply_blur(const, _dyadic_kernel(rng, size))
            fixed_ok = fixed_ok and np.array_equal(out, const)

    worst = 0.0
    for _ in range(50):
        size = int(rng.choice([3, 5, 7, 9, 11, 13]))
        taps = rng.random((size, size))
        taps /= taps.sum()
        case = rng.random((16, 16))
        worst = max(worst, float(np.abs(apply_blur(case, taps)
                                        - _loop_conv(case, taps)).max()))

    dt = time.monotonic() - t0
    ok = sum_err <= 1e-6 and delta_ok and fixed_ok and worst <= 1e-10 \
        and dt < BUDGET_S[1]
    assert _verdict(1, "degradation invariants", ok,
                    f"kernel sum err {sum_err:.1e}, delta exact {delta_ok}, "
                    f"const fixed point {fixed_ok}, conv oracle err {worst:.1e}, "
                    f"{dt:.1f}s")


MINI_GEN = GeneratorConfig(channels=4, resblocks_per_scale=1, first_conv_kernel=5)


def _mini_generator_case(rng, size, seed):
    """Double-precision miniature generator with targets pushed a fixed
    margin away from its outputs, keeping |pred - gt| off the abs() kink."""
    gen = build_generator(MINI_GEN, seed=seed).double()
    gen.train()
    blurred = torch.tensor(rng.random((1, 3, size, size)), dtype=torch.float64)
    sem = torch.tensor(_simplex(rng, size, size)[None], dtype=torch.float64)
    with torch.no_grad():
        coarse0, fine0 = gen(blurred, sem)

    def offset_from(base):
        sign = np.where(rng.random(tuple(base.shape)) < 0.5, -1.0, 1.0)
        mag = 0.2 + 0.3 * rng.random(tuple(base.shape))
        return base + torch.tensor(sign * mag, dtype=torch.float64)

    gt_coarse = offset_from(coarse0)
    gt_fine = offset_from(fine0)
    params = [p for _, p in gen.named_parameters() if p.numel() <= 8]
    return gen, blurred, sem, gt_coarse, gt_fine, params


def test_criterion_2_loss_correctness():
    t0 = time.monotonic()
    rng = np.random.default_rng(202)
    tol = 1e-9

    worst_content = worst_struct = worst_perc = worst_adv = 0.0
    feat = RandomConvExtractor(seed=7)
    for _ in range(20):
        pred = rng.random((3, 8, 8))
        gt = rng.random((3, 8, 8))
        sem = _simplex(rng, 8, 8)
        pred_t = torch.tensor(pred[None], dtype=torch.float64)
        gt_t = torch.tensor(gt[None], dtype=torch.float64)
        sem_t = torch.tensor(sem[None], dtype=torch.float64)
        worst_content = max(worst_content, abs(
            content_loss(pred_t, gt_t).item() - _content_oracle(pred, gt)))
        worst_struct = max(worst_struct, abs(
            structural_loss(pred_t, gt_t, sem_t).item()
            - _structural_oracle(pred, gt, sem)))
        worst_perc = max(worst_perc, abs(
            perceptual_loss(pred_t, gt_t, feat).item()
            - _perceptual_oracle(pred, gt, feat)))
        dr = rng.uniform(1e-4, 1.0 - 1e-4, 8)
        df = rng.uniform(1e-4, 1.0 - 1e-4, 8)
        g_got, d_got = adversarial_losses(torch.tensor(dr), torch.tensor(df))
        g_want, d_want = _adversarial_oracle(dr, df)
        worst_adv = max(worst_adv, abs(g_got.item() - g_want),
                        abs(d_got.item() - d_want))
    oracle_ok = max(worst_content, worst_struct, worst_perc, worst_adv) <= tol

    # weighted-total linearity against the hand formula
    vals = rng.random(6)
    terms = [ScaleTerms(*(torch.tensor(v, dtype=torch.float64)
                          for v in vals[:2])),
             ScaleTerms(*(torch.tensor(v, dtype=torch.float64)
                          for v in vals[2:]))]
    worst_lin = 0.0
    for lam_s, lam_p, lam_a in [(0.0, 0.0, 0.0), (1.0, 0.0, 0.0),
                                (0.0, 1.0, 0.0), (0.0, 0.0, 1.0),
                                (50.0, 1e-5, 5e-5), (7.25, 0.5, 2.0)]:
        got = total_loss(terms, LossWeights(lam_s, lam_p, lam_a)).item()
        want = vals[0] + vals[2] + lam_s * (vals[1] + vals[3]) \
            + lam_p * vals[4] + lam_a * vals[5]
        worst_lin = max(worst_lin, abs(got - want))
    linear_ok = worst_lin <= tol

    # finite-difference gradient checks through the miniature generator
    gen, blurred, sem16, gt_c, gt_f, params = _mini_generator_case(rng, 16, seed=11)

    def content_fn():
        _, fine = gen(blurred, sem16)
        return content_loss(fine, gt_f)

    def structural_fn():
        _, fine = gen(blurred, sem16)
        return structural_loss(fine, gt_f, sem16)

    def perceptual_fn():
        _, fine = gen(blurred, sem16)
        return perceptual_loss(fine, gt_f, feat)

    # eps below the distance of any ReLU preactivation from zero, so the
    # central difference never straddles a kink; float64 keeps roundoff low
    eps = 1e-6
    errs = {"content": finite_diff_gradcheck(content_fn, params, eps=eps),
            "structural": finite_diff_gradcheck(structural_fn, params, eps=eps),
            "perceptual": finite_diff_gradcheck(perceptual_fn, params, eps=eps)}

    gen64, blurred64, sem64, gt_c64, gt_f64, params64 = \
        _mini_generator_case(rng, 64, seed=13)
    sem32 = torch.tensor(_simplex(rng, 32, 32)[None], dtype=torch.float64)
    disc = build_discriminator(DiscriminatorConfig(input_size=64), seed=3).double()
    with torch.no_grad():
        d_real = disc(torch.tensor(rng.random((1, 3, 64, 64)),
                                   dtype=torch.float64))
    total_weights = LossWeights(lambda_s=50.0, lambda_p=1.0, lambda_adv=1.0)

    def total_fn():
        coarse, fine = gen64(blurred64, sem64)
        g_adv, _ = adversarial_losses(d_real, disc(fine))
        return total_loss(
            [ScaleTerms(content_loss(coarse, gt_c64),
                        structural_loss(coarse, gt_c64, sem32)),
             ScaleTerms(content_loss(fine, gt_f64),
                        structural_loss(fine, gt_f64, sem64),
                        perceptual_loss(fine, gt_f64, feat), g_adv)],
            total_weights)

    errs["total"] = finite_diff_gradcheck(total_fn, params64, eps=eps)
    grad_ok = max(errs.values()) < 1e-6

    dt = time.monotonic() - t0
    ok = oracle_ok and linear_ok and grad_ok and dt < BUDGET_S[2]
    assert _verdict(2, "loss correctness", ok,
                    f"oracle errs c{worst_content:.1e} s{worst_struct:.1e} "
                    f"p{worst_perc:.1e} a{worst_adv:.1e}, linearity "
                    f"{worst_lin:.1e}, grad errs "
                    + " ".join(f"{k}={v:.1e}" for k, v in errs.items())
                    + f", {dt:.1f}s")


def test_criterion_3_architecture_contracts():
    t0 = time.monotonic()
    gen = build_generator(GeneratorConfig(), seed=0)
    convs = [m for m in gen.modules() if isinstance(m, nn.Conv2d)]
    firsts = [c for c in convs if c.kernel_size == (11, 11)]
    others = [c for c in convs if c.kernel_size != (11, 11)]
    channels_ok = sorted(c.in_channels for c in firsts) == [14, 17]
    body_ok = all(c.kernel_size == (5, 5) and c.in_channels == 64
                  for c in others)

    rng = np.random.default_rng(303)
    blurred = torch.tensor(rng.random((2, 3, 128, 128)), dtype=torch.float32)
    sem = torch.tensor(np.stack([_simplex(rng, 128, 128)] * 2),
                       dtype=torch.float32)
    with torch.no_grad():
        coarse, fine = gen(blurred, sem)
    shapes_ok = tuple(coarse.shape) == (2, 3, 64, 64) \
        and tuple(fine.shape) == (2, 3, 128, 128)

    disc = build_discriminator(DiscriminatorConfig(), seed=1)
    strided = [m for m in disc.modules()
               if isinstance(m, nn.Conv2d) and m.stride == (2, 2)]
    with torch.no_grad():
        probs = disc(torch.tensor(rng.random((4, 3, 128, 128)),
                                  dtype=torch.float32))
    disc_ok = len(strided) == 6 and tuple(probs.shape) == (4,) \
        and bool((probs > 0).all()) and bool((probs < 1).all())

    dt = time.monotonic() - t0
    ok = channels_ok and body_ok and shapes_ok and disc_ok and dt < BUDGET_S[3]
    assert _verdict(3, "architecture contracts", ok,
                    f"first-conv in-channels "
                    f"{sorted(c.in_channels for c in firsts)}, "
                    f"{len(others)} body convs 5x5/64 {body_ok}, "
                    f"out shapes {shapes_ok}, disc {disc_ok}, {dt:.1f}s")


def test_criterion_4_schedule_correctness():
    t0 = time.monotonic()
    period = 30000
    schedule = incremental_schedule(KERNEL_SIZES, period_K=period)
    buckets = [set(g) for g in schedule.size_groups]

    # independent step simulation: start with the smallest bucket, add the
    # next one every `period` iterations until all are in
    idx = 0
    current = set(buckets[0])
    horizon = (len(buckets) + 1) * period + 2
    ok = True
    prev = set()
    for t in range(horizon):
        if t > 0 and t % period == 0 and idx < len(buckets) - 1:
            idx += 1
            current = current | buckets[idx]
        at_boundary = t % period in (0, 1, period - 1)
        if at_boundary or t % 997 == 0:
            active = active_kernel_subset(schedule, t)
            if active != current or not prev <= active:
                ok = False
                break
            prev = active
    saturated = active_kernel_subset(schedule, horizon) \
        == active_kernel_subset(schedule, 10 ** 9) == set(KERNEL_SIZES)

    dt = time.monotonic() - t0
    ok = ok and saturated and dt < BUDGET_S[4]
    assert _verdict(4, "schedule correctness", ok,
                    f"boundaries of {len(buckets)} buckets at K={period} "
                    f"match the step walk, saturated {saturated}, {dt:.2f}s")


@pytest.mark.experiment
@pytest.mark.slow
def test_criterion_5_overfit_gain(tmp_path):
    t0 = time.monotonic()
    res = overfit_experiment(tmp_path, seed=0, iters=3000)
    dt = time.monotonic() - t0
    ok = res.gain_db >= 3.0 and dt <= BUDGET_S[5]
    assert _verdict(5, "overfit gain", ok,
                    f"baseline {res.baseline_psnr:.2f} dB, trained "
                    f"{res.trained_psnr:.2f} dB, gain {res.gain_db:+.2f} dB "
                    f"after {res.iters} iters, {dt / 60:.1f} min")


@pytest.mark.experiment
@pytest.mark.slow
def test_criterion_6_semantic_sensitivity(tmp_path):
    t0 = time.monotonic()
    res = semantic_sensitivity_experiment(tmp_path, seeds=(0, 1, 2), iters=1000)
    dt = time.monotonic() - t0
    ok = res.semantic_mean >= res.uniform_mean and dt <= BUDGET_S[6]
    assert _verdict(6, "semantic sensitivity", ok,
                    f"semantic mean {res.semantic_mean:.3f} dB vs uniform "
                    f"{res.uniform_mean:.3f} dB over {len(res.semantic_psnrs)} "
                    f"seeds, {dt / 60:.1f} min")


def test_criterion_7_metric_oracles():
    t0 = time.monotonic()
    rng = np.random.default_rng(707)

    # analytic case: uniform difference 0.1 gives MSE 0.01, hence 20 dB
    psnr_exact = psnr(np.zeros((8, 8)), np.full((8, 8), 0.1)) == 20.0

    img = rng.random((32, 32, 3))
    self_err = abs(ssim(img, img) - 1.0)

    worst_ssim = 0.0
    for case in range(5):
        a = rng.random((16, 16))
        b = np.clip(a + rng.normal(0, 0.1, a.shape), 0, 1)
        worst_ssim = max(worst_ssim, abs(ssim(a, b) - _ssim_oracle(a, b)))
    for case in range(2):
        a = rng.random((18, 15, 3))
        b = rng.random((18, 15, 3))
        worst_ssim = max(worst_ssim, abs(ssim(a, b) - _ssim_oracle(a, b)))

    ids = [f"id{j}" for j in range(10)]
    gallery = rng.normal(size=(40, 6))
    gallery_ids = [ids[j % 10] for j in range(40)]
    probes = rng.normal(size=(20, 6))
    probe_ids = [ids[j % 10] for j in range(20)]
    topk_ok = all(
        topk_recognition(probes, probe_ids, gallery, gallery_ids, k)
        == _topk_oracle(probes, probe_ids, gallery, gallery_ids, k)
        for k in (1, 2, 3, 5, 40))

    dt = time.monotonic() - t0
    ok = psnr_exact and self_err <= 1e-9 and worst_ssim <= 1e-7 and topk_ok \
        and dt < BUDGET_S[7]
    assert _verdict(7, "metric oracles", ok,
                    f"psnr 20dB exact {psnr_exact}, ssim self err "
                    f"{self_err:.1e}, ssim transcription err {worst_ssim:.1e}, "
                    f"topk exact {topk_ok}, {dt:.1f}s")


@pytest.mark.slow
def test_criterion_8_parsing_smoke(tmp_path):
    t0 = time.monotonic()
    res = parsing_overfit_experiment(tmp_path, seed=0, max_iters=2000)

    gt = np.zeros((6, 6), dtype=np.int64)
    gt[1:3, 1:3] = 1  # class 1 occupies four pixels
    perfect = fscore(gt, gt, 1) == 1.0
    disjoint = fscore(np.zeros_like(gt), gt, 1) == 0.0
    half = gt.copy()
    half[1, :] = 0  # prediction recovers two of the four pixels
    two_thirds = fscore(half, gt, 1) == 2.0 / 3.0

    dt = time.monotonic() - t0
    ok = res.accuracy >= 0.99 and res.reached_at is not None \
        and res.reached_at <= 2000 and perfect and disjoint and two_thirds \
        and dt <= BUDGET_S[8]
    assert _verdict(8, "parsing smoke", ok,
                    f"accuracy {res.accuracy:.4f} at iter {res.reached_at}, "
                    f"fscore cases exact "
                    f"{perfect and disjoint and two_thirds}, {dt / 60:.1f} min")


SMALL_GEN = GeneratorConfig(channels=8, resblocks_per_scale=1,
                            first_conv_kernel=3)
_REPLAY_KEYS = ("loss", "content64", "content128", "structural64",
                "structural128", "perceptual")


def test_criterion_9_reproducibility(tmp_path, small_manifest):
    t0 = time.monotonic()

    def fresh_state(total_iters):
        cfg = TrainConfig(total_iters=total_iters, batch_size=2,
                          weights=LossWeights(lambda_s=50.0, lambda_p=1e-5,
                                              lambda_adv=0.0),
                          seed=0, log_every=1)
        gen = build_generator(SMALL_GEN, seed=0)
        return DeblurTrainState(
            gen=gen, disc=None, parser=None,
            opt_g=make_optimizer(gen.parameters(), cfg.lr_deblur), opt_d=None,
            schedule=direct_schedule([13]), cfg=cfg, semantic_source="labels")

    def rows(history):
        return [tuple(r[k] for k in _REPLAY_KEYS) for r in history]

    feat = RandomConvExtractor(seed=0)
    straight = fresh_state(6)
    hist_a = train_deblurring(straight, small_manifest, feature_extractor=feat,
                              val_entries=0)["history"]

    part = fresh_state(3)
    train_deblurring(part, small_manifest, out_dir=tmp_path / "ck",
                     feature_extractor=RandomConvExtractor(seed=0),
                     val_entries=0)
    resumed = load_trainer_state(tmp_path / "ck" / "trainer.ckpt")
    resumed.cfg.total_iters = 6
    hist_b = train_deblurring(resumed, small_manifest,
                              feature_extractor=RandomConvExtractor(seed=0),
                              val_entries=0)["history"]
    replay_ok = rows(hist_a[3:]) == rows(hist_b) \
        and params_checksum(straight.gen) == params_checksum(resumed.gen)

    # the same sources and seed must regenerate the dataset bit for bit
    faces = write_demo_dataset(tmp_path / "faces", num_identities=1,
                               per_identity=2, seed=4, size=32)
    bank = generate_kernel_bank(1, (13,), seed=9)
    deg = DegradationConfig(noise_sigma=0.01, rng_seed=6)
    outs = []
    for run in ("a", "b"):
        m = synthesize_dataset(faces["clear"], faces["labels"], bank, deg,
                               tmp_path / run, materialize=True, seed=6,
                               out_size=32)
        outs.append(m)
    bytes_ok = ((tmp_path / "a" / "manifest.jsonl").read_bytes()
                == (tmp_path / "b" / "manifest.jsonl").read_bytes())
    for entry in outs[0].entries:
        bytes_ok = bytes_ok and (
            outs[0].path(entry.blurred_path).read_bytes()
            == outs[1].path(entry.blurred_path).read_bytes())
    reloaded = load_manifest(tmp_path / "a" / "manifest.jsonl")
    regen_ok = True
    for entry in reloaded.entries:
        stored = load_image(reloaded.path(entry.blurred_path))
        clear = load_image(reloaded.path(entry.clear_path))
        recomputed = quantize01(degrade(
            clear, reloaded.bank[entry.kernel_id], DegradationConfig(
                noise_sigma=reloaded.degradation.noise_sigma,
                boundary=reloaded.degradation.boundary,
                rng_seed=entry.noise_seed)))
        regen_ok = regen_ok and np.array_equal(stored, recomputed)

    dt = time.monotonic() - t0
    ok = replay_ok and bytes_ok and regen_ok and dt < BUDGET_S[9]
    assert _verdict(9, "reproducibility", ok,
                    f"resume replay {replay_ok}, rebuild bytes {bytes_ok}, "
                    f"regeneration from manifest {regen_ok}, {dt:.1f}s")
