"""The four training loss terms and their weighted combination.

Reductions are means over all elements (not sums), so magnitudes are
resolution-independent; the published weight defaults are used with this
convention. All terms accept torch tensors (NCHW or CHW) or numpy images
(HWC) and stay inside autograd when given tensors that require grad.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from .errors import ContractError, ParameterError, ProtocolError
from .semantics import NUM_CLASSES, STRUCTURAL_CLASS_IDS, SemanticMap

PROB_EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    lambda_s: float = 50.0
    lambda_p: float = 1e-5
    lambda_adv: float = 5e-5

    def __post_init__(self):
        for name in ("lambda_s", "lambda_p", "lambda_adv"):
            if getattr(self, name) < 0:
                raise ParameterError(f"{name} must be >= 0")


@dataclass(frozen=True)
class StructuralMaskSet:
    """Soft [0,1] masks for the 8 structural face components."""

    masks: tuple  # of (class_id, HxW array)

    def __post_init__(self):
        for cid, mask in self.masks:
            if cid not in STRUCTURAL_CLASS_IDS:
                raise ParameterError(f"class {cid} is not structural")
            m = np.asarray(mask)
            if m.min() < 0 or m.max() > 1 + 1e-6:
                raise ParameterError(f"mask for class {cid} leaves [0,1]")


def _img_tensor(x) -> torch.Tensor:
    """Normalize image-like input to an NCHW tensor, preserving dtype/grad."""
    if isinstance(x, SemanticMap):
        x = x.probs
    if isinstance(x, torch.Tensor):
        if x.ndim == 3:
            return x[None]
        if x.ndim == 4:
            return x
        raise ParameterError(f"expected CHW or NCHW tensor, got shape {tuple(x.shape)}")
    arr = np.asarray(x)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ParameterError(f"expected HxW or HxWxC array, got shape {arr.shape}")
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(2, 0, 1)))[None]


def content_loss(pred, gt) -> torch.Tensor:
    """Mean absolute difference over all pixels and channels."""
    p = _img_tensor(pred)
    g = _img_tensor(gt)
    if p.shape != g.shape:
        raise ParameterError(f"shape mismatch {tuple(p.shape)} vs {tuple(g.shape)}")
    return (p - g).abs().mean()


def structural_masks(sem: SemanticMap) -> StructuralMaskSet:
    """One soft mask per structural class: the raw probability channel."""
    masks = tuple((cid, sem.channel(cid).copy()) for cid in STRUCTURAL_CLASS_IDS)
    return StructuralMaskSet(masks=masks)


def structural_loss(pred, gt, sem) -> torch.Tensor:
    """Sum over structural classes of mean(mask_k * |pred - gt|).

    Masks broadcast over the color channels; `sem` is a SemanticMap or an
    11-channel tensor at the prediction's resolution.
    """
    p = _img_tensor(pred)
    g = _img_tensor(gt)
    s = _img_tensor(sem)
    if p.shape != g.shape:
        raise ParameterError(f"shape mismatch {tuple(p.shape)} vs {tuple(g.shape)}")
    if s.shape[1] != NUM_CLASSES:
        raise ParameterError(f"semantics must have {NUM_CLASSES} channels, got {s.shape[1]}")
    if s.shape[2:] != p.shape[2:] or s.shape[0] != p.shape[0]:
        raise ParameterError("semantics resolution does not match the prediction")
    diff = (p - g).abs()
    s = s.to(diff.dtype)
    total = diff.new_zeros(())
    for cid in STRUCTURAL_CLASS_IDS:
        total = total + (s[:, cid:cid + 1] * diff).mean()
    return total


class FeatureExtractor:
    """Named-layer feature interface for the perceptual loss."""

    layer_names: tuple[str, ...] = ()

    def extract(self, images: torch.Tensor) -> dict[str, torch.Tensor]:
        raise NotImplementedError


class IdentityExtractor(FeatureExtractor):
    """Raw pixels as the single feature layer; reduces the loss to MSE."""

    layer_names = ("pixels",)

    def extract(self, images: torch.Tensor) -> dict[str, torch.Tensor]:
        return {"pixels": images}


class RandomConvExtractor(FeatureExtractor):
    """Fixed-seed random convolution stack standing in for a pretrained net.

    Two stride-2 conv+ReLU stages; weights are frozen at construction so the
    features are a deterministic function of (seed, input).
    """

    layer_names = ("feat1", "feat2")

    def __init__(self, seed: int = 0, channels: tuple[int, int] = (8, 16)):
        g = torch.Generator(device="cpu")
        g.manual_seed(seed)
        c1, c2 = channels
        self.conv1 = nn.Conv2d(3, c1, 3, stride=2, padding=1)
        self.conv2 = nn.Conv2d(c1, c2, 3, stride=2, padding=1)
        for conv in (self.conv1, self.conv2):
            fan_in = conv.weight.shape[1] * conv.weight.shape[2] * conv.weight.shape[3]
            bound = 1.0 / np.sqrt(fan_in)
            with torch.no_grad():
                conv.weight.uniform_(-bound, bound, generator=g)
                conv.bias.uniform_(-bound, bound, generator=g)
            conv.weight.requires_grad_(False)
            conv.bias.requires_grad_(False)

    def _apply_conv(self, conv: nn.Conv2d, x: torch.Tensor) -> torch.Tensor:
        w = conv.weight.to(x.dtype)
        b = conv.bias.to(x.dtype)
        return F.relu(F.conv2d(x, w, b, stride=2, padding=1))

    def extract(self, images: torch.Tensor) -> dict[str, torch.Tensor]:
        if images.shape[1] != 3:
            raise ParameterError(f"extractor expects RGB input, got {images.shape[1]} channels")
        f1 = self._apply_conv(self.conv1, images)
        f2 = self._apply_conv(self.conv2, f1)
        return {"feat1": f1, "feat2": f2}


def perceptual_loss(pred, gt, feat: FeatureExtractor, layers=None) -> torch.Tensor:
    """Sum over layers of the mean squared feature difference."""
    p = _img_tensor(pred)
    g = _img_tensor(gt)
    if p.shape != g.shape:
        raise ParameterError(f"shape mismatch {tuple(p.shape)} vs {tuple(g.shape)}")
    names = tuple(layers) if layers is not None else tuple(feat.layer_names)
    if not names:
        raise ProtocolError("feature extractor exposes no layers")
    missing = [n for n in names if n not in feat.layer_names]
    if missing:
        raise ProtocolError(f"extractor does not expose layers {missing}")
    fp = feat.extract(p)
    fg = feat.extract(g)
    total = p.new_zeros(())
    for name in names:
        total = total + (fp[name] - fg[name]).pow(2).mean()
    return total


def adversarial_losses(d_real, d_fake) -> tuple[torch.Tensor, torch.Tensor]:
    """Generator and discriminator objectives from scalar probabilities.

    Inputs outside (eps, 1-eps) are clamped; batched inputs are averaged.
    """
    dr = torch.as_tensor(d_real).clamp(PROB_EPS, 1.0 - PROB_EPS)
    df = torch.as_tensor(d_fake).clamp(PROB_EPS, 1.0 - PROB_EPS)
    g_loss = (-torch.log(df)).mean()
    d_loss = (-torch.log(dr) - torch.log(1.0 - df)).mean()
    return g_loss, d_loss


@dataclass
class ScaleTerms:
    """Loss terms for one generator scale; finest scale may add the GAN terms."""

    content: object
    structural: object
    perceptual: object = None
    adversarial: object = None


def total_loss(terms, weights: LossWeights) -> torch.Tensor:
    """Weighted combination across scales.

    Content and structural apply at every scale; perceptual and adversarial
    only at the finest (last) scale.
    """
    terms = list(terms)
    if len(terms) != 2:
        raise ParameterError(f"expected terms for exactly 2 scales, got {len(terms)}")
    for coarse in terms[:-1]:
        if coarse.perceptual is not None or coarse.adversarial is not None:
            raise ContractError(
                "perceptual/adversarial terms are only defined at the finest scale")
    total = torch.as_tensor(0.0)
    for t in terms:
        total = total + torch.as_tensor(t.content) + weights.lambda_s * torch.as_tensor(t.structural)
    fine = terms[-1]
    if fine.perceptual is not None:
        total = total + weights.lambda_p * torch.as_tensor(fine.perceptual)
    if fine.adversarial is not None:
        total = total + weights.lambda_adv * torch.as_tensor(fine.adversarial)
    return total
