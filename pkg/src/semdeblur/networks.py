"""Network definitions: face parser, two-scale deblurring generator, discriminator.

All parameter initialization is driven by an explicit torch.Generator so two
builds from the same seed are bit-identical. Tensors use NCHW; the numpy
image interface (HWC in [0,1]) is converted at the boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from .errors import ConfigError, ParameterError
from .semantics import NUM_CLASSES, SemanticMap


@dataclass(frozen=True)
class ParsingModelConfig:
    num_classes: int = NUM_CLASSES
    encoder_depth: int = 4
    base_channels: int = 32
    skip_connections: bool = True

    def __post_init__(self):
        if self.num_classes != NUM_CLASSES:
            raise ConfigError(f"num_classes is fixed at {NUM_CLASSES}, got {self.num_classes}")
        if self.encoder_depth < 1:
            raise ConfigError(f"encoder_depth must be >= 1, got {self.encoder_depth}")
        if self.base_channels < 1:
            raise ConfigError(f"base_channels must be >= 1, got {self.base_channels}")
        if not self.skip_connections:
            raise ConfigError("skip_connections is always true for this architecture")


@dataclass(frozen=True)
class GeneratorConfig:
    num_scales: int = 2
    resblocks_per_scale: int = 6
    first_conv_kernel: int = 11
    conv_kernel: int = 5
    channels: int = 64
    scale1_in_channels: int = 3 + NUM_CLASSES      # blurred RGB + semantics
    scale2_in_channels: int = 3 + 3 + NUM_CLASSES  # upsampled + blurred + semantics

    def __post_init__(self):
        if self.num_scales != 2:
            raise ConfigError(f"num_scales is fixed at 2, got {self.num_scales}")
        if self.scale1_in_channels != 3 + NUM_CLASSES:
            raise ConfigError(f"scale1_in_channels must be {3 + NUM_CLASSES}")
        if self.scale2_in_channels != 3 + 3 + NUM_CLASSES:
            raise ConfigError(f"scale2_in_channels must be {3 + 3 + NUM_CLASSES}")
        for name in ("resblocks_per_scale", "channels"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        for name in ("first_conv_kernel", "conv_kernel"):
            if getattr(self, name) % 2 == 0:
                raise ConfigError(f"{name} must be odd")


@dataclass(frozen=True)
class DiscriminatorConfig:
    input_size: int = 128
    strided_layers: int = 6
    base_channels: int = 32
    max_channels: int = 256

    def __post_init__(self):
        if self.strided_layers != 6:
            raise ConfigError(f"strided_layers is fixed at 6, got {self.strided_layers}")
        if self.input_size % (2 ** self.strided_layers) != 0:
            raise ConfigError(
                f"input_size {self.input_size} not divisible by 2^{self.strided_layers}")


def seeded_init_(module: nn.Module, seed: int) -> None:
    """Re-init every weight/bias pair uniformly in +-1/sqrt(fan_in)."""
    g = torch.Generator(device="cpu")
    g.manual_seed(seed)
    for m in module.modules():
        weight = getattr(m, "weight", None)
        if weight is None or not isinstance(weight, torch.Tensor):
            continue
        if isinstance(m, nn.ConvTranspose2d):
            fan_in = weight.shape[0] * weight.shape[2] * weight.shape[3]
        elif weight.ndim >= 2:
            fan_in = int(np.prod(weight.shape[1:]))
        else:
            fan_in = weight.shape[0]
        bound = 1.0 / math.sqrt(fan_in)
        with torch.no_grad():
            weight.uniform_(-bound, bound, generator=g)
            bias = getattr(m, "bias", None)
            if bias is not None:
                bias.uniform_(-bound, bound, generator=g)


class ParsingModel(nn.Module):
    """Encoder-decoder with skip concatenations; outputs pre-softmax scores."""

    def __init__(self, cfg: ParsingModelConfig):
        super().__init__()
        self.cfg = cfg
        chans = [cfg.base_channels * (2 ** i) for i in range(cfg.encoder_depth)]
        self.stem = nn.Conv2d(3, chans[0], 3, padding=1)
        downs, fuses = [], []
        prev = chans[0]
        for c in chans:
            downs.append(nn.Sequential(
                nn.Conv2d(prev, c, 3, stride=2, padding=1), nn.ReLU(),
                nn.Conv2d(c, c, 3, padding=1), nn.ReLU()))
            prev = c
        self.downs = nn.ModuleList(downs)
        ups = []
        skip_chans = [chans[0]] + chans[:-1]  # stem + all but deepest encoder stage
        for c_in, c_skip in zip(reversed(chans), reversed(skip_chans)):
            ups.append(nn.ConvTranspose2d(c_in, c_skip, 4, stride=2, padding=1))
            fuses.append(nn.Sequential(
                nn.Conv2d(2 * c_skip, c_skip, 3, padding=1), nn.ReLU()))
        self.ups = nn.ModuleList(ups)
        self.fuses = nn.ModuleList(fuses)
        self.head = nn.Conv2d(chans[0], cfg.num_classes, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1] != 3:
            raise ParameterError(f"expected Bx3xHxW input, got {tuple(x.shape)}")
        feats = [F.relu(self.stem(x))]
        for down in self.downs:
            feats.append(down(feats[-1]))
        y = feats[-1]
        skips = feats[:-1]
        for up, fuse, skip in zip(self.ups, self.fuses, reversed(skips)):
            y = F.relu(up(y))
            y = fuse(torch.cat([y, skip], dim=1))
        return self.head(y)


def build_parsing_model(cfg: ParsingModelConfig, seed: int) -> ParsingModel:
    model = ParsingModel(cfg)
    seeded_init_(model, seed)
    return model


class ResBlock(nn.Module):
    def __init__(self, channels: int, kernel: int):
        super().__init__()
        pad = kernel // 2
        self.conv1 = nn.Conv2d(channels, channels, kernel, padding=pad)
        self.conv2 = nn.Conv2d(channels, channels, kernel, padding=pad)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x + self.conv2(F.relu(self.conv1(x)))


class _ScaleTrunk(nn.Module):
    """first conv (large kernel) -> N ResBlocks -> 5x5 output conv to RGB."""

    def __init__(self, in_channels: int, cfg: GeneratorConfig):
        super().__init__()
        self.first = nn.Conv2d(in_channels, cfg.channels, cfg.first_conv_kernel,
                               padding=cfg.first_conv_kernel // 2)
        self.blocks = nn.Sequential(
            *[ResBlock(cfg.channels, cfg.conv_kernel) for _ in range(cfg.resblocks_per_scale)])
        self.out = nn.Conv2d(cfg.channels, 3, cfg.conv_kernel, padding=cfg.conv_kernel // 2)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.out(self.blocks(F.relu(self.first(x))))


class Generator(nn.Module):
    """Two-scale restoration network conditioned on semantic probabilities.

    No global input-to-output residual: a zero-parameter network produces
    the zero image.
    """

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.cfg = cfg
        self.scale1 = _ScaleTrunk(cfg.scale1_in_channels, cfg)
        self.upsample = nn.ConvTranspose2d(3, 3, 4, stride=2, padding=1)
        self.scale2 = _ScaleTrunk(cfg.scale2_in_channels, cfg)

    @staticmethod
    def _downsample_semantics(sem: torch.Tensor) -> torch.Tensor:
        down = F.avg_pool2d(sem, 2)
        return down / down.sum(dim=1, keepdim=True).clamp_min(1e-12)

    def forward(self, blurred: torch.Tensor, sem: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        if blurred.ndim != 4 or blurred.shape[1] != 3:
            raise ParameterError(f"expected Bx3xHxW blurred input, got {tuple(blurred.shape)}")
        if sem.ndim != 4 or sem.shape[1] != NUM_CLASSES:
            raise ParameterError(
                f"expected Bx{NUM_CLASSES}xHxW semantics, got {tuple(sem.shape)}")
        if sem.shape[2:] != blurred.shape[2:]:
            raise ParameterError("semantics and image spatial sizes differ")
        if blurred.shape[2] % 2 or blurred.shape[3] % 2:
            raise ParameterError("input height and width must be even")
        blur_lo = F.avg_pool2d(blurred, 2)
        sem_lo = self._downsample_semantics(sem)
        x1 = torch.cat([blur_lo, sem_lo], dim=1)
        assert x1.shape[1] == self.cfg.scale1_in_channels
        out_lo = self.scale1(x1)
        up = self.upsample(out_lo)
        x2 = torch.cat([up, blurred, sem], dim=1)
        assert x2.shape[1] == self.cfg.scale2_in_channels
        out_hi = self.scale2(x2)
        if not self.training:
            out_lo = out_lo.clamp(0.0, 1.0)
            out_hi = out_hi.clamp(0.0, 1.0)
        return out_lo, out_hi


def build_generator(cfg: GeneratorConfig, seed: int) -> Generator:
    gen = Generator(cfg)
    seeded_init_(gen, seed)
    return gen


class Discriminator(nn.Module):
    """Six stride-2 convolutions with ReLU, then a sigmoid scalar head."""

    def __init__(self, cfg: DiscriminatorConfig):
        super().__init__()
        self.cfg = cfg
        layers = []
        prev = 3
        c = cfg.base_channels
        for _ in range(cfg.strided_layers):
            layers += [nn.Conv2d(prev, c, 4, stride=2, padding=1), nn.ReLU()]
            prev = c
            c = min(c * 2, cfg.max_channels)
        self.features = nn.Sequential(*layers)
        side = cfg.input_size // (2 ** cfg.strided_layers)
        self.head = nn.Linear(prev * side * side, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1] != 3 or x.shape[2] != self.cfg.input_size \
                or x.shape[3] != self.cfg.input_size:
            raise ParameterError(
                f"expected Bx3x{self.cfg.input_size}x{self.cfg.input_size}, "
                f"got {tuple(x.shape)}")
        y = self.features(x)
        return torch.sigmoid(self.head(y.flatten(1))).squeeze(1)


def build_discriminator(cfg: DiscriminatorConfig, seed: int) -> Discriminator:
    disc = Discriminator(cfg)
    seeded_init_(disc, seed)
    return disc


def to_tensor(image: np.ndarray) -> torch.Tensor:
    """HWC (or HW) numpy image in [0,1] -> 1CHW float32 tensor."""
    img = np.asarray(image, dtype=np.float32)
    if img.ndim == 2:
        img = img[:, :, None]
    return torch.from_numpy(np.ascontiguousarray(img.transpose(2, 0, 1)))[None]


def to_image(t: torch.Tensor) -> np.ndarray:
    """1CHW or CHW tensor -> HWC float32 numpy array."""
    if t.ndim == 4:
        t = t[0]
    return t.detach().cpu().numpy().transpose(1, 2, 0)


def sem_to_tensor(sem: SemanticMap) -> torch.Tensor:
    return to_tensor(sem.probs)


def parse_face(model: ParsingModel, image: np.ndarray) -> SemanticMap:
    """Run the parser on one HxWx3 image and softmax into a SemanticMap."""
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ParameterError(f"expected HxWx3 image, got shape {img.shape}")
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            scores = model(to_tensor(img))
            probs = torch.softmax(scores, dim=1)
    finally:
        model.train(was_training)
    return SemanticMap(probs=to_image(probs))
