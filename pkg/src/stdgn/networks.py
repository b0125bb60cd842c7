"""Learnable components: translate-and-segment generator, dual-head critic,
shape reconstruction net (SRN), spatial constraint head (SCN), and the plain
U-Net baseline."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import List, NamedTuple, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from stdgn.data.types import NUM_CLASSES


@dataclass
class GeneratorConfig:
    num_modalities: int = 4
    base_width: int = 16
    depth: int = 4
    num_classes: int = NUM_CLASSES
    se_reduction: int = 8

    @property
    def input_channels(self) -> int:
        return 1 + self.num_modalities

    @property
    def bottleneck_channels(self) -> int:
        return self.base_width * 2**self.depth

    def validate(self):
        if self.depth < 2:
            raise ValueError(f"depth must be >= 2, got {self.depth}")
        if self.base_width < 4:
            raise ValueError(f"base_width must be >= 4, got {self.base_width}")
        if self.base_width % self.se_reduction:
            raise ValueError(
                f"se_reduction {self.se_reduction} must divide the final feature width {self.base_width}"
            )
        if self.num_modalities < 2:
            raise ValueError("num_modalities must be >= 2")

    def to_dict(self):
        return asdict(self)


class GeneratorOutput(NamedTuple):
    translated: torch.Tensor  # (B, 1, H, W)
    segmentation_logits: torch.Tensor  # (B, num_classes, H, W)
    bottleneck: torch.Tensor  # (B, C_bottom, H / 2**depth, W / 2**depth)


class DiscriminatorOutput(NamedTuple):
    src_score: torch.Tensor  # (B,), unbounded critic value
    cls_logits: torch.Tensor  # (B, K)


def conv_block(in_ch: int, out_ch: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(in_ch, out_ch, 3, padding=1),
        nn.InstanceNorm2d(out_ch, affine=True),
        nn.ReLU(inplace=True),
        nn.Conv2d(out_ch, out_ch, 3, padding=1),
        nn.InstanceNorm2d(out_ch, affine=True),
        nn.ReLU(inplace=True),
    )


class Encoder(nn.Module):
    def __init__(self, in_ch: int, base_width: int, depth: int):
        super().__init__()
        self.depth = depth
        self.inc = conv_block(in_ch, base_width)
        self.downs = nn.ModuleList(
            conv_block(base_width * 2**i, base_width * 2 ** (i + 1)) for i in range(depth)
        )

    def forward(self, x) -> List[torch.Tensor]:
        feats = [self.inc(x)]
        for block in self.downs:
            feats.append(block(F.max_pool2d(feats[-1], 2)))
        return feats


class Decoder(nn.Module):
    """Upsampling path fed by encoder skips; returns the last feature map (width ``base_width``)."""

    def __init__(self, base_width: int, depth: int):
        super().__init__()
        self.ups = nn.ModuleList()
        self.blocks = nn.ModuleList()
        for i in reversed(range(depth)):
            hi, lo = base_width * 2 ** (i + 1), base_width * 2**i
            self.ups.append(nn.ConvTranspose2d(hi, lo, 2, stride=2))
            self.blocks.append(conv_block(2 * lo, lo))

    def forward(self, feats: List[torch.Tensor]) -> torch.Tensor:
        h = feats[-1]
        for up, block, skip in zip(self.ups, self.blocks, reversed(feats[:-1])):
            h = block(torch.cat([up(h), skip], dim=1))
        return h


def _check_spatial(x: torch.Tensor, depth: int):
    h, w = x.shape[-2:]
    if h % 2**depth or w % 2**depth:
        raise ValueError(f"spatial size {h}x{w} is not divisible by 2**{depth}")


def cross_task_recalibrate(f_seg, f_tsl, w1, b1, w2, b2):
    """Add translation features to segmentation features through a channel gate.

    ``z`` is the spatial mean of ``f_tsl``; the gate is
    ``sigmoid(w2 @ relu(w1 @ z + b1) + b2)``, one value per channel, and the
    result is ``f_seg + f_tsl * gate``. Works on (C, H, W) or (B, C, H, W).
    """
    if f_seg.shape != f_tsl.shape:
        raise ValueError(f"feature shape mismatch: {tuple(f_seg.shape)} vs {tuple(f_tsl.shape)}")
    z = f_tsl.mean(dim=(-2, -1))
    gate = torch.sigmoid(F.linear(F.relu(F.linear(z, w1, b1)), w2, b2))
    return f_seg + f_tsl * gate[..., None, None]


class CrossTaskAttention(nn.Module):
    def __init__(self, channels: int, reduction: int):
        super().__init__()
        if channels % reduction:
            raise ValueError(f"reduction {reduction} must divide channel count {channels}")
        self.squeeze = nn.Linear(channels, channels // reduction)
        self.excite = nn.Linear(channels // reduction, channels)

    def gate(self, f_tsl):
        z = f_tsl.mean(dim=(-2, -1))
        return torch.sigmoid(self.excite(F.relu(self.squeeze(z))))

    def forward(self, f_seg, f_tsl):
        return cross_task_recalibrate(
            f_seg, f_tsl, self.squeeze.weight, self.squeeze.bias, self.excite.weight, self.excite.bias
        )


class Generator(nn.Module):
    """Shared encoder with a segmentation decoder and a translation decoder.

    Input is the image concatenated with broadcast modality-difference planes,
    shape (B, 1 + K, H, W). Both decoders take skips from the same encoder
    levels. The translation decoder's last features are gated into the
    segmentation decoder's last features before the 1x1 output convolution.
    """

    def __init__(self, config: GeneratorConfig):
        super().__init__()
        config.validate()
        self.config = config
        w = config.base_width
        self.encoder = Encoder(config.input_channels, w, config.depth)
        self.seg_decoder = Decoder(w, config.depth)
        self.tsl_decoder = Decoder(w, config.depth)
        self.attention = CrossTaskAttention(w, config.se_reduction)
        self.seg_out = nn.Conv2d(w, config.num_classes, 1)
        self.tsl_out = nn.Conv2d(w, 1, 1)

    def forward(self, conditioned: torch.Tensor) -> GeneratorOutput:
        if conditioned.dim() != 4 or conditioned.shape[1] != self.config.input_channels:
            raise ValueError(
                f"expected (B, {self.config.input_channels}, H, W) input, got {tuple(conditioned.shape)}"
            )
        _check_spatial(conditioned, self.config.depth)
        feats = self.encoder(conditioned)
        f_seg = self.seg_decoder(feats)
        f_tsl = self.tsl_decoder(feats)
        translated = self.tsl_out(f_tsl)
        logits = self.seg_out(self.attention(f_seg, f_tsl))
        return GeneratorOutput(translated, logits, feats[-1])


class Discriminator(nn.Module):
    """Strided-conv trunk with a critic head (global mean of a patch map, no
    output activation) and a modality-classification head."""

    def __init__(self, image_size: int, num_modalities: int, base_width: int = 16, num_layers: int = 4):
        super().__init__()
        if image_size % 2**num_layers or image_size // 2**num_layers < 1:
            raise ValueError(f"image_size {image_size} incompatible with {num_layers} stride-2 layers")
        self.image_size = image_size
        self.num_modalities = num_modalities
        layers: List[nn.Module] = []
        ch = 1
        for i in range(num_layers):
            out = base_width * 2**i
            layers += [nn.Conv2d(ch, out, 4, stride=2, padding=1), nn.LeakyReLU(0.01)]
            ch = out
        self.trunk = nn.Sequential(*layers)
        self.src_head = nn.Conv2d(ch, 1, 3, padding=1)
        self.cls_head = nn.Conv2d(ch, num_modalities, 3, padding=1)

    def forward(self, image: torch.Tensor) -> DiscriminatorOutput:
        if image.dim() != 4 or tuple(image.shape[1:]) != (1, self.image_size, self.image_size):
            raise ValueError(
                f"expected (B, 1, {self.image_size}, {self.image_size}) input, got {tuple(image.shape)}"
            )
        h = self.trunk(image)
        return DiscriminatorOutput(
            self.src_head(h).mean(dim=(1, 2, 3)),
            self.cls_head(h).mean(dim=(2, 3)),
        )

    def critic(self, image: torch.Tensor) -> torch.Tensor:
        return self.forward(image).src_score


class ShapeReconstructionNet(nn.Module):
    """Skip-free encoder-decoder over per-class probability planes."""

    def __init__(self, num_classes: int = NUM_CLASSES, base_width: int = 16, depth: int = 2):
        super().__init__()
        self.num_classes = num_classes
        self.depth = depth
        self.encoder = Encoder(num_classes, base_width, depth)
        ups: List[nn.Module] = []
        for i in reversed(range(depth)):
            hi, lo = base_width * 2 ** (i + 1), base_width * 2**i
            ups += [nn.ConvTranspose2d(hi, lo, 2, stride=2), conv_block(lo, lo)]
        self.decoder = nn.Sequential(*ups)
        self.out = nn.Conv2d(base_width, num_classes, 1)

    def forward(self, class_probs: torch.Tensor) -> torch.Tensor:
        if class_probs.dim() != 4 or class_probs.shape[1] != self.num_classes:
            raise ValueError(
                f"expected (B, {self.num_classes}, H, W) class planes, got {tuple(class_probs.shape)}"
            )
        _check_spatial(class_probs, self.depth)
        return self.out(self.decoder(self.encoder(class_probs)[-1]))


class SpatialConstraintNet(nn.Module):
    """Fully connected head on the pooled bottleneck predicting slice position in [-1, 1]."""

    def __init__(self, in_channels: int, hidden: int = 64):
        super().__init__()
        self.in_channels = in_channels
        self.fc = nn.Sequential(nn.Linear(in_channels, hidden), nn.ReLU(inplace=True), nn.Linear(hidden, 1))

    def forward(self, bottleneck: torch.Tensor) -> torch.Tensor:
        if bottleneck.dim() != 4 or bottleneck.shape[1] != self.in_channels:
            raise ValueError(
                f"expected (B, {self.in_channels}, h, w) bottleneck, got {tuple(bottleneck.shape)}"
            )
        return torch.tanh(self.fc(bottleneck.mean(dim=(2, 3)))).squeeze(-1)


class UNet(nn.Module):
    """Fully supervised single-decoder baseline on the raw image."""

    def __init__(self, base_width: int = 16, depth: int = 4, num_classes: int = NUM_CLASSES):
        super().__init__()
        self.depth = depth
        self.encoder = Encoder(1, base_width, depth)
        self.decoder = Decoder(base_width, depth)
        self.out = nn.Conv2d(base_width, num_classes, 1)

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        if image.dim() != 4 or image.shape[1] != 1:
            raise ValueError(f"expected (B, 1, H, W) input, got {tuple(image.shape)}")
        _check_spatial(image, self.depth)
        return self.out(self.decoder(self.encoder(image)))


def freeze(module: nn.Module) -> nn.Module:
    module.eval()
    for p in module.parameters():
        p.requires_grad_(False)
    return module


def set_requires_grad(modules, flag: bool):
    for m in modules:
        for p in m.parameters():
            p.requires_grad_(flag)


def conditioned_input(images: torch.Tensor, diff: torch.Tensor) -> torch.Tensor:
    """Batched broadcast-concat: (B,1,H,W) images and (B,K) differences -> (B,1+K,H,W)."""
    b, _, h, w = images.shape
    return torch.cat([images, diff[:, :, None, None].expand(b, diff.shape[1], h, w)], dim=1)


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def parameter_snapshot(module: nn.Module) -> Tuple[torch.Tensor, ...]:
    return tuple(p.detach().clone() for p in module.parameters())
