"""Image encoders producing the L x D annotation grid used by attention.

``full`` wraps a ResNet-101 cut before global pooling (14x14x2048 grid);
``toy`` is a small four-block conv net (7x7x128) trained from scratch.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
import torch
from torch import nn

log = logging.getLogger(__name__)

MODES = ("full", "toy")
INPUT_SIDE = {"full": 224, "toy": 64}
FINETUNE_BLOCKS = (2, 3, 4)


@dataclass
class EncoderConfig:
    mode: str = "toy"
    finetune_blocks: tuple[int, ...] = ()
    pretrained_weights: Optional[str] = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"encoder mode must be one of {MODES}")
        self.finetune_blocks = tuple(sorted(set(self.finetune_blocks)))
        _check_blocks(self.finetune_blocks)

    @property
    def input_side(self) -> int:
        return INPUT_SIDE[self.mode]


@dataclass
class AnnotationGrid:
    features: torch.Tensor  # (L, D)
    grid_h: int
    grid_w: int

    def __post_init__(self):
        if self.features.shape[0] != self.grid_h * self.grid_w:
            raise ValueError("grid rows must equal grid_h * grid_w")

    @property
    def d(self) -> int:
        return self.features.shape[1]


def _check_blocks(blocks: Iterable[int]) -> None:
    bad = [b for b in blocks if b not in FINETUNE_BLOCKS]
    if bad:
        raise ValueError(f"finetune blocks must be a subset of {{2, 3, 4}}, got {bad}")


class ToyEncoder(nn.Module):
    """Four stride-2 conv blocks, 16->32->64->128 channels, pooled to 7x7."""

    grid_size = 7
    dim = 128
    input_side = 64

    def __init__(self):
        super().__init__()
        chans = (3, 16, 32, 64, 128)
        self.blocks = nn.ModuleList(
            nn.Sequential(
                nn.Conv2d(cin, cout, 3, stride=2, padding=1, bias=False),
                nn.BatchNorm2d(cout),
                nn.ReLU(inplace=True),
            )
            for cin, cout in zip(chans[:-1], chans[1:])
        )
        self.pool = nn.AdaptiveAvgPool2d(self.grid_size)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        x = images
        for block in self.blocks:
            x = block(x)
        x = self.pool(x)  # (B, 128, 7, 7)
        return x.flatten(2).transpose(1, 2)  # (B, 49, 128)

    def set_trainable(self, blocks: Iterable[int]) -> None:
        _check_blocks(blocks)
        for p in self.parameters():
            p.requires_grad = True


class ResNetEncoder(nn.Module):
    """ResNet-101 truncated before global pooling, adaptively pooled to 14x14.

    Stem and block 1 are always frozen; blocks 2-4 are frozen unless named in
    ``set_trainable``. Batch-norm layers in frozen blocks stay in eval mode.
    """

    grid_size = 14
    dim = 2048
    input_side = 224

    def __init__(self, pretrained_weights: Optional[str] = None):
        super().__init__()
        import torchvision

        resnet = torchvision.models.resnet101(weights=None)
        if pretrained_weights is not None:
            resnet.load_state_dict(_load_backbone_weights(pretrained_weights))
        else:
            log.warning("full encoder without pretrained weights: using random init")
        self.stem = nn.Sequential(resnet.conv1, resnet.bn1, resnet.relu, resnet.maxpool)
        self.layer1 = resnet.layer1
        self.layer2 = resnet.layer2
        self.layer3 = resnet.layer3
        self.layer4 = resnet.layer4
        self.pool = nn.AdaptiveAvgPool2d(self.grid_size)
        self.trainable_blocks: tuple[int, ...] = ()
        self.set_trainable(())

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        x = self.stem(images)
        x = self.layer4(self.layer3(self.layer2(self.layer1(x))))
        x = self.pool(x)
        return x.flatten(2).transpose(1, 2)  # (B, 196, 2048)

    def set_trainable(self, blocks: Iterable[int]) -> None:
        blocks = tuple(sorted(set(blocks)))
        _check_blocks(blocks)
        self.trainable_blocks = blocks
        for p in self.parameters():
            p.requires_grad = False
        for b in blocks:
            for p in getattr(self, f"layer{b}").parameters():
                p.requires_grad = True
        self.train(self.training)

    def train(self, mode: bool = True):
        super().train(mode)
        frozen = [self.stem, self.layer1] + [
            getattr(self, f"layer{b}") for b in FINETUNE_BLOCKS if b not in self.trainable_blocks
        ]
        for module in frozen:
            module.eval()
        return self


def _load_backbone_weights(path: str) -> dict[str, torch.Tensor]:
    from attr2style.archive import read_archive

    if not Path(path).is_file():
        raise FileNotFoundError(f"pretrained weights file not found: {path}")
    if str(path).endswith((".pt", ".pth")):
        return torch.load(path, map_location="cpu", weights_only=True)
    arrays, _ = read_archive(path)
    return {k: torch.from_numpy(v) for k, v in arrays.items()}


def build_encoder(config: EncoderConfig) -> nn.Module:
    if config.mode == "toy":
        if config.pretrained_weights:
            log.info("toy encoder ignores pretrained_weights")
        return ToyEncoder()
    encoder = ResNetEncoder(config.pretrained_weights)
    encoder.set_trainable(config.finetune_blocks)
    return encoder


def set_trainable(encoder: nn.Module, blocks: Iterable[int]) -> None:
    encoder.set_trainable(blocks)


def encode_image(encoder: nn.Module, pixels: np.ndarray | torch.Tensor) -> AnnotationGrid:
    """Encode one ``H x W x 3`` normalized image in evaluation mode."""
    pixels = torch.as_tensor(np.asarray(pixels))
    side = encoder.input_side
    if pixels.shape != (side, side, 3):
        raise ValueError(f"expected a {side}x{side}x3 input, got {tuple(pixels.shape)}")
    was_training = encoder.training
    encoder.eval()
    dtype = next(encoder.parameters()).dtype
    with torch.no_grad():
        feats = encoder(pixels.permute(2, 0, 1).unsqueeze(0).to(dtype))[0]
    encoder.train(was_training)
    return AnnotationGrid(feats, encoder.grid_size, encoder.grid_size)
