"""Encoder + decoder bundle whose state dict is namespaced ``encoder.*`` / ``decoder.*``."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import torch
from torch import nn

from attr2style.attn_decoder import AttentionDecoder, DecoderConfig
from attr2style.encoder import EncoderConfig, build_encoder

# (embed, hidden, attention) sizes per encoder mode
DEFAULT_DIMS = {"toy": (64, 128, 64), "full": (256, 512, 512)}


@dataclass
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    embed_dim: Optional[int] = None
    hidden_dim: Optional[int] = None
    attention_dim: Optional[int] = None
    gate: bool = False
    dropout: float = 0.5

    def decoder_config(self, vocab_size: int, annotation_dim: int) -> DecoderConfig:
        e, h, a = DEFAULT_DIMS[self.encoder.mode]
        return DecoderConfig(
            vocab_size=vocab_size,
            annotation_dim=annotation_dim,
            embed_dim=self.embed_dim or e,
            hidden_dim=self.hidden_dim or h,
            attention_dim=self.attention_dim or a,
            gate=self.gate,
            dropout=self.dropout,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder"]["finetune_blocks"] = list(self.encoder.finetune_blocks)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        return cls(encoder=EncoderConfig(**d.pop("encoder")), **d)


class CaptionModel(nn.Module):
    def __init__(self, config: ModelConfig, vocab_size: int):
        super().__init__()
        self.config = config
        self.vocab_size = vocab_size
        self.encoder = build_encoder(config.encoder)
        self.decoder = AttentionDecoder(config.decoder_config(vocab_size, self.encoder.dim))

    @property
    def grid_size(self) -> int:
        return self.encoder.grid_size

    def forward(self, images: torch.Tensor, target_ids: torch.Tensor):
        return self.decoder(self.encoder(images), target_ids)
