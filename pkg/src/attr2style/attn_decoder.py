"""Soft-attention LSTM decoder.

At every step the previous hidden state scores each annotation vector with
an additive MLP, ``e_i = v . tanh(W1 a_i + W2 h + b)``; a softmax turns the
scores into weights, the weighted sum of annotations is the context vector,
and the LSTM consumes ``[embedding(prev_word) ; context]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import torch
from torch import nn

from attr2style.vocab import PAD


@dataclass
class DecoderConfig:
    vocab_size: int
    annotation_dim: int = 128
    embed_dim: int = 64
    hidden_dim: int = 128
    attention_dim: int = 64
    gate: bool = False
    dropout: float = 0.5


class DecoderState(NamedTuple):
    h: torch.Tensor
    c: torch.Tensor
    t: int = 0


class SoftAttention(nn.Module):
    """Additive attention scorer with parameters W1, W2, b, v."""

    def __init__(self, annotation_dim: int, hidden_dim: int, attention_dim: int):
        super().__init__()
        self.W1 = nn.Linear(annotation_dim, attention_dim, bias=False)
        self.W2 = nn.Linear(hidden_dim, attention_dim, bias=False)
        self.b = nn.Parameter(torch.zeros(attention_dim))
        self.v = nn.Parameter(torch.empty(attention_dim).uniform_(-0.1, 0.1))

    def forward(self, grid: torch.Tensor, h_prev: torch.Tensor) -> torch.Tensor:
        return attention_scores(self, grid, h_prev)


def attention_scores(attn: SoftAttention, grid: torch.Tensor, h_prev: torch.Tensor) -> torch.Tensor:
    """Scores for every location. ``grid`` is (B, L, D) or (L, D); returns (B, L) or (L,)."""
    if grid.shape[-1] != attn.W1.in_features:
        raise ValueError(f"annotation dim {grid.shape[-1]} != {attn.W1.in_features}")
    if h_prev.shape[-1] != attn.W2.in_features:
        raise ValueError(f"hidden dim {h_prev.shape[-1]} != {attn.W2.in_features}")
    hidden = torch.tanh(attn.W1(grid) + attn.W2(h_prev).unsqueeze(-2) + attn.b)
    return hidden @ attn.v


def attention_weights(scores: torch.Tensor) -> torch.Tensor:
    """Softmax over the last axis, max-subtracted so large scores cannot overflow."""
    shifted = scores - scores.max(dim=-1, keepdim=True).values
    expd = torch.exp(shifted)
    return expd / expd.sum(dim=-1, keepdim=True)


def context_vector(alpha: torch.Tensor, grid: torch.Tensor) -> torch.Tensor:
    return (alpha.unsqueeze(-1) * grid).sum(dim=-2)


class AttentionDecoder(nn.Module):
    def __init__(self, config: DecoderConfig):
        super().__init__()
        self.config = config
        D, E, H = config.annotation_dim, config.embed_dim, config.hidden_dim
        self.embedding = nn.Embedding(config.vocab_size, E, padding_idx=PAD)
        self.attention = SoftAttention(D, H, config.attention_dim)
        self.lstm = nn.LSTMCell(E + D, H)
        self.init_h = nn.Linear(D, H, bias=False)
        self.init_c = nn.Linear(D, H, bias=False)
        self.gate = nn.Linear(H, 1) if config.gate else None
        self.dropout = nn.Dropout(config.dropout)
        self.fc = nn.Linear(H, config.vocab_size)
        self.reset_parameters()

    def reset_parameters(self) -> None:
        nn.init.uniform_(self.embedding.weight, -0.1, 0.1)
        with torch.no_grad():
            self.embedding.weight[PAD].zero_()
        nn.init.uniform_(self.fc.weight, -0.1, 0.1)
        nn.init.zeros_(self.fc.bias)

    def init_state(self, grid: torch.Tensor) -> DecoderState:
        mean = grid.mean(dim=-2)
        return DecoderState(torch.tanh(self.init_h(mean)), torch.tanh(self.init_c(mean)), 0)

    def decode_step(
        self, state: DecoderState, prev_ids: torch.Tensor, grid: torch.Tensor
    ) -> tuple[DecoderState, torch.Tensor, torch.Tensor]:
        """One word for a batch: returns (new state, logits (B, V), alpha (B, L))."""
        if prev_ids.numel() and (int(prev_ids.min()) < 0 or int(prev_ids.max()) >= self.config.vocab_size):
            raise ValueError("invalid token id")
        alpha = attention_weights(attention_scores(self.attention, grid, state.h))
        z = context_vector(alpha, grid)
        if self.gate is not None:
            z = torch.sigmoid(self.gate(state.h)) * z
        h, c = self.lstm(torch.cat([self.embedding(prev_ids), z], dim=-1), (state.h, state.c))
        logits = self.fc(self.dropout(h))
        return DecoderState(h, c, state.t + 1), logits, alpha

    def forward(
        self, grid: torch.Tensor, target_ids: torch.Tensor, lengths: Optional[torch.Tensor] = None
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Teacher-forced pass.

        Step ``t`` consumes ``target_ids[:, t]`` and predicts ``target_ids[:, t+1]``.
        Returns logits (B, T, V) and alphas (B, T, L); positions at or beyond
        ``lengths`` are left to the loss mask.
        """
        state = self.init_state(grid)
        logits, alphas = [], []
        for t in range(target_ids.shape[1]):
            state, step_logits, alpha = self.decode_step(state, target_ids[:, t], grid)
            logits.append(step_logits)
            alphas.append(alpha)
        return torch.stack(logits, 1), torch.stack(alphas, 1)


def forward_teacher_forced(
    decoder: AttentionDecoder, grid: torch.Tensor, target_ids: torch.Tensor, lengths=None
) -> tuple[torch.Tensor, torch.Tensor]:
    return decoder(grid, target_ids, lengths)


def caption_loss(
    logits: torch.Tensor,
    target_ids: torch.Tensor,
    alphas: Optional[torch.Tensor] = None,
    alpha_reg: float = 0.0,
) -> torch.Tensor:
    """Mean per-token cross-entropy; START is never a target and PAD is masked.

    ``alpha_reg`` adds the doubly-stochastic penalty sum_i (1 - sum_t alpha_ti)^2.
    """
    pred = logits[:, :-1].reshape(-1, logits.shape[-1])
    gold = target_ids[:, 1:].reshape(-1)
    loss = nn.functional.cross_entropy(pred, gold, ignore_index=PAD)
    if alpha_reg and alphas is not None:
        mask = (target_ids[:, 1:] != PAD).unsqueeze(-1).to(alphas.dtype)
        coverage = (alphas[:, :-1] * mask).sum(1)
        loss = loss + alpha_reg * ((1.0 - coverage) ** 2).sum(1).mean()
    return loss
