"""Caption generation (greedy, beam search) and attention heatmaps.

Decoding runs in float64 on a private copy of the model so that greedy and
beam search score identical sequences identically.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
from PIL import Image, ImageDraw

from attr2style.attn_decoder import DecoderState
from attr2style.model import CaptionModel
from attr2style.vocab import END, PAD, START, UNK, Vocab

BANNED = (PAD, START, UNK)


@dataclass
class CaptionResult:
    ids: list[int]
    log_prob: float
    alphas: np.ndarray  # (T, L)
    tokens: list[str] = field(default_factory=list)
    finished: bool = True


class Captioner:
    """Read-only decoding wrapper around a trained model."""

    def __init__(self, model: CaptionModel, vocab: Optional[Vocab] = None):
        self.model = copy.deepcopy(model).double().eval()
        self.vocab = vocab
        self.grid_size = model.grid_size

    @torch.no_grad()
    def encode(self, pixels: np.ndarray | torch.Tensor) -> torch.Tensor:
        """(S, S, 3) normalized pixels -> (L, D) annotation grid."""
        x = torch.as_tensor(np.asarray(pixels), dtype=torch.float64).permute(2, 0, 1).unsqueeze(0)
        return self.model.encoder(x)[0]

    @torch.no_grad()
    def step_log_probs(self, state: DecoderState, prev: torch.Tensor, grid: torch.Tensor):
        state, logits, alpha = self.model.decoder.decode_step(state, prev, grid)
        logits[:, list(BANNED)] = -math.inf
        return state, torch.log_softmax(logits, dim=-1), alpha

    def _finish(self, ids: list[int], log_prob: float, alphas: list, finished: bool) -> CaptionResult:
        tokens = [self.vocab.id_to_token[i] for i in ids] if self.vocab is not None else []
        return CaptionResult(ids, log_prob, np.stack(alphas) if alphas else np.zeros((0, 0)), tokens, finished)

    @torch.no_grad()
    def greedy(self, pixels, max_len: int = 20) -> CaptionResult:
        """Argmax decoding for at most ``max_len - 1`` steps (START fills one slot)."""
        if max_len < 2:
            raise ValueError("max_len must be >= 2")
        grid = self.encode(pixels).unsqueeze(0)
        state = self.model.decoder.init_state(grid)
        prev = torch.tensor([START])
        ids, alphas, total = [], [], 0.0
        for _ in range(max_len - 1):
            state, logp, alpha = self.step_log_probs(state, prev, grid)
            tok = int(torch.argmax(logp[0]))  # first maximum = lowest id on ties
            total += float(logp[0, tok])
            alphas.append(alpha[0].numpy())
            if tok == END:
                return self._finish(ids, total, alphas, True)
            ids.append(tok)
            prev = torch.tensor([tok])
        return self._finish(ids, total, alphas, False)

    @torch.no_grad()
    def beam(self, pixels, k: int = 3, max_len: int = 20, length_norm: bool = False) -> CaptionResult:
        """Beam search keeping ``k`` live hypotheses.

        Hypotheses that emit END among the top ``k`` candidates are retired;
        the search stops once no live hypothesis can beat the best retired
        one, or after ``max_len - 1`` steps.
        """
        if k < 1:
            raise ValueError("k must be >= 1")
        if max_len < 2:
            raise ValueError("max_len must be >= 2")
        grid1 = self.encode(pixels).unsqueeze(0)
        state = self.model.decoder.init_state(grid1)
        # live hypothesis: (score, ids, alphas)
        live = [(0.0, [], [])]
        prev = torch.tensor([START])
        done: list[tuple[float, list[int], list]] = []

        def ranked(entry):
            score, ids = entry[0], entry[1]
            return score / (len(ids) + 1) if length_norm else score

        for _ in range(max_len - 1):
            grid = grid1.expand(len(live), -1, -1)
            state, logp, alpha = self.step_log_probs(state, prev, grid)
            scores = torch.tensor([h[0] for h in live], dtype=torch.float64).unsqueeze(1) + logp
            flat = scores.flatten()
            n_vocab = logp.shape[1]
            # stable sort: equal scores keep (hypothesis rank, token id) order
            order = torch.sort(-flat, stable=True).indices
            new_live, keep_rows = [], []
            for rank, pos in enumerate(order.tolist()):
                score = float(flat[pos])
                if score == -math.inf or len(new_live) == k:
                    break
                row, tok = divmod(pos, n_vocab)
                _, ids, alphas = live[row]
                step_alphas = alphas + [alpha[row].numpy()]
                if tok == END:
                    if rank < k:
                        done.append((score, ids, step_alphas))
                    continue
                new_live.append((score, ids + [tok], step_alphas))
                keep_rows.append(row)
            if done:
                best_done = max(ranked(d) for d in done)
                if not new_live or (not length_norm and best_done >= max(h[0] for h in new_live)):
                    live = new_live
                    break
            if not new_live:
                live = new_live
                break
            rows = torch.tensor(keep_rows)
            state = DecoderState(state.h[rows], state.c[rows], state.t)
            prev = torch.tensor([h[1][-1] for h in new_live])
            live = new_live
        if done:
            score, ids, alphas = max(done, key=ranked)
            return self._finish(ids, score, alphas, True)
        score, ids, alphas = max(live, key=ranked)
        return self._finish(ids, score, alphas, False)


def greedy_caption(model: CaptionModel, pixels, max_len: int = 20, vocab: Optional[Vocab] = None) -> CaptionResult:
    return Captioner(model, vocab).greedy(pixels, max_len)


def beam_search(
    model: CaptionModel, pixels, k: int = 3, max_len: int = 20, vocab: Optional[Vocab] = None
) -> CaptionResult:
    return Captioner(model, vocab).beam(pixels, k, max_len)


# -- attention maps ----------------------------------------------------------

def upsample_attention(alpha: np.ndarray, grid_h: int, grid_w: int, size: tuple[int, int]) -> np.ndarray:
    """Bilinearly upsample one attention row to an (H, W) heat map."""
    grid = torch.as_tensor(np.asarray(alpha, dtype=np.float64)).reshape(1, 1, grid_h, grid_w)
    heat = torch.nn.functional.interpolate(grid, size=size, mode="bilinear", align_corners=False)
    return heat[0, 0].numpy()


def _heat_rgb(heat: np.ndarray) -> np.ndarray:
    from matplotlib import colormaps

    span = heat.max() - heat.min()
    norm = (heat - heat.min()) / span if span > 1e-12 else np.zeros_like(heat)
    return colormaps["jet"](norm)[..., :3]


def attention_overlay(
    image: Image.Image | np.ndarray,
    tokens: Sequence[str],
    alphas: np.ndarray,
    grid_h: int,
    grid_w: int,
    out_dir: str | Path,
    scale: int = 4,
) -> list[Path]:
    """Write one heat-overlay PNG per word plus a captioned composite strip.

    Overlays blend 0.6 heat with 0.4 image.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if isinstance(image, np.ndarray):
        image = Image.fromarray(image)
    image = image.convert("RGB")
    image = image.resize((image.width * scale, image.height * scale), Image.NEAREST)
    base = np.asarray(image, dtype=np.float64) / 255.0
    paths, tiles = [], []
    for t, word in enumerate(tokens):
        heat = upsample_attention(alphas[t], grid_h, grid_w, (image.height, image.width))
        blend = 0.6 * _heat_rgb(heat) + 0.4 * base
        tile = Image.fromarray((blend * 255).round().astype(np.uint8))
        path = out_dir / f"{t:02d}_{word}.png"
        tile.save(path)
        paths.append(path)
        tiles.append((word, tile))
    label_h = 16
    strip = Image.new("RGB", (max(1, image.width * (len(tiles) + 1)), image.height + label_h), "white")
    strip.paste(image, (0, label_h))
    draw = ImageDraw.Draw(strip)
    draw.text((2, 2), "input", fill="black")
    for i, (word, tile) in enumerate(tiles, start=1):
        strip.paste(tile, (i * image.width, label_h))
        draw.text((i * image.width + 2, 2), word, fill="black")
    path = out_dir / "composite.png"
    strip.save(path)
    paths.append(path)
    return paths
