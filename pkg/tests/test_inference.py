import itertools
import math

import numpy as np
import pytest
import torch
from torch import nn

from attr2style import trainer
from attr2style.attn_decoder import DecoderState
from attr2style.encoder import EncoderConfig
from attr2style.inference import (
    BANNED,
    Captioner,
    attention_overlay,
    beam_search,
    greedy_caption,
    upsample_attention,
)
from attr2style.model import ModelConfig
from attr2style.vocab import END, START

TOY = ModelConfig(encoder=EncoderConfig(mode="toy"))


@pytest.fixture(scope="module")
def trained(tiny_data, tiny_vocab):
    torch.manual_seed(1)
    model = trainer._build_model(TOY, len(tiny_vocab), 1)
    d = tiny_data["target"]
    trainer.overfit_batch(model, d.images[:8], d.ids[:8], d.lengths[:8], 120, trainer.TrainConfig())
    return model.eval()


def _pixels(tiny_data, i, part="test"):
    return tiny_data[part].images[i].permute(1, 2, 0).numpy()


def test_budget_of_two(trained, tiny_data, tiny_vocab):
    res = greedy_caption(trained, _pixels(tiny_data, 0), max_len=2, vocab=tiny_vocab)
    assert len(res.ids) <= 1
    assert len(res.alphas) == 1


def test_max_len_below_two_rejected(trained, tiny_data):
    with pytest.raises(ValueError):
        greedy_caption(trained, _pixels(tiny_data, 0), max_len=1)


def test_greedy_deterministic(trained, tiny_data, tiny_vocab):
    a = greedy_caption(trained, _pixels(tiny_data, 0), vocab=tiny_vocab)
    b = greedy_caption(trained, _pixels(tiny_data, 0), vocab=tiny_vocab)
    assert a.ids == b.ids and a.log_prob == b.log_prob
    assert np.array_equal(a.alphas, b.alphas)


def test_finished_caption_shape(trained, tiny_data, tiny_vocab):
    cap = Captioner(trained, tiny_vocab)
    for i in range(len(tiny_data["test"])):
        res = cap.beam(_pixels(tiny_data, i), k=3)
        assert res.finished
        assert res.alphas.shape == (len(res.tokens) + 1, 49)
        assert np.all(res.alphas >= 0)
        assert np.allclose(res.alphas.sum(1), 1.0, atol=1e-6)
        assert not set(res.ids) & set(BANNED) and END not in res.ids


def test_captioner_leaves_model_untouched(trained, tiny_data):
    before = {k: v.clone() for k, v in trained.state_dict().items()}
    Captioner(trained).beam(_pixels(tiny_data, 0))
    for k, v in trained.state_dict().items():
        assert v.dtype == before[k].dtype and torch.equal(v, before[k])


def test_beam_one_is_greedy(trained, tiny_data):
    cap = Captioner(trained)
    for i in range(len(tiny_data["test"])):
        g = cap.greedy(_pixels(tiny_data, i))
        b = cap.beam(_pixels(tiny_data, i), k=1)
        assert g.ids == b.ids
        assert g.log_prob == b.log_prob


def test_beam_dominates_greedy(trained, tiny_data):
    cap = Captioner(trained)
    for i in range(len(tiny_data["test"])):
        g = cap.greedy(_pixels(tiny_data, i))
        b = cap.beam(_pixels(tiny_data, i), k=5)
        assert b.log_prob >= g.log_prob - 1e-9


def test_beam_monotone_in_k(trained, tiny_data):
    cap = Captioner(trained)
    for i in range(len(tiny_data["test"])):
        scores = [cap.beam(_pixels(tiny_data, i), k=k).log_prob for k in (1, 2, 3, 5, 8)]
        assert all(b >= a - 1e-9 for a, b in zip(scores, scores[1:])), scores


# -- stub lattice --------------------------------------------------------------

V = 6  # pad, start, end, unk, a=4, b=5
A, B = 4, 5


def _row(probs):
    row = torch.full((V,), -math.inf)
    for tok, p in probs.items():
        row[tok] = math.log(p)
    return row


class TableDecoder(nn.Module):
    """Logits depend only on (step, previous token)."""

    def __init__(self):
        super().__init__()
        table = torch.full((3, V, V), -math.inf)
        table[0, START] = _row({A: 0.55, B: 0.45})
        table[1, A] = _row({A: 0.36, B: 0.34, END: 0.30})
        table[1, B] = _row({A: 0.05, B: 0.05, END: 0.90})
        for prev in (A, B):
            table[2, prev] = _row({A: 0.01, B: 0.01, END: 0.98})
        self.register_buffer("table", table)

    def init_state(self, grid):
        z = torch.zeros(grid.shape[0], 1, dtype=grid.dtype)
        return DecoderState(z, z, 0)

    def decode_step(self, state, prev, grid):
        logits = self.table[state.t][prev].clone()
        alpha = torch.full((grid.shape[0], grid.shape[1]), 1.0 / grid.shape[1], dtype=grid.dtype)
        return DecoderState(state.h, state.c, state.t + 1), logits, alpha


class ZeroEncoder(nn.Module):
    def forward(self, x):
        return torch.zeros(x.shape[0], 4, 2, dtype=x.dtype)


class TableModel(nn.Module):
    grid_size = 2

    def __init__(self):
        super().__init__()
        self.encoder = ZeroEncoder()
        self.decoder = TableDecoder()


def _enumerate_best(table, steps):
    """Best finished sequence by exhaustive enumeration of every token path."""
    logp = torch.log_softmax(table.double(), dim=-1)
    best = (-math.inf, None)
    for n in range(1, steps + 1):
        for path in itertools.product(range(V), repeat=n):
            if path[-1] != END or END in path[:-1]:
                continue
            score, prev = 0.0, START
            for t, tok in enumerate(path):
                score += float(logp[t, prev, tok])
                prev = tok
            if score > best[0]:
                best = (score, list(path[:-1]))
    return best


def test_lattice_beam_finds_optimum():
    model = TableModel()
    pixels = np.zeros((8, 8, 3))
    best_score, best_ids = _enumerate_best(model.decoder.table, 3)
    assert best_ids == [B]
    g = greedy_caption(model, pixels, max_len=4)
    assert g.ids == [A, A]
    assert g.log_prob < best_score - 0.5
    b = beam_search(model, pixels, k=2, max_len=4)
    assert b.ids == best_ids
    assert b.log_prob == pytest.approx(best_score, abs=1e-12)


# -- overlays ------------------------------------------------------------------

def test_overlay_file_count(tmp_path):
    rng = np.random.default_rng(0)
    alphas = rng.dirichlet(np.ones(49), size=4)
    image = rng.integers(0, 255, size=(64, 64, 3), dtype=np.uint8)
    paths = attention_overlay(image, ["red", "floral", "dress"], alphas, 7, 7, tmp_path)
    assert len(paths) == 4
    assert all(p.exists() for p in paths)
    assert sorted(p.name for p in tmp_path.iterdir()) == ["00_red.png", "01_floral.png", "02_dress.png", "composite.png"]


def test_uniform_attention_is_flat():
    heat = upsample_attention(np.full(49, 1 / 49), 7, 7, (64, 64))
    assert heat.max() - heat.min() < 1e-6


def test_corner_mass_lands_top_left():
    alpha = np.zeros(49)
    alpha[0] = 1.0
    heat = upsample_attention(alpha, 7, 7, (64, 64))
    r, c = np.unravel_index(np.argmax(heat), heat.shape)
    assert r < 32 and c < 32
