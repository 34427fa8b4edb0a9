"""Independent reference computations used by the tests."""

from __future__ import annotations

import math

import torch

from attr2style.attn_decoder import AttentionDecoder, DecoderConfig, caption_loss


def brute_force_bleu(candidates, references, max_n=4):
    """Corpus BLEU written directly from its definition with plain loops."""
    clipped = [0] * max_n
    possible = [0] * max_n
    c_len = r_len = 0
    for cand, ref in zip(candidates, references):
        c_len += len(cand)
        r_len += len(ref)
        for n in range(1, max_n + 1):
            cand_grams = [tuple(cand[i : i + n]) for i in range(len(cand) - n + 1)]
            ref_grams = [tuple(ref[i : i + n]) for i in range(len(ref) - n + 1)]
            possible[n - 1] += len(cand_grams)
            for gram in set(cand_grams):
                clipped[n - 1] += min(cand_grams.count(gram), ref_grams.count(gram))
    if c_len == 0 or any(c == 0 for c in clipped):
        return 0.0
    log_p = sum(math.log(clipped[i] / possible[i]) for i in range(max_n)) / max_n
    bp = 1.0 if c_len > r_len else math.exp(1 - r_len / c_len)
    return bp * math.exp(log_p)


def small_decoder(seed=0, gate=True):
    torch.manual_seed(seed)
    cfg = DecoderConfig(vocab_size=7, annotation_dim=5, embed_dim=4, hidden_dim=6, attention_dim=3, gate=gate, dropout=0.0)
    dec = AttentionDecoder(cfg).double()
    with torch.no_grad():
        for p in dec.parameters():
            p.add_(0.3 * torch.randn_like(p))
    return dec


def finite_difference_check(decoder, grid, targets, alpha_reg=0.0, step=1e-5):
    """Return {param name: relative error} of autograd vs central differences.

    Relative error is ||analytic - numeric|| / max(||analytic||, ||numeric||).
    """
    decoder.eval()

    def loss_fn():
        logits, alphas = decoder(grid, targets)
        return caption_loss(logits, targets, alphas, alpha_reg)

    decoder.zero_grad()
    loss_fn().backward()
    errors = {}
    for name, param in decoder.named_parameters():
        analytic = param.grad.detach().clone()
        numeric = torch.zeros_like(param)
        flat = param.data.view(-1)
        with torch.no_grad():
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + step
                up = loss_fn().item()
                flat[i] = orig - step
                down = loss_fn().item()
                flat[i] = orig
                numeric.view(-1)[i] = (up - down) / (2 * step)
        scale = max(analytic.norm().item(), numeric.norm().item())
        errors[name] = 0.0 if scale < 1e-12 else (analytic - numeric).norm().item() / scale
    return errors
