"""Evaluation: style keywords, confusion matrix, precision/recall, accuracy, BLEU."""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from attr2style.corpus import STYLES, CaptionRecord
from attr2style.vocab import tokenize

DEFAULT_LEXICON: dict[str, list[str]] = {s: [s] for s in STYLES if s != "none"}


def validate_lexicon(lexicon: Mapping[str, Sequence[str]]) -> None:
    seen: dict[str, str] = {}
    for style, words in lexicon.items():
        if style not in STYLES or style == "none":
            raise ValueError(f"lexicon style {style!r} is not one of {STYLES[:-1]}")
        if not words:
            raise ValueError(f"lexicon entry for {style!r} is empty")
        for w in words:
            if w != w.lower():
                raise ValueError(f"lexicon keyword {w!r} must be lowercase")
            if w in seen and seen[w] != style:
                raise ValueError(f"keyword {w!r} listed for both {seen[w]!r} and {style!r}")
            seen[w] = style


def extract_style(caption: str | Sequence[str], lexicon: Mapping[str, Sequence[str]] = DEFAULT_LEXICON) -> str:
    """Style whose keyword occurs earliest in the caption; ``none`` if no keyword."""
    tokens = tokenize(caption) if isinstance(caption, str) else list(caption)
    keyword_style = {w: s for s, words in lexicon.items() for w in words}
    for tok in tokens:
        if tok in keyword_style:
            return keyword_style[tok]
    return "none"


def confusion(preds: Sequence[str], truths: Sequence[str], styles: Sequence[str] = STYLES) -> np.ndarray:
    """Rows are ground truth, columns predictions, in ``styles`` order."""
    if len(preds) != len(truths):
        raise ValueError(f"length mismatch: {len(preds)} predictions vs {len(truths)} truths")
    index = {s: i for i, s in enumerate(styles)}
    mat = np.zeros((len(styles), len(styles)), dtype=np.int64)
    for p, t in zip(preds, truths):
        if p not in index or t not in index:
            raise ValueError(f"unknown style in ({t!r}, {p!r})")
        mat[index[t], index[p]] += 1
    return mat


def precision_recall(mat: np.ndarray) -> list[tuple[Optional[float], Optional[float]]]:
    """Per class ``(precision, recall)``; ``None`` where the denominator is zero."""
    mat = np.asarray(mat)
    out = []
    for i in range(mat.shape[0]):
        col, row = int(mat[:, i].sum()), int(mat[i, :].sum())
        out.append((mat[i, i] / col if col else None, mat[i, i] / row if row else None))
    return out


def accuracy(mat: np.ndarray) -> tuple[float, float]:
    """Return ``(micro, one_vs_rest_macro)``.

    micro is trace/total. The macro variant averages, over all classes, the
    one-vs-rest (TP+TN)/(TP+TN+FP+FN).
    """
    mat = np.asarray(mat)
    total = int(mat.sum())
    if total == 0:
        raise ValueError("empty confusion matrix")
    micro = float(np.trace(mat)) / total
    per_class = []
    for i in range(mat.shape[0]):
        tp = mat[i, i]
        fp = mat[:, i].sum() - tp
        fn = mat[i, :].sum() - tp
        tn = total - tp - fp - fn
        per_class.append((tp + tn) / total)
    return micro, float(np.mean(per_class))


@dataclass
class BleuResult:
    score: float
    precisions: list[float]
    brevity_penalty: float
    cand_len: int
    ref_len: int


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu_details(
    candidates: Sequence[Sequence[str]], references: Sequence[Sequence[str]], max_n: int = 4, smooth: bool = False
) -> BleuResult:
    """Corpus BLEU with one reference per candidate.

    Clipped n-gram matches and totals are pooled over the corpus before
    taking the geometric mean; ``smooth`` adds one to numerator and
    denominator of every order.
    """
    if len(candidates) != len(references):
        raise ValueError("candidates and references differ in length")
    if not candidates:
        raise ValueError("empty corpus")
    matches = [0] * max_n
    totals = [0] * max_n
    cand_len = ref_len = 0
    for cand, ref in zip(candidates, references):
        cand_len += len(cand)
        ref_len += len(ref)
        for n in range(1, max_n + 1):
            c_grams, r_grams = _ngrams(cand, n), _ngrams(ref, n)
            matches[n - 1] += sum(min(c, r_grams[g]) for g, c in c_grams.items())
            totals[n - 1] += max(len(cand) - n + 1, 0)
    if smooth:
        precisions = [(m + 1) / (t + 1) for m, t in zip(matches, totals)]
    else:
        precisions = [m / t if t else 0.0 for m, t in zip(matches, totals)]
    if cand_len == 0:
        return BleuResult(0.0, precisions, 0.0, cand_len, ref_len)
    bp = math.exp(min(0.0, 1.0 - ref_len / cand_len))
    if min(precisions) == 0.0:
        return BleuResult(0.0, precisions, bp, cand_len, ref_len)
    log_mean = sum(math.log(p) for p in precisions) / max_n
    return BleuResult(bp * math.exp(log_mean), precisions, bp, cand_len, ref_len)


def bleu(candidates, references, max_n: int = 4, smooth: bool = False) -> float:
    return bleu_details(candidates, references, max_n, smooth).score


@dataclass
class EvalReport:
    confusion: np.ndarray
    per_style: dict[str, dict]
    accuracy_micro: float
    accuracy_paper_macro: float
    bleu: float
    n_test: int
    bleu_precisions: list[float] = field(default_factory=list)
    brevity_penalty: float = 1.0
    captions: list[dict] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "bleu": self.bleu,
            "bleu_precisions": self.bleu_precisions,
            "brevity_penalty": self.brevity_penalty,
            "accuracy_micro": self.accuracy_micro,
            "accuracy_paper_macro": self.accuracy_paper_macro,
            "per_style": self.per_style,
            "confusion": self.confusion.tolist(),
            "styles": list(STYLES),
            "n_test": self.n_test,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n")

    def table(self, name: str = "model") -> str:
        return render_table({name: self})


def build_report(
    generated: Sequence[Sequence[str]],
    references: Sequence[Sequence[str]],
    truths: Sequence[str],
    lexicon: Mapping[str, Sequence[str]] = DEFAULT_LEXICON,
) -> EvalReport:
    preds = [extract_style(list(g), lexicon) for g in generated]
    mat = confusion(preds, truths)
    pr = precision_recall(mat)
    micro, macro = accuracy(mat)
    b = bleu_details(generated, references)
    per_style = {
        s: {"precision": p, "recall": r, "support": int(mat[i].sum())} for i, (s, (p, r)) in enumerate(zip(STYLES, pr))
    }
    captions = [
        {"caption": " ".join(g), "predicted": p, "style": t} for g, p, t in zip(generated, preds, truths)
    ]
    return EvalReport(mat, per_style, micro, macro, b.score, len(truths), b.precisions, b.brevity_penalty, captions)


def evaluate(
    captioner,
    records: Sequence[CaptionRecord],
    pixels: Sequence[np.ndarray],
    lexicon: Mapping[str, Sequence[str]] = DEFAULT_LEXICON,
    beam_size: int = 3,
    max_len: int = 20,
) -> EvalReport:
    """Caption every test image and score against the ground-truth captions/styles."""
    for i, rec in enumerate(records):
        if rec.style is None:
            raise ValueError(f"test record {i} ({rec.image_path}) has no ground-truth style")
    generated = [captioner.beam(px, beam_size, max_len).tokens for px in pixels]
    references = [tokenize(rec.caption) for rec in records]
    report = build_report(generated, references, [rec.style for rec in records], lexicon)
    for entry, rec in zip(report.captions, records):
        entry["image"] = rec.image_path
    return report


def _fmt(x: Optional[float]) -> str:
    return "  n/a" if x is None else f"{100 * x:5.1f}"


def render_table(reports: Mapping[str, EvalReport]) -> str:
    """Per-style precision/recall side by side, then BLEU and accuracy."""
    names = list(reports)
    width = 8 * len(names)
    lines = [
        f"{'':10}| {'Precision':^{width}}| {'Recall':^{width}}",
        f"{'Look':10}| " + "".join(f"{n[:7]:>8}" for n in names) + "| " + "".join(f"{n[:7]:>8}" for n in names),
    ]
    for s in STYLES:
        prec = "".join(f"{_fmt(reports[n].per_style[s]['precision']):>8}" for n in names)
        rec = "".join(f"{_fmt(reports[n].per_style[s]['recall']):>8}" for n in names)
        lines.append(f"{s.capitalize():10}| {prec}| {rec}")
    lines.append("")
    lines.append(f"{'':22}" + "".join(f"{n[:12]:>14}" for n in names))
    for key, label in (("bleu", "BLEU"), ("accuracy_micro", "Accuracy (micro)"), ("accuracy_paper_macro", "Accuracy (1-vs-rest)")):
        lines.append(f"{label:22}" + "".join(f"{getattr(reports[n], key):14.4f}" for n in names))
    return "\n".join(lines) + "\n"
