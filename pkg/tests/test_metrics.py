import json
import random

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from attr2style.corpus import STYLES, CaptionRecord
from attr2style.inference import CaptionResult
from attr2style.metrics import (
    DEFAULT_LEXICON,
    accuracy,
    bleu,
    bleu_details,
    build_report,
    confusion,
    evaluate,
    extract_style,
    precision_recall,
    render_table,
    validate_lexicon,
)
from attr2style.vocab import tokenize

from oracles import brute_force_bleu

# rows = truth, cols = prediction, STYLES order; 20 items
CRAFTED = np.array(
    [
        [3, 1, 0, 0, 0, 0],
        [0, 2, 1, 0, 0, 1],
        [0, 0, 3, 0, 0, 0],
        [1, 0, 0, 2, 0, 0],
        [0, 0, 0, 0, 0, 2],
        [0, 1, 0, 0, 1, 2],
    ]
)


@pytest.mark.parametrize(
    "caption,style",
    [
        ("perfect pick for a party look", "party"),
        ("a red solid dress", "none"),
        ("cocktail or party wear", "cocktail"),
        ("Party, cocktail!", "party"),
        ("", "none"),
    ],
)
def test_extract_style(caption, style):
    assert extract_style(caption, DEFAULT_LEXICON) == style


def test_custom_lexicon_and_validation():
    lex = {"party": ["party", "clubbing"], "winter": ["snow"]}
    validate_lexicon(lex)
    assert extract_style("ready for clubbing", lex) == "party"
    with pytest.raises(ValueError):
        validate_lexicon({"party": ["x"], "winter": ["x"]})
    with pytest.raises(ValueError):
        validate_lexicon({"party": []})


def test_confusion_diagonal():
    styles = [STYLES[i % 6] for i in range(10)]
    mat = confusion(styles, styles)
    assert np.trace(mat) == 10 and mat.sum() == 10


def test_confusion_single_error():
    mat = confusion(["none"], ["party"])
    assert mat[0, 5] == 1 and mat.sum() == 1


def test_confusion_hand_tally():
    truths = ["party", "party", "party", "cocktail", "cocktail", "feminine", "summer", "summer", "winter", "none", "none", "none"]
    preds = ["party", "none", "cocktail", "cocktail", "party", "feminine", "summer", "none", "summer", "none", "none", "winter"]
    expected = np.zeros((6, 6), dtype=int)
    tally = {(0, 0): 1, (0, 5): 1, (0, 1): 1, (1, 1): 1, (1, 0): 1, (2, 2): 1, (3, 3): 1, (3, 5): 1, (4, 3): 1, (5, 5): 2, (5, 4): 1}
    for (r, c), n in tally.items():
        expected[r, c] = n
    np.testing.assert_array_equal(confusion(preds, truths), expected)


def test_confusion_length_mismatch():
    with pytest.raises(ValueError, match="length mismatch"):
        confusion(["party"], [])


def test_precision_recall_perfect_and_degenerate():
    pr = precision_recall(np.diag([2, 3, 0, 1, 1, 4]))
    assert all(p in (1.0, None) and r in (1.0, None) for p, r in pr)
    assert pr[2] == (None, None)
    mat = np.zeros((6, 6), dtype=int)
    mat[0, 5] = 3
    assert precision_recall(mat)[0] == (None, 0.0)


def test_precision_recall_two_class():
    pr = precision_recall(np.array([[8, 2], [3, 7]]))
    assert pr[0] == pytest.approx((8 / 11, 0.8))
    assert pr[1] == pytest.approx((7 / 9, 0.7))


def test_crafted_six_class_metrics():
    pr = precision_recall(CRAFTED)
    assert [p for p, _ in pr] == [3 / 4, 2 / 4, 3 / 4, 2 / 2, 0 / 1, 2 / 5]
    assert [r for _, r in pr] == [3 / 4, 2 / 4, 3 / 3, 2 / 3, 0 / 2, 2 / 4]
    micro, macro = accuracy(CRAFTED)
    assert micro == 12 / 20
    # one-vs-rest (N - FP - FN) / N per class: 18, 16, 19, 19, 17, 15 out of 20
    assert macro == pytest.approx((18 + 16 + 19 + 19 + 17 + 15) / 120, abs=1e-15)


def test_accuracy_extremes():
    assert accuracy(np.diag([3, 1, 2, 5, 1, 1])) == (1.0, 1.0)
    assert accuracy(np.array([[0, 5], [5, 0]])) == (0.0, 0.0)
    with pytest.raises(ValueError):
        accuracy(np.zeros((6, 6)))


def test_bleu_exact_and_disjoint():
    corpus = [["a", "b", "c", "d", "e"], ["x", "y", "z", "w"]]
    assert bleu(corpus, corpus) == 1.0
    assert bleu([["a", "b", "c", "d"]], [["e", "f", "g", "h"]]) == 0.0
    with pytest.raises(ValueError):
        bleu([], [])


def test_bleu_cat_example():
    cand, ref = tokenize("the cat sat on the mat"), tokenize("the cat is on the mat")
    details = bleu_details([cand], [ref])
    assert details.precisions == [5 / 6, 3 / 5, 1 / 4, 0.0]
    assert details.score == 0.0
    assert abs(details.score - brute_force_bleu([cand], [ref])) < 1e-9
    assert bleu([cand], [ref], max_n=3) == pytest.approx(0.5, abs=1e-12)
    assert abs(bleu([cand], [ref], max_n=3) - brute_force_bleu([cand], [ref], max_n=3)) < 1e-9


def test_bleu_brevity_penalty():
    details = bleu_details([["a", "b", "c", "d"]], [["a", "b", "c", "d", "e", "f"]])
    assert details.brevity_penalty == pytest.approx(np.exp(1 - 6 / 4))


def test_bleu_smoothing_is_positive():
    assert bleu([["a", "b", "c"]], [["a", "x", "c"]], smooth=True) > 0.0


def test_bleu_random_pairs_match_oracle():
    rng = random.Random(0)
    words = list("abcdef")
    for _ in range(20):
        n = rng.randint(1, 4)
        cands = [[rng.choice(words) for _ in range(rng.randint(4, 12))] for _ in range(n)]
        refs = [[rng.choice(words) for _ in range(rng.randint(4, 12))] for _ in range(n)]
        assert abs(bleu(cands, refs) - brute_force_bleu(cands, refs)) < 1e-9


@given(st.lists(st.lists(st.sampled_from("abcde"), min_size=4, max_size=10), min_size=1, max_size=5))
def test_bleu_self_is_one(corpus):
    assert bleu(corpus, corpus) == pytest.approx(1.0, abs=1e-12)


@given(st.lists(st.tuples(st.sampled_from(STYLES), st.sampled_from(STYLES)), min_size=1, max_size=50))
def test_confusion_conservation(pairs):
    preds, truths = zip(*pairs)
    mat = confusion(preds, truths)
    assert mat.sum() == len(pairs) and np.trace(mat) <= len(pairs) and (mat >= 0).all()
    micro, macro = accuracy(mat)
    assert 0 <= micro <= 1 and 0 <= macro <= 1
    for i, s in enumerate(STYLES):
        assert mat[i].sum() == sum(t == s for t in truths)


class EchoCaptioner:
    """Returns a fixed caption per image index."""

    def __init__(self, captions):
        self.captions = captions

    def beam(self, pixels, k, max_len, length_norm=False):
        return CaptionResult([], 0.0, np.zeros((0, 0)), tokenize(self.captions[int(pixels)]))


def _records(styles):
    caps = [f"this dress is a perfect pick for a {s} look" if s != "none" else "this dress is for everyday wear" for s in styles]
    return [CaptionRecord(f"{i}.png", c, "target", s, "test") for i, (c, s) in enumerate(zip(caps, styles))]


def test_evaluate_perfect_model():
    recs = _records(["party", "cocktail", "winter", "none", "summer"])
    report = evaluate(EchoCaptioner([r.caption for r in recs]), recs, list(range(5)))
    assert report.accuracy_micro == 1.0 and report.bleu == 1.0 and report.n_test == 5
    assert [report.per_style[s]["support"] for s in STYLES] == [r.sum() for r in report.confusion]


def test_evaluate_requires_style():
    recs = _records(["party"]) + [CaptionRecord("x.png", "a", "target")]
    with pytest.raises(ValueError, match="record 1"):
        evaluate(EchoCaptioner(["a", "b"]), recs, [0, 1])


def test_report_json_schema(tmp_path):
    recs = _records(["party", "none", "winter"])
    generated = [tokenize("a party look"), tokenize("a party look"), tokenize("nothing")]
    report = build_report(generated, [tokenize(r.caption) for r in recs], [r.style for r in recs])
    report.save(tmp_path / "r.json")
    data = json.loads((tmp_path / "r.json").read_text())
    assert {"bleu", "accuracy_micro", "accuracy_paper_macro", "per_style", "confusion", "n_test"} <= set(data)
    assert data["per_style"]["cocktail"]["precision"] is None
    assert data["per_style"]["party"] == {"precision": 0.5, "recall": 1.0, "support": 1}
    assert len(data["confusion"]) == 6 and all(len(row) == 6 for row in data["confusion"])
    table = render_table({"ours": report, "base": report})
    assert "Party" in table and "n/a" in table and "BLEU" in table
