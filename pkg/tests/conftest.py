import numpy as np
import pytest
import torch

from attr2style.corpus import load_manifest
from attr2style.synthgen import SynthConfig, generate_corpus
from attr2style.trainer import load_caption_data
from attr2style.vocab import build_vocab, tokenize


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    src, tgt, test = generate_corpus(SynthConfig(n_source=16, n_target=12, n_test=12, seed=3), root)
    return {"root": root, "source": load_manifest(src), "target": load_manifest(tgt), "test": load_manifest(test)}


@pytest.fixture(scope="session")
def tiny_vocab(tiny_corpus):
    caps = [tokenize(r.caption) for part in ("source", "target") for r in tiny_corpus[part]]
    return build_vocab(caps, 1)


@pytest.fixture(scope="session")
def tiny_data(tiny_corpus, tiny_vocab):
    return {
        part: load_caption_data(tiny_corpus[part], tiny_corpus["root"], tiny_vocab, 64)
        for part in ("source", "target", "test")
    }


@pytest.fixture(autouse=True)
def _seed():
    torch.manual_seed(0)
    np.random.seed(0)


_ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


class _Criterion:
    def __init__(self, number, title):
        self.number, self.title, self.detail = number, title, ""

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        detail = self.detail if exc is None else f"{self.detail} {exc}".strip()
        _ACCEPTANCE[self.number] = (self.title, exc is None, " ".join(detail.split())[:300])
        return False


@pytest.fixture
def criterion():
    """``with criterion(n, title) as c: ...`` records one acceptance outcome."""
    return _Criterion


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, ok, detail = _ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number} {'PASS' if ok else 'FAIL'}: {title}: {detail}")
