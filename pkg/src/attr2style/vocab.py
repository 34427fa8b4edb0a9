"""Token <-> id mapping shared by both training phases.

Special tokens have fixed ids so checkpoints stay portable::

    <pad>   = 0
    <start> = 1
    <end>   = 2
    <unk>   = 3
"""

from __future__ import annotations

import hashlib
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

PAD, START, END, UNK = 0, 1, 2, 3
SPECIAL_TOKENS = ("<pad>", "<start>", "<end>", "<unk>")

_PUNCT = re.compile(r"[^\w\s]|_")


def tokenize(text: str) -> list[str]:
    """Lowercase, replace punctuation with spaces, split on whitespace."""
    return _PUNCT.sub(" ", text.lower()).split()


@dataclass(frozen=True)
class Vocab:
    id_to_token: tuple[str, ...]
    min_freq: int = 1
    token_to_id: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if tuple(self.id_to_token[:4]) != SPECIAL_TOKENS:
            raise ValueError("vocab must start with the four special tokens")
        mapping = {tok: i for i, tok in enumerate(self.id_to_token)}
        if len(mapping) != len(self.id_to_token):
            raise ValueError("duplicate token in vocab")
        object.__setattr__(self, "token_to_id", mapping)

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    @property
    def specials(self) -> dict[str, int]:
        return {"pad": PAD, "start": START, "end": END, "unk": UNK}

    def serialize(self) -> str:
        return f"#minfreq={self.min_freq}\n" + "\n".join(self.id_to_token) + "\n"

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.serialize().encode("utf-8")).hexdigest()

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.serialize(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        return cls.parse(Path(path).read_text(encoding="utf-8"))

    @classmethod
    def parse(cls, text: str) -> "Vocab":
        lines = text.splitlines()
        if not lines or not lines[0].startswith("#minfreq="):
            raise ValueError("vocab file missing '#minfreq=<n>' header")
        min_freq = int(lines[0].split("=", 1)[1])
        return cls(tuple(lines[1:]), min_freq=min_freq)


def build_vocab(captions: Iterable[Sequence[str]], min_freq: int = 1) -> Vocab:
    """Build a vocab from tokenized captions.

    Tokens occurring at least ``min_freq`` times are kept and numbered in
    lexicographic order after the specials, so the result depends only on the
    multiset of captions.
    """
    if min_freq < 1:
        raise ValueError("min_freq must be >= 1")
    counts = Counter(tok for caption in captions for tok in caption)
    kept = sorted(tok for tok, n in counts.items() if n >= min_freq and tok not in SPECIAL_TOKENS)
    return Vocab(SPECIAL_TOKENS + tuple(kept), min_freq=min_freq)


def encode(vocab: Vocab, caption: Sequence[str] | str, max_len: int) -> tuple[list[int], int]:
    """Return ``(ids, length)``: START + ids + END, truncated, right-padded.

    Truncation keeps END as the last real token so every encoded caption
    terminates.
    """
    if max_len < 2:
        raise ValueError("max_len must be >= 2")
    if isinstance(caption, str):
        caption = tokenize(caption)
    body = [vocab.token_to_id.get(tok, UNK) for tok in caption][: max_len - 2]
    ids = [START, *body, END]
    length = len(ids)
    return ids + [PAD] * (max_len - length), length


def decode(vocab: Vocab, ids: Iterable[int]) -> list[str]:
    tokens = []
    for i in ids:
        i = int(i)
        if not 0 <= i < len(vocab):
            raise ValueError(f"invalid token id {i}")
        if i == END:
            break
        if i in (START, PAD):
            continue
        tokens.append(vocab.id_to_token[i])
    return tokens
