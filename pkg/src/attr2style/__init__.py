"""Attribute-to-style transfer captioning toolkit."""

from attr2style.corpus import STYLES, CaptionRecord
from attr2style.vocab import Vocab, build_vocab

__all__ = ["STYLES", "CaptionRecord", "Vocab", "build_vocab"]
__version__ = "0.1.0"
