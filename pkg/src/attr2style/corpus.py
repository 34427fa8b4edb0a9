"""Caption manifests, image preprocessing and deterministic splits."""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

log = logging.getLogger(__name__)

STYLES = ("party", "cocktail", "feminine", "summer", "winter", "none")
DOMAINS = ("source", "target")
SPLITS = ("train", "val", "test")

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class CaptionRecord:
    image_path: str
    caption: str
    domain: str
    style: Optional[str] = None
    split: Optional[str] = None

    def to_json(self) -> dict:
        out = {"image": self.image_path, "caption": self.caption, "domain": self.domain}
        if self.style is not None:
            out["style"] = self.style
        if self.split is not None:
            out["split"] = self.split
        return out


def _check_choice(lineno: int, key: str, value, allowed: Sequence[str]) -> None:
    if value not in allowed:
        raise ManifestError(
            f"manifest line {lineno}: unknown {key} {value!r}; allowed: {', '.join(allowed)}"
        )


def load_manifest(path: str | Path) -> list[CaptionRecord]:
    """Read a JSON-Lines manifest; one record per nonempty line, file order."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"manifest line {lineno}: malformed JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise ManifestError(f"manifest line {lineno}: expected a JSON object")
            for key in ("image", "caption", "domain"):
                if key not in obj:
                    raise ManifestError(f"manifest line {lineno}: missing field {key}")
            _check_choice(lineno, "domain", obj["domain"], DOMAINS)
            style = obj.get("style")
            if style is not None:
                _check_choice(lineno, "style", style, STYLES)
            split = obj.get("split")
            if split is not None:
                _check_choice(lineno, "split", split, SPLITS)
            records.append(CaptionRecord(obj["image"], obj["caption"], obj["domain"], style, split))
    return records


def write_manifest(records: Iterable[CaptionRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json(), sort_keys=True) + "\n")


def _float_image(arr: np.ndarray) -> list[Image.Image]:
    return [Image.fromarray(np.ascontiguousarray(arr[..., c], dtype=np.float32), mode="F") for c in range(3)]


def preprocess_image(
    path: str | Path | Image.Image | np.ndarray,
    side: int,
    mean: Sequence[float] = IMAGENET_MEAN,
    std: Sequence[float] = IMAGENET_STD,
) -> np.ndarray:
    """Resize shorter side to ``side``, center-crop, scale to [0,1], normalize.

    Float arrays are taken as already scaled to [0,1]. Returns a float32
    ``side x side x 3`` array.
    """
    if isinstance(path, np.ndarray) and path.dtype != np.uint8:
        channels = _float_image(path)
        arr = np.stack([np.asarray(_resize_crop(ch, side), dtype=np.float32) for ch in channels], axis=-1)
        return (arr - np.asarray(mean, dtype=np.float32)) / np.asarray(std, dtype=np.float32)
    if isinstance(path, np.ndarray):
        img = Image.fromarray(path)
    elif isinstance(path, Image.Image):
        img = path
    else:
        try:
            img = Image.open(path)
            img.load()
        except (UnidentifiedImageError, OSError) as exc:
            raise ValueError(f"cannot decode image {path}: {exc}") from None
    arr = np.asarray(_resize_crop(img.convert("RGB"), side), dtype=np.float32) / 255.0
    return (arr - np.asarray(mean, dtype=np.float32)) / np.asarray(std, dtype=np.float32)


def _resize_crop(img: Image.Image, side: int) -> Image.Image:
    w, h = img.size
    if min(w, h) != side:
        scale = side / min(w, h)
        img = img.resize((max(side, round(w * scale)), max(side, round(h * scale))), Image.BILINEAR)
        w, h = img.size
    if (w, h) != (side, side):
        left, top = (w - side) // 2, (h - side) // 2
        img = img.crop((left, top, left + side, top + side))
    return img


def split_records(
    records: Sequence[CaptionRecord], seed: int, fractions: tuple[float, float] = (0.8, 0.1)
) -> list[CaptionRecord]:
    """Assign train/val/test by a seeded shuffle; input order is preserved."""
    f_train, f_val = fractions
    if f_train <= 0 or f_val <= 0 or f_train + f_val > 1 + 1e-12:
        raise ValueError("fractions must be positive with sum <= 1")
    n = len(records)
    n_train = int(round(n * f_train))
    n_val = min(int(round(n * f_val)), n - n_train)
    if n - n_train - n_val == 0 and n > 0:
        warnings.warn("split_records: no records left for the test split", stacklevel=2)
    order = np.random.default_rng(seed).permutation(n)
    labels = [""] * n
    for rank, idx in enumerate(order):
        labels[idx] = "train" if rank < n_train else "val" if rank < n_train + n_val else "test"
    return [replace(rec, split=lab) for rec, lab in zip(records, labels)]


def channel_stats(arrays: Iterable[np.ndarray]) -> tuple[list[float], list[float]]:
    """Per-channel mean/std of [0,1]-scaled HxWx3 images."""
    total = np.zeros(3)
    total_sq = np.zeros(3)
    count = 0
    for arr in arrays:
        flat = arr.reshape(-1, 3).astype(np.float64)
        total += flat.sum(0)
        total_sq += (flat**2).sum(0)
        count += flat.shape[0]
    if count == 0:
        return list(IMAGENET_MEAN), list(IMAGENET_STD)
    mean = total / count
    std = np.sqrt(np.maximum(total_sq / count - mean**2, 1e-12))
    return mean.round(6).tolist(), std.round(6).tolist()

