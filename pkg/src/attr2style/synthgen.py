"""Synthetic garment corpus with attribute/style correlation.

Styles are drawn uniformly; each attribute family is then drawn from
``P(value | style)``. Images are procedurally rendered dress silhouettes so
every attribute is visible in pixels.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np
from PIL import Image, ImageDraw

from attr2style.corpus import STYLES, CaptionRecord, channel_stats, write_manifest

log = logging.getLogger(__name__)

PRINTS = ("floral", "embellished", "solid", "striped", "geometric")
SHAPES = ("a-line", "shift", "bodycon", "maxi", "peplum")
COLORS = ("red", "blue", "green", "yellow", "black", "white", "pink", "purple")
LENGTHS = ("mini", "knee", "maxi")
FAMILIES = {"print": PRINTS, "shape": SHAPES, "color": COLORS, "length": LENGTHS}

RGB = {
    "red": (200, 30, 40),
    "blue": (30, 60, 190),
    "green": (30, 150, 60),
    "yellow": (235, 210, 40),
    "black": (20, 20, 20),
    "white": (250, 250, 250),
    "pink": (240, 140, 180),
    "purple": (120, 40, 150),
}
BACKGROUND = (150, 150, 150)

ATTRIBUTE_TEMPLATE = "{color} {print} print {shape} dress with {length} length"
STYLE_TEMPLATES = {s: ["this dress is a perfect pick for a {style} look"] for s in STYLES[:-1]}
STYLE_TEMPLATES["none"] = ["this dress is for everyday wear"]


@dataclass(frozen=True)
class AttributeTuple:
    print: str
    shape: str
    color: str
    length: str

    def __post_init__(self):
        for fam, values in FAMILIES.items():
            if getattr(self, fam) not in values:
                raise ValueError(f"{fam} must be one of {values}, got {getattr(self, fam)!r}")


CorrelationMatrix = dict  # style -> family -> value -> probability


def _spread(dominant: Mapping[str, float], values: Sequence[str]) -> dict[str, float]:
    rest = [v for v in values if v not in dominant]
    left = 1.0 - sum(dominant.values())
    probs = {v: left / len(rest) for v in rest}
    probs.update(dominant)
    return {v: probs[v] for v in values}


def uniform_correlation(styles: Sequence[str] = STYLES) -> CorrelationMatrix:
    return {s: {f: {v: 1 / len(vals) for v in vals} for f, vals in FAMILIES.items()} for s in styles}


def default_correlation() -> CorrelationMatrix:
    prints = {
        "party": {"embellished": 0.60, "floral": 0.25},
        "feminine": {"floral": 0.60},
        "cocktail": {"solid": 0.50, "embellished": 0.30},
        "summer": {"striped": 0.45, "floral": 0.30},
        "winter": {"solid": 0.55, "geometric": 0.25},
        "none": {},
    }
    shapes = {
        "party": "bodycon",
        "cocktail": "peplum",
        "feminine": "a-line",
        "summer": "maxi",
        "winter": "shift",
    }
    matrix = uniform_correlation()
    for style in STYLES:
        matrix[style]["print"] = _spread(prints[style], PRINTS)
        if style in shapes:
            matrix[style]["shape"] = _spread({shapes[style]: 0.4}, SHAPES)
    return matrix


def validate_correlation(matrix: CorrelationMatrix, styles: Sequence[str] = STYLES) -> None:
    for style in styles:
        if style not in matrix:
            raise ValueError(f"correlation matrix missing style {style!r}")
        for fam, values in FAMILIES.items():
            probs = matrix[style].get(fam)
            if probs is None or set(probs) != set(values):
                raise ValueError(f"correlation[{style}][{fam}] must cover {values}")
            p = np.array([probs[v] for v in values], dtype=float)
            if (p < 0).any() or abs(p.sum() - 1.0) > 1e-9:
                raise ValueError(f"correlation[{style}][{fam}] is not a probability vector")


@dataclass
class SynthConfig:
    n_source: int = 2000
    n_target: int = 200
    n_test: int = 200
    styles: tuple[str, ...] = STYLES
    seed: int = 42
    image_side: int = 64
    correlation: CorrelationMatrix = field(default_factory=default_correlation)
    attribute_template: str = ATTRIBUTE_TEMPLATE
    style_templates: dict = field(default_factory=lambda: {k: list(v) for k, v in STYLE_TEMPLATES.items()})

    def __post_init__(self):
        if min(self.n_source, self.n_target, self.n_test) < 0:
            raise ValueError("corpus counts must be >= 0")
        self.styles = tuple(self.styles)
        validate_correlation(self.correlation, self.styles)


def sample_attributes(matrix: CorrelationMatrix, style: str, rng: np.random.Generator) -> AttributeTuple:
    picked = {}
    for fam, values in FAMILIES.items():
        p = np.array([matrix[style][fam][v] for v in values], dtype=float)
        picked[fam] = values[int(rng.choice(len(values), p=p / p.sum()))]
    return AttributeTuple(**picked)


def sample_item(config: SynthConfig, rng: np.random.Generator) -> tuple[str, AttributeTuple]:
    style = config.styles[int(rng.integers(len(config.styles)))]
    return style, sample_attributes(config.correlation, style, rng)


# -- rendering ---------------------------------------------------------------

# half-widths (fraction of side) at shoulder, waist, hip and hem
_SHAPE_PROFILE = {
    "a-line": (0.24, 0.18, 0.26, 0.44),
    "shift": (0.25, 0.24, 0.25, 0.27),
    "bodycon": (0.22, 0.14, 0.20, 0.16),
    "maxi": (0.16, 0.17, 0.30, 0.40),
    "peplum": (0.22, 0.14, 0.34, 0.18),
}
_HEM_Y = {"mini": 0.70, "knee": 0.84, "maxi": 0.97}
_TOP_Y, _WAIST_Y, _HIP_Y = 0.05, 0.36, 0.46


def silhouette_polygon(shape: str, length: str, side: int, dx: float = 0.0) -> list[tuple[float, float]]:
    shoulder, waist, hip, hem = _SHAPE_PROFILE[shape]
    hem_y = _HEM_Y[length]
    cx = side / 2 + dx
    rows = [(_TOP_Y, shoulder), (_WAIST_Y, waist), (_HIP_Y, hip), (hem_y, hem)]
    if shape == "peplum":
        # flared ruffle ends just below the hip, skirt narrows again
        rows = [
            (_TOP_Y, shoulder),
            (_WAIST_Y, waist),
            (_WAIST_Y + 0.03, hip),
            (_HIP_Y + 0.04, hip),
            (_HIP_Y + 0.05, waist + 0.03),
            (hem_y, hem),
        ]
    right = [(cx + w * side, y * side) for y, w in rows]
    left = [(cx - w * side, y * side) for y, w in reversed(rows)]
    neck = [(cx - 0.07 * side, _TOP_Y * side), (cx, (_TOP_Y + 0.08) * side), (cx + 0.07 * side, _TOP_Y * side)]
    return neck[1:] + right + left + neck[:1]


def _contrast(rgb: tuple[int, int, int]) -> tuple[int, int, int]:
    lum = 0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2]
    if lum > 140:
        return tuple(int(c * 0.35) for c in rgb)
    return tuple(int(c + (255 - c) * 0.7) for c in rgb)


def render_image(attrs: AttributeTuple, side: int, rng: np.random.Generator) -> np.ndarray:
    """Draw a dress; returns an unnormalized ``side x side x 3`` uint8 array."""
    if side < 32:
        raise ValueError("side must be >= 32")
    dx = float(rng.integers(-side // 32, side // 32 + 1))
    fill = RGB[attrs.color]
    accent = _contrast(fill)

    img = Image.new("RGB", (side, side), BACKGROUND)
    mask = Image.new("L", (side, side), 0)
    poly = silhouette_polygon(attrs.shape, attrs.length, side, dx)
    ImageDraw.Draw(img).polygon(poly, fill=fill)
    ImageDraw.Draw(mask).polygon(poly, fill=255)

    tex = Image.new("RGB", (side, side), fill)
    draw = ImageDraw.Draw(tex)
    unit = side / 64
    if attrs.print == "striped":
        period = max(4, side // 8)
        phase = int(rng.integers(period))
        for y in range(-period + phase, side, period):
            draw.rectangle([0, y, side, y + period // 2 - 1], fill=accent)
    elif attrs.print == "geometric":
        tile = max(4, side // 8)
        off = int(rng.integers(tile))
        for ty in range(-tile + off, side, tile):
            for tx in range(-tile + off, side, tile):
                draw.polygon([(tx, ty + tile), (tx + tile / 2, ty), (tx + tile, ty + tile)], fill=accent)
    elif attrs.print == "floral":
        n = 10 + int(rng.integers(5))
        for cx, cy in rng.uniform(0, side, size=(n, 2)):
            r = 1.6 * unit
            for k in range(5):
                ang = 2 * np.pi * k / 5
                px, py = cx + 2.2 * unit * np.cos(ang), cy + 2.2 * unit * np.sin(ang)
                draw.ellipse([px - r, py - r, px + r, py + r], fill=accent)
            draw.ellipse([cx - r, cy - r, cx + r, cy + r], fill=(250, 220, 60))
    elif attrs.print == "embellished":
        n = int(0.12 * side * side)
        pts = rng.integers(0, side, size=(n, 2))
        palette = [(255, 215, 0), (255, 255, 255), (0, 255, 255)]
        for i, (x, y) in enumerate(pts):
            draw.point((int(x), int(y)), fill=palette[i % 3])
    img.paste(tex, (0, 0), mask)
    return np.asarray(img, dtype=np.uint8).copy()


# -- captions ----------------------------------------------------------------

def make_captions(
    style: str,
    attrs: AttributeTuple,
    index: int = 0,
    attribute_template: str = ATTRIBUTE_TEMPLATE,
    style_templates: Optional[Mapping[str, Sequence[str]]] = None,
) -> tuple[str, str]:
    """Return ``(attribute_caption, style_caption)``.

    With several paraphrases for a style, item ``index`` uses paraphrase
    ``index % len(paraphrases)``.
    """
    templates = style_templates or STYLE_TEMPLATES
    attr_caption = attribute_template.format(
        color=attrs.color, print=attrs.print, shape=attrs.shape, length=attrs.length
    )
    options = templates[style]
    return attr_caption, options[index % len(options)].format(style=style)


# -- corpus ------------------------------------------------------------------

def _item_rngs(seed: int, part: int, n: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence([seed, part]).spawn(n)]


def generate_corpus(config: SynthConfig, out_dir: str | Path) -> tuple[Path, Path, Path]:
    """Write PNG images plus source/target/test manifests under ``out_dir``.

    Test styles are balanced round-robin; source and target styles are drawn
    uniformly. Everything is determined by ``config.seed``.
    """
    out_dir = Path(out_dir)
    manifests = {}
    source_pixels = []
    parts = (("source", config.n_source), ("target", config.n_target), ("test", config.n_test))
    for part_idx, (part, count) in enumerate(parts):
        image_dir = out_dir / "images" / part
        try:
            image_dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise OSError(f"cannot create {image_dir}: {exc}") from exc
        records = []
        for i, rng in enumerate(_item_rngs(config.seed, part_idx, count)):
            if part == "test":
                style = config.styles[i % len(config.styles)]
                attrs = sample_attributes(config.correlation, style, rng)
            else:
                style, attrs = sample_item(config, rng)
            pixels = render_image(attrs, config.image_side, rng)
            rel = f"images/{part}/{i:05d}.png"
            try:
                Image.fromarray(pixels).save(out_dir / rel, optimize=False)
            except OSError as exc:
                raise OSError(f"cannot write {out_dir / rel}: {exc}") from exc
            attr_caption, style_caption = make_captions(
                style, attrs, i, config.attribute_template, config.style_templates
            )
            if part == "source":
                source_pixels.append(pixels.astype(np.float32) / 255.0)
                records.append(CaptionRecord(rel, attr_caption, "source"))
            else:
                split = "test" if part == "test" else None
                records.append(CaptionRecord(rel, style_caption, "target", style, split))
        path = out_dir / f"{part}.jsonl"
        write_manifest(records, path)
        manifests[part] = path
        log.info("wrote %d %s records to %s", count, part, path)

    cfg = asdict(config)
    cfg["styles"] = list(config.styles)
    (out_dir / "synth_config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")
    mean, std = channel_stats(source_pixels)
    (out_dir / "stats.json").write_text(json.dumps({"mean": mean, "std": std}, indent=2) + "\n")
    return manifests["source"], manifests["target"], manifests["test"]


def mutual_information(xs: Sequence[str], ys: Sequence[str]) -> float:
    """Plug-in estimate of I(X;Y) in nats."""
    n = len(xs)
    joint: dict[tuple[str, str], int] = {}
    px: dict[str, int] = {}
    py: dict[str, int] = {}
    for x, y in zip(xs, ys):
        joint[(x, y)] = joint.get((x, y), 0) + 1
        px[x] = px.get(x, 0) + 1
        py[y] = py.get(y, 0) + 1
    return sum(c / n * np.log(c * n / (px[x] * py[y])) for (x, y), c in joint.items())
