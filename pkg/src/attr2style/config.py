"""Run configuration: nested defaults, a YAML/JSON file, then ``key=value`` overrides."""

from __future__ import annotations

from pathlib import Path
from typing import Literal, Optional, Sequence

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from attr2style.corpus import IMAGENET_MEAN, IMAGENET_STD
from attr2style.metrics import DEFAULT_LEXICON


class ConfigError(ValueError):
    pass


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DataSection(_Section):
    corpus_dir: Optional[str] = None  # default: <out>/corpus
    source_manifest: Optional[str] = None
    target_manifest: Optional[str] = None
    test_manifest: Optional[str] = None
    normalization: Literal["corpus", "imagenet", "custom"] = "corpus"
    mean: list[float] = Field(default_factory=lambda: list(IMAGENET_MEAN))
    std: list[float] = Field(default_factory=lambda: list(IMAGENET_STD))
    max_len: int = 20
    min_freq: int = 1
    shared_vocab: bool = True


class SynthSection(_Section):
    n_source: int = 2000
    n_target: int = 200
    n_test: int = 200
    seed: Optional[int] = None  # default: top-level seed
    image_side: Optional[int] = None  # default: encoder input side
    correlation: Optional[dict] = None
    attribute_template: Optional[str] = None
    style_templates: Optional[dict[str, list[str]]] = None


class EncoderSection(_Section):
    mode: Literal["toy", "full"] = "toy"
    pretrained_weights: Optional[str] = None


class ModelSection(_Section):
    encoder: EncoderSection = Field(default_factory=EncoderSection)
    embed_dim: Optional[int] = None
    hidden_dim: Optional[int] = None
    attention_dim: Optional[int] = None
    gate: bool = False
    dropout: float = 0.5


class PhaseSection(_Section):
    epochs: int = Field(30, ge=1)
    batch_size: int = Field(32, ge=1)
    decoder_lr: float = Field(4e-4, gt=0)
    encoder_lr: float = Field(1e-4, gt=0)
    grad_clip: float = 5.0
    early_stop_patience: Optional[int] = None
    val_fraction: float = 0.1
    finetune_blocks: list[int] = Field(default_factory=list)
    decoder_init: Literal["fresh", "warm"] = "fresh"
    alpha_reg: float = 0.0
    hflip: bool = False


PHASES = ("phase_a", "phase_b", "baseline")


class TrainSection(_Section):
    """Per-phase settings. ``train.<key>`` in a file or override sets it for every phase."""

    phase_a: PhaseSection = Field(default_factory=PhaseSection)
    # 180 target training captions give too few updates at batch 32
    phase_b: PhaseSection = Field(default_factory=lambda: PhaseSection(finetune_blocks=[2, 3, 4], batch_size=8))
    baseline: PhaseSection = Field(default_factory=lambda: PhaseSection(finetune_blocks=[2, 3, 4], batch_size=8))


class DecodeSection(_Section):
    beam_size: int = Field(3, ge=1)
    max_len: int = Field(20, ge=2)
    length_norm: bool = False


class EvalSection(_Section):
    lexicon: dict[str, list[str]] = Field(default_factory=lambda: {k: list(v) for k, v in DEFAULT_LEXICON.items()})
    checkpoint: str = "phase_b"  # checkpoint name under checkpoints/ or a path
    manifest: Optional[str] = None  # default: test manifest
    attention_maps: int = 5


class RunConfig(_Section):
    seed: int = 42
    data: DataSection = Field(default_factory=DataSection)
    synth: SynthSection = Field(default_factory=SynthSection)
    model: ModelSection = Field(default_factory=ModelSection)
    train: TrainSection = Field(default_factory=TrainSection)
    decode: DecodeSection = Field(default_factory=DecodeSection)
    eval: EvalSection = Field(default_factory=EvalSection)


def _set_dotted(tree: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    node = tree
    for key in keys[:-1]:
        child = node.setdefault(key, {})
        if not isinstance(child, dict):
            raise ConfigError(f"config key {dotted}: {key} is not a section")
        node = child
    node[keys[-1]] = value


def _spread_train(tree: dict) -> None:
    """Move shared ``train.<key>`` values into each phase that does not set the key."""
    train = tree.get("train")
    if not isinstance(train, dict):
        return
    shared = {k: train.pop(k) for k in list(train) if k in PhaseSection.model_fields}
    for phase in PHASES:
        section = train.setdefault(phase, {})
        if isinstance(section, dict):
            for k, v in shared.items():
                section.setdefault(k, v)


def _with_defaults(model: BaseModel, tree: dict) -> dict:
    """Overlay a partial tree on ``model``'s values so per-section defaults survive."""
    out = model.model_dump()
    for key, value in tree.items():
        default = getattr(model, key, None)
        if isinstance(default, BaseModel) and isinstance(value, dict):
            out[key] = _with_defaults(default, value)
        else:
            out[key] = value
    return out


def _describe(err: ValidationError) -> str:
    msgs = []
    for e in err.errors():
        key = ".".join(str(p) for p in e["loc"])
        if e["type"] == "extra_forbidden":
            msgs.append(f"unknown config key {key}")
        else:
            msgs.append(f"config key {key}: {e['msg']} (got {e.get('input')!r})")
    return "; ".join(msgs)


def parse_config(path: Optional[str | Path] = None, overrides: Sequence[str] = ()) -> RunConfig:
    """Resolve defaults <- file <- ``key=value`` overrides (values parsed as YAML)."""
    tree: dict = {}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        try:
            loaded = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse config {path}: {exc}") from None
        if loaded is not None and not isinstance(loaded, dict):
            raise ConfigError(f"config {path} must be a mapping")
        tree = loaded or {}
    _spread_train(tree)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        key = key.strip()
        value = yaml.safe_load(raw) if raw else None
        parts = key.split(".")
        if len(parts) == 2 and parts[0] == "train" and parts[1] in PhaseSection.model_fields:
            for phase in PHASES:
                _set_dotted(tree, f"train.{phase}.{parts[1]}", value)
        else:
            _set_dotted(tree, key, value)
    try:
        return RunConfig.model_validate(_with_defaults(RunConfig(), tree))
    except ValidationError as exc:
        raise ConfigError(_describe(exc)) from None
