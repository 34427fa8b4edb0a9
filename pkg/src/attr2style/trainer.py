"""Phase A (source attributes), phase B (target styles) and the baseline.

Phase B starts from the phase-A encoder; the baseline trains the same
architecture on target data alone. Checkpoints carry a vocab digest and a
parent digest so the transfer chain can be checked later.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
from torch import nn

from attr2style.archive import read_archive, write_archive
from attr2style.attn_decoder import caption_loss
from attr2style.corpus import IMAGENET_MEAN, IMAGENET_STD, CaptionRecord, preprocess_image
from attr2style.model import CaptionModel, ModelConfig
from attr2style.vocab import PAD, Vocab, encode, tokenize

log = logging.getLogger(__name__)

PHASES = ("A", "B", "baseline")
# B and baseline share an init seed so their decoders start identical
_INIT_OFFSET = {"A": 0, "B": 1, "baseline": 1}


class ArchitectureMismatch(ValueError):
    pass


class VocabMismatch(ValueError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    decoder_lr: float = 4e-4
    encoder_lr: float = 1e-4
    seed: int = 42
    grad_clip: float = 5.0
    decoder_init: str = "fresh"
    early_stop_patience: Optional[int] = None
    val_fraction: float = 0.1
    finetune_blocks: tuple[int, ...] = ()
    alpha_reg: float = 0.0
    hflip: bool = False

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.decoder_lr <= 0 or self.encoder_lr <= 0:
            raise ValueError("learning rates must be > 0")
        if self.decoder_init not in ("fresh", "warm"):
            raise ValueError("decoder_init must be 'fresh' or 'warm'")
        self.finetune_blocks = tuple(self.finetune_blocks)


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)

    @property
    def phase(self) -> str:
        return self.meta["phase"]

    @property
    def digest(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.params):
            arr = np.ascontiguousarray(self.params[name])
            h.update(name.encode())
            h.update(str(arr.dtype).encode())
            h.update(str(arr.shape).encode())
            h.update(arr.tobytes())
        return h.hexdigest()

    @property
    def model_config(self) -> ModelConfig:
        return ModelConfig.from_dict(self.meta["model"])

    def encoder_params(self) -> dict[str, np.ndarray]:
        return {k: v for k, v in self.params.items() if k.startswith("encoder.")}


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    write_archive(path, ckpt.params, ckpt.meta)


def load_checkpoint(path: str | Path, vocab: Optional[Vocab] = None) -> Checkpoint:
    params, meta = read_archive(path)
    ckpt = Checkpoint(params, meta)
    if vocab is not None and meta.get("vocab_digest") != vocab.digest:
        raise VocabMismatch(f"vocab digest mismatch for checkpoint {path}")
    return ckpt


def state_to_arrays(model: nn.Module) -> dict[str, np.ndarray]:
    return {k: v.detach().cpu().numpy().copy() for k, v in model.state_dict().items()}


def load_params(model: nn.Module, params: dict[str, np.ndarray], prefix: str = "") -> None:
    """Load ``params`` (optionally only names under ``prefix``) or list every mismatch."""
    own = {k: v for k, v in model.state_dict().items() if k.startswith(prefix)}
    given = {k: v for k, v in params.items() if k.startswith(prefix)}
    missing = sorted(set(own) - set(given))
    unexpected = sorted(set(given) - set(own))
    reshaped = sorted(k for k in set(own) & set(given) if tuple(own[k].shape) != tuple(given[k].shape))
    bad = missing + unexpected + reshaped
    if bad:
        shown = ", ".join(bad[:12]) + (f", ... ({len(bad)} total)" if len(bad) > 12 else "")
        raise ArchitectureMismatch(f"checkpoint does not match architecture; differing parameters: {shown}")
    with torch.no_grad():
        for k, v in own.items():
            v.copy_(torch.from_numpy(np.asarray(given[k])))


def model_from_checkpoint(ckpt: Checkpoint) -> CaptionModel:
    model = CaptionModel(ckpt.model_config, ckpt.meta["vocab_size"])
    load_params(model, ckpt.params)
    model.eval()
    return model


# -- data --------------------------------------------------------------------

@dataclass
class CaptionData:
    images: torch.Tensor  # (N, 3, S, S)
    ids: torch.Tensor  # (N, max_len)
    lengths: torch.Tensor  # (N,)
    records: list[CaptionRecord]

    def __len__(self) -> int:
        return len(self.records)

    def subset(self, idx: Sequence[int]) -> "CaptionData":
        idx_t = torch.as_tensor(list(idx), dtype=torch.long)
        return CaptionData(self.images[idx_t], self.ids[idx_t], self.lengths[idx_t], [self.records[i] for i in idx])


def load_caption_data(
    records: Sequence[CaptionRecord],
    root: str | Path,
    vocab: Vocab,
    side: int,
    mean: Sequence[float] = IMAGENET_MEAN,
    std: Sequence[float] = IMAGENET_STD,
    max_len: int = 20,
) -> CaptionData:
    root = Path(root)
    images = np.zeros((len(records), 3, side, side), dtype=np.float32)
    ids = np.zeros((len(records), max_len), dtype=np.int64)
    lengths = np.zeros(len(records), dtype=np.int64)
    for i, rec in enumerate(records):
        path = root / rec.image_path
        if not path.is_file():
            raise FileNotFoundError(f"image not found: {path}")
        images[i] = preprocess_image(path, side, mean, std).transpose(2, 0, 1)
        ids[i], lengths[i] = encode(vocab, tokenize(rec.caption), max_len)
    return CaptionData(torch.from_numpy(images), torch.from_numpy(ids), torch.from_numpy(lengths), list(records))


def train_val_split(data: CaptionData, seed: int, fraction: float) -> tuple[CaptionData, Optional[CaptionData]]:
    """Use records tagged ``split=val`` if any, else hold out a seeded fraction."""
    tagged = [i for i, r in enumerate(data.records) if r.split == "val"]
    if tagged:
        rest = [i for i, r in enumerate(data.records) if r.split != "val"]
        return data.subset(rest), data.subset(tagged)
    n_val = int(round(len(data) * fraction))
    if n_val == 0 or n_val >= len(data):
        return data, None
    order = np.random.default_rng(seed).permutation(len(data))
    return data.subset(sorted(order[n_val:])), data.subset(sorted(order[:n_val]))


# -- training ----------------------------------------------------------------

def _seed_everything(seed: int) -> None:
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True)


def _build_model(model_config: ModelConfig, vocab_size: int, seed: int) -> CaptionModel:
    _seed_everything(seed)
    return CaptionModel(model_config, vocab_size)


def _optimizer(model: CaptionModel, config: TrainConfig) -> torch.optim.Optimizer:
    model.encoder.set_trainable(config.finetune_blocks)
    groups = []
    enc = [p for p in model.encoder.parameters() if p.requires_grad]
    if enc:
        groups.append({"params": enc, "lr": config.encoder_lr})
    groups.append({"params": list(model.decoder.parameters()), "lr": config.decoder_lr})
    return torch.optim.Adam(groups)


def _batch_loss(model: CaptionModel, images, ids, lengths, alpha_reg: float) -> torch.Tensor:
    ids = ids[:, : int(lengths.max())]
    logits, alphas = model(images, ids)
    return caption_loss(logits, ids, alphas, alpha_reg)


def train_step(model, optimizer, images, ids, lengths, config: TrainConfig) -> float:
    loss = _batch_loss(model, images, ids, lengths, config.alpha_reg)
    if not torch.isfinite(loss):
        raise FloatingPointError(f"non-finite training loss {loss.item()}")
    optimizer.zero_grad()
    loss.backward()
    nn.utils.clip_grad_norm_([p for g in optimizer.param_groups for p in g["params"]], config.grad_clip)
    optimizer.step()
    return loss.item()


@torch.no_grad()
def evaluate_loss(model: CaptionModel, data: CaptionData, batch_size: int = 64) -> float:
    """Token-weighted mean cross-entropy in eval mode."""
    was_training = model.training
    model.eval()
    total, tokens = 0.0, 0
    for start in range(0, len(data), batch_size):
        sl = slice(start, start + batch_size)
        n_tok = int((data.ids[sl, 1:] != PAD).sum())
        total += _batch_loss(model, data.images[sl], data.ids[sl], data.lengths[sl], 0.0).item() * n_tok
        tokens += n_tok
    model.train(was_training)
    return total / max(tokens, 1)


def _fit(
    model: CaptionModel,
    train: CaptionData,
    val: Optional[CaptionData],
    config: TrainConfig,
    phase: str,
    vocab: Vocab,
    parent: Optional[str] = None,
) -> Checkpoint:
    if len(train) == 0:
        raise ValueError(f"phase {phase}: empty training corpus")
    optimizer = _optimizer(model, config)
    order_gen = torch.Generator().manual_seed(config.seed)
    flip_gen = torch.Generator().manual_seed(config.seed + 7919)
    history = []
    best_val, best_epoch, best_state = math.inf, 0, None
    stale = 0
    for epoch in range(1, config.epochs + 1):
        started = time.perf_counter()
        model.train()
        perm = torch.randperm(len(train), generator=order_gen)
        losses = []
        for b, start in enumerate(range(0, len(train), config.batch_size)):
            idx = perm[start : start + config.batch_size]
            images = train.images[idx]
            if config.hflip:
                flip = torch.rand(len(idx), generator=flip_gen) < 0.5
                images = torch.where(flip[:, None, None, None], images.flip(-1), images)
            try:
                losses.append(train_step(model, optimizer, images, train.ids[idx], train.lengths[idx], config))
            except FloatingPointError as exc:
                raise FloatingPointError(f"phase {phase} epoch {epoch} batch {b}: {exc}") from None
        train_loss = float(np.mean(losses))
        val_loss = evaluate_loss(model, val) if val is not None and len(val) else None
        seconds = time.perf_counter() - started
        history.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss, "seconds": round(seconds, 3)})
        log.info("phase %s epoch %d train %.4f val %s (%.1fs)", phase, epoch, train_loss, val_loss, seconds)

        score = val_loss if val_loss is not None else train_loss
        if score < best_val:
            best_val, best_epoch, stale = score, epoch, 0
            best_state = copy.deepcopy(model.state_dict())
        else:
            stale += 1
            if config.early_stop_patience is not None and stale >= config.early_stop_patience:
                log.info("phase %s: early stop at epoch %d", phase, epoch)
                break
    if val is None:
        best_epoch, best_state = history[-1]["epoch"], model.state_dict()
    model.load_state_dict(best_state)
    model.eval()
    chosen = history[best_epoch - 1]
    train_cfg = asdict(config)
    train_cfg["finetune_blocks"] = list(config.finetune_blocks)
    meta = {
        "phase": phase,
        "epoch": best_epoch,
        "vocab_digest": vocab.digest,
        "vocab_size": len(vocab),
        "model": model.config.to_dict(),
        "train_config": train_cfg,
        "history": history,
        "train_loss": chosen["train_loss"],
        "val_loss": chosen["val_loss"],
        "parent_digest": parent,
    }
    return Checkpoint(state_to_arrays(model), meta)


def train_phase_a(
    model_config: ModelConfig,
    vocab: Vocab,
    train: CaptionData,
    config: TrainConfig,
    val: Optional[CaptionData] = None,
) -> Checkpoint:
    """Train encoder + decoder on source-domain attribute captions."""
    _require_domain(train, "source")
    model = _build_model(model_config, len(vocab), config.seed + _INIT_OFFSET["A"])
    return _fit(model, train, val, config, "A", vocab)


def init_phase_b_model(
    phase_a: Checkpoint, model_config: ModelConfig, vocab: Vocab, config: TrainConfig
) -> CaptionModel:
    """Fresh model whose encoder (and, if warm, decoder) come from phase A."""
    if phase_a.meta.get("phase") != "A":
        raise ValueError(f"expected a phase A checkpoint, got phase {phase_a.meta.get('phase')!r}")
    model = _build_model(model_config, len(vocab), config.seed + _INIT_OFFSET["B"])
    load_params(model, phase_a.params, prefix="encoder.")
    if config.decoder_init == "warm":
        if phase_a.meta.get("vocab_digest") != vocab.digest:
            raise VocabMismatch("vocab digest mismatch: warm decoder init needs the phase A vocab")
        load_params(model, phase_a.params, prefix="decoder.")
    return model


def finetune_phase_b(
    phase_a: Checkpoint,
    model_config: ModelConfig,
    vocab: Vocab,
    train: CaptionData,
    config: TrainConfig,
    val: Optional[CaptionData] = None,
) -> Checkpoint:
    """Fine-tune on target style captions starting from the phase-A encoder."""
    _require_domain(train, "target")
    model = init_phase_b_model(phase_a, model_config, vocab, config)
    return _fit(model, train, val, config, "B", vocab, parent=phase_a.digest)


def train_baseline(
    model_config: ModelConfig,
    vocab: Vocab,
    train: CaptionData,
    config: TrainConfig,
    val: Optional[CaptionData] = None,
) -> Checkpoint:
    """Same architecture as phase B, trained on target data only."""
    _require_domain(train, "target")
    model = _build_model(model_config, len(vocab), config.seed + _INIT_OFFSET["baseline"])
    return _fit(model, train, val, config, "baseline", vocab)


def overfit_batch(
    model: CaptionModel, images: torch.Tensor, ids: torch.Tensor, lengths: torch.Tensor, steps: int, config: TrainConfig
) -> list[float]:
    """Repeatedly train on one batch; returns the per-step loss."""
    optimizer = _optimizer(model, config)
    model.train()
    return [train_step(model, optimizer, images, ids, lengths, config) for _ in range(steps)]


def _require_domain(data: CaptionData, domain: str) -> None:
    wrong = [i for i, r in enumerate(data.records) if r.domain != domain]
    if wrong:
        raise ValueError(f"record {wrong[0]} has domain {data.records[wrong[0]].domain!r}, expected {domain!r}")


def write_history(history: Sequence[dict], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["epoch", "train_loss", "val_loss", "seconds"])
        writer.writeheader()
        for row in history:
            writer.writerow({**row, "val_loss": "" if row["val_loss"] is None else row["val_loss"]})
