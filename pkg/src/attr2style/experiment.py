"""File-artifact pipelines behind each CLI command.

Every command reads and writes under one output root::

    <out>/corpus/       synthetic images + manifests
    <out>/checkpoints/  vocab.txt, phase_a.ckpt, phase_b.ckpt, baseline.ckpt
    <out>/reports/      history CSVs, eval JSON/text, captions
    <out>/figures/      confusion matrices, attention maps

Image paths inside a manifest are relative to the manifest's directory.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Optional

import numpy as np

from attr2style import trainer
from attr2style.config import PhaseSection, RunConfig
from attr2style.corpus import IMAGENET_MEAN, IMAGENET_STD, CaptionRecord, load_manifest, preprocess_image
from attr2style.encoder import INPUT_SIDE, EncoderConfig
from attr2style.inference import Captioner, attention_overlay
from attr2style.metrics import EvalReport, evaluate, render_table, validate_lexicon
from attr2style.model import ModelConfig
from attr2style.synthgen import SynthConfig, default_correlation, generate_corpus
from attr2style.vocab import Vocab, build_vocab, tokenize

log = logging.getLogger(__name__)


class Workspace:
    def __init__(self, cfg: RunConfig, out: str | Path):
        self.cfg = cfg
        self.out = Path(out)
        self.corpus = Path(cfg.data.corpus_dir) if cfg.data.corpus_dir else self.out / "corpus"
        self.checkpoints = self.out / "checkpoints"
        self.reports = self.out / "reports"
        self.figures = self.out / "figures"

    def manifest(self, part: str) -> Path:
        given = getattr(self.cfg.data, f"{part}_manifest")
        return Path(given) if given else self.corpus / f"{part}.jsonl"

    def records(self, part: str) -> tuple[list[CaptionRecord], Path]:
        path = self.manifest(part)
        if not path.is_file():
            raise FileNotFoundError(f"missing manifest: {path}")
        return load_manifest(path), path.parent

    def vocab_path(self, part: Optional[str] = None) -> Path:
        if part is None or self.cfg.data.shared_vocab:
            return self.checkpoints / "vocab.txt"
        return self.checkpoints / f"vocab_{part}.txt"

    def vocab(self, part: Optional[str] = None) -> Vocab:
        path = self.vocab_path(part)
        if not path.is_file():
            raise FileNotFoundError(f"missing vocab: {path}")
        return Vocab.load(path)

    def checkpoint_path(self, name: str) -> Path:
        if name.endswith(".ckpt") or "/" in name:
            return Path(name)
        return self.checkpoints / f"{name}.ckpt"

    def load_checkpoint(self, name: str) -> trainer.Checkpoint:
        path = self.checkpoint_path(name)
        if not path.is_file():
            raise FileNotFoundError(f"missing checkpoint: {path}")
        return trainer.load_checkpoint(path)

    @property
    def side(self) -> int:
        return INPUT_SIDE[self.cfg.model.encoder.mode]

    def normalization(self) -> tuple[list[float], list[float]]:
        data = self.cfg.data
        if data.normalization == "custom":
            return list(data.mean), list(data.std)
        if data.normalization == "corpus":
            stats = self.manifest("source").parent / "stats.json"
            if stats.is_file():
                loaded = json.loads(stats.read_text())
                return list(loaded["mean"]), list(loaded["std"])
            log.info("no %s; using ImageNet statistics", stats)
        return list(IMAGENET_MEAN), list(IMAGENET_STD)

    def model_config(self) -> ModelConfig:
        m = self.cfg.model
        return ModelConfig(
            encoder=EncoderConfig(mode=m.encoder.mode, pretrained_weights=m.encoder.pretrained_weights),
            embed_dim=m.embed_dim,
            hidden_dim=m.hidden_dim,
            attention_dim=m.attention_dim,
            gate=m.gate,
            dropout=m.dropout,
        )

    def train_config(self, phase: PhaseSection) -> trainer.TrainConfig:
        return trainer.TrainConfig(seed=self.cfg.seed, **phase.model_dump())

    def caption_data(self, part: str, vocab: Vocab) -> trainer.CaptionData:
        records, root = self.records(part)
        mean, std = self.normalization()
        return trainer.load_caption_data(records, root, vocab, self.side, mean, std, self.cfg.data.max_len)

    def write_config(self) -> None:
        self.out.mkdir(parents=True, exist_ok=True)
        (self.out / "resolved_config.json").write_text(self.cfg.model_dump_json(indent=2) + "\n")


# -- commands ----------------------------------------------------------------

def synth(ws: Workspace) -> tuple[Path, Path, Path]:
    s = ws.cfg.synth
    kwargs = {}
    if s.attribute_template:
        kwargs["attribute_template"] = s.attribute_template
    if s.style_templates:
        kwargs["style_templates"] = s.style_templates
    config = SynthConfig(
        n_source=s.n_source,
        n_target=s.n_target,
        n_test=s.n_test,
        seed=ws.cfg.seed if s.seed is None else s.seed,
        image_side=s.image_side or ws.side,
        correlation=s.correlation or default_correlation(),
        **kwargs,
    )
    return generate_corpus(config, ws.corpus)


def build_vocabs(ws: Workspace) -> list[Path]:
    """Joint vocab over source + target training captions, or one per domain."""
    ws.checkpoints.mkdir(parents=True, exist_ok=True)
    caps = {part: [tokenize(r.caption) for r in ws.records(part)[0]] for part in ("source", "target")}
    min_freq = ws.cfg.data.min_freq
    written = []
    if ws.cfg.data.shared_vocab:
        build_vocab(caps["source"] + caps["target"], min_freq).save(ws.vocab_path())
        written.append(ws.vocab_path())
    else:
        for part in ("source", "target"):
            build_vocab(caps[part], min_freq).save(ws.vocab_path(part))
            written.append(ws.vocab_path(part))
    return written


def _save_trained(ws: Workspace, ckpt: trainer.Checkpoint, name: str) -> Path:
    mean, std = ws.normalization()
    ckpt.meta["normalization"] = {"mean": mean, "std": std, "side": ws.side}
    ws.checkpoints.mkdir(parents=True, exist_ok=True)
    ws.reports.mkdir(parents=True, exist_ok=True)
    path = ws.checkpoints / f"{name}.ckpt"
    trainer.save_checkpoint(ckpt, path)
    trainer.write_history(ckpt.meta["history"], ws.reports / f"history_{name}.csv")
    return path


def _split(ws: Workspace, data: trainer.CaptionData, phase: PhaseSection):
    return trainer.train_val_split(data, ws.cfg.seed, phase.val_fraction)


def train_source(ws: Workspace) -> trainer.Checkpoint:
    vocab = ws.vocab("source")
    train, val = _split(ws, ws.caption_data("source", vocab), ws.cfg.train.phase_a)
    ckpt = trainer.train_phase_a(ws.model_config(), vocab, train, ws.train_config(ws.cfg.train.phase_a), val)
    _save_trained(ws, ckpt, "phase_a")
    return ckpt


def finetune_target(ws: Workspace) -> trainer.Checkpoint:
    vocab = ws.vocab("target")
    phase_a = ws.load_checkpoint("phase_a")
    train, val = _split(ws, ws.caption_data("target", vocab), ws.cfg.train.phase_b)
    ckpt = trainer.finetune_phase_b(
        phase_a, ws.model_config(), vocab, train, ws.train_config(ws.cfg.train.phase_b), val
    )
    _save_trained(ws, ckpt, "phase_b")
    return ckpt


def train_baseline(ws: Workspace) -> trainer.Checkpoint:
    vocab = ws.vocab("target")
    train, val = _split(ws, ws.caption_data("target", vocab), ws.cfg.train.baseline)
    ckpt = trainer.train_baseline(ws.model_config(), vocab, train, ws.train_config(ws.cfg.train.baseline), val)
    _save_trained(ws, ckpt, "baseline")
    return ckpt


def _captioner(ws: Workspace, name: str) -> tuple[Captioner, dict]:
    ckpt = ws.load_checkpoint(name)
    vocab = ws.vocab("source" if ckpt.phase == "A" else "target")
    if ckpt.meta.get("vocab_digest") != vocab.digest:
        raise trainer.VocabMismatch(f"vocab digest mismatch for checkpoint {name}")
    norm = ckpt.meta.get("normalization") or {"mean": IMAGENET_MEAN, "std": IMAGENET_STD, "side": ws.side}
    return Captioner(trainer.model_from_checkpoint(ckpt), vocab), norm


def _eval_inputs(ws: Workspace, norm: dict) -> tuple[list[CaptionRecord], Path, list[np.ndarray]]:
    if ws.cfg.eval.manifest:
        path = Path(ws.cfg.eval.manifest)
        if not path.is_file():
            raise FileNotFoundError(f"missing manifest: {path}")
        records, root = load_manifest(path), path.parent
    else:
        records, root = ws.records("test")
    pixels = [preprocess_image(root / r.image_path, norm["side"], norm["mean"], norm["std"]) for r in records]
    return records, root, pixels


def caption(ws: Workspace) -> Path:
    """Beam-decode every image in the eval manifest to JSON Lines."""
    from attr2style.metrics import extract_style

    captioner, norm = _captioner(ws, ws.cfg.eval.checkpoint)
    records, _, pixels = _eval_inputs(ws, norm)
    d = ws.cfg.decode
    ws.reports.mkdir(parents=True, exist_ok=True)
    path = ws.reports / "captions.jsonl"
    with open(path, "w", encoding="utf-8") as fh:
        for rec, px in zip(records, pixels):
            res = captioner.beam(px, d.beam_size, d.max_len, d.length_norm)
            text = " ".join(res.tokens)
            row = {"image": rec.image_path, "caption": text, "log_prob": res.log_prob,
                   "style": extract_style(text, ws.cfg.eval.lexicon)}
            fh.write(json.dumps(row) + "\n")
    return path


def evaluate_checkpoint(ws: Workspace, name: str) -> EvalReport:
    validate_lexicon(ws.cfg.eval.lexicon)
    captioner, norm = _captioner(ws, name)
    records, _, pixels = _eval_inputs(ws, norm)
    d = ws.cfg.decode
    return evaluate(captioner, records, pixels, ws.cfg.eval.lexicon, d.beam_size, d.max_len)


def _label(name: str) -> str:
    return Path(name).stem


def evaluate_cmd(ws: Workspace) -> EvalReport:
    name = ws.cfg.eval.checkpoint
    report = evaluate_checkpoint(ws, name)
    ws.reports.mkdir(parents=True, exist_ok=True)
    report.save(ws.reports / f"eval_{_label(name)}.json")
    (ws.reports / f"eval_{_label(name)}.txt").write_text(report.table(_label(name)))
    return report


def compare(ws: Workspace) -> dict:
    """Evaluate the transferred model and the baseline side by side."""
    reports = {"AL-model": evaluate_checkpoint(ws, "phase_b"), "baseline": evaluate_checkpoint(ws, "baseline")}
    ws.reports.mkdir(parents=True, exist_ok=True)
    ws.figures.mkdir(parents=True, exist_ok=True)
    summary = {
        "al_model": reports["AL-model"].to_json(),
        "baseline": reports["baseline"].to_json(),
        "accuracy_micro_difference": reports["AL-model"].accuracy_micro - reports["baseline"].accuracy_micro,
        "bleu_difference": reports["AL-model"].bleu - reports["baseline"].bleu,
    }
    (ws.reports / "compare.json").write_text(json.dumps(summary, indent=2) + "\n")
    (ws.reports / "compare.txt").write_text(render_table(reports))
    for name, rep in reports.items():
        plot_confusion(rep, ws.figures / f"confusion_{name.lower().replace('-', '_')}.png", name)
    return summary


def plot_confusion(report: EvalReport, path: Path, title: str) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    from attr2style.corpus import STYLES

    fig, ax = plt.subplots(figsize=(5, 4.5))
    ax.imshow(report.confusion, cmap="Blues")
    ax.set_xticks(range(len(STYLES)), STYLES, rotation=45, ha="right")
    ax.set_yticks(range(len(STYLES)), STYLES)
    ax.set_xlabel("predicted")
    ax.set_ylabel("ground truth")
    ax.set_title(f"{title}  (acc {report.accuracy_micro:.2f})")
    for (r, c), v in np.ndenumerate(report.confusion):
        ax.text(c, r, str(v), ha="center", va="center", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def attention_maps(ws: Workspace) -> list[Path]:
    from PIL import Image

    captioner, norm = _captioner(ws, ws.cfg.eval.checkpoint)
    records, root, pixels = _eval_inputs(ws, norm)
    d = ws.cfg.decode
    written = []
    for rec, px in list(zip(records, pixels))[: ws.cfg.eval.attention_maps]:
        res = captioner.beam(px, d.beam_size, d.max_len, d.length_norm)
        image = Image.open(root / rec.image_path).convert("RGB")
        if image.size != (norm["side"], norm["side"]):
            image = image.resize((norm["side"], norm["side"]))
        out = ws.figures / "attention" / Path(rec.image_path).stem
        written += attention_overlay(
            image, res.tokens, res.alphas, captioner.grid_size, captioner.grid_size, out
        )
    return written


COMMANDS = {
    "synth": synth,
    "build-vocab": build_vocabs,
    "train-source": train_source,
    "finetune-target": finetune_target,
    "train-baseline": train_baseline,
    "caption": caption,
    "evaluate": evaluate_cmd,
    "compare": compare,
    "attention-maps": attention_maps,
}


def run_pipeline(cfg: RunConfig, out: str | Path) -> dict:
    """synth -> build-vocab -> train-source -> finetune-target -> train-baseline -> compare."""
    ws = Workspace(cfg, out)
    ws.write_config()
    for name in ("synth", "build-vocab", "train-source", "finetune-target", "train-baseline"):
        log.info("running %s", name)
        COMMANDS[name](ws)
    return compare(ws)
