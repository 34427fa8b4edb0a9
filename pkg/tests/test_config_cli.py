import json

import pytest

from attr2style.cli import main
from attr2style.config import ConfigError, RunConfig, parse_config

TINY = [
    "synth.n_source=24",
    "synth.n_target=24",
    "synth.n_test=12",
    "train.epochs=1",
    "eval.attention_maps=2",
]


def test_empty_file_gives_defaults(tmp_path):
    path = tmp_path / "empty.yaml"
    path.write_text("")
    assert parse_config(path) == RunConfig()


def test_defaults_without_file():
    cfg = parse_config()
    assert cfg.seed == 42
    assert cfg.train.phase_a.epochs == 30
    assert cfg.train.phase_b.finetune_blocks == [2, 3, 4]
    assert cfg.decode.beam_size == 3


def test_override_beats_file(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("train:\n  epochs: 5\n  phase_b:\n    epochs: 7\n")
    from_file = parse_config(path)
    assert (from_file.train.phase_a.epochs, from_file.train.phase_b.epochs) == (5, 7)
    cfg = parse_config(path, ["train.epochs=2"])
    assert [cfg.train.phase_a.epochs, cfg.train.phase_b.epochs, cfg.train.baseline.epochs] == [2, 2, 2]


def test_dotted_overrides():
    cfg = parse_config(None, ["model.encoder.mode=toy", "synth.n_source=100"])
    assert cfg.model.encoder.mode == "toy"
    assert cfg.synth.n_source == 100


def test_partial_phase_keeps_phase_defaults():
    cfg = parse_config(None, ["train.phase_b.epochs=3"])
    assert cfg.train.phase_b.epochs == 3
    assert cfg.train.phase_b.finetune_blocks == [2, 3, 4]


def test_type_mismatch_names_key():
    with pytest.raises(ConfigError, match=r"synth\.n_source.*integer"):
        parse_config(None, ["synth.n_source=many"])


def test_unknown_key_named():
    with pytest.raises(ConfigError, match=r"unknown config key train\.phase_b\.speed"):
        parse_config(None, ["train.phase_b.speed=3"])


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        parse_config(tmp_path / "nope.yaml")


def test_cli_unknown_key_exit_1(tmp_path, capsys):
    assert main(["synth", "--out", str(tmp_path), "bogus.key=1"]) == 1
    assert "bogus" in capsys.readouterr().err


def test_cli_bad_command_exit_1(capsys):
    assert main(["nonsense"]) == 1


def test_cli_missing_artifact_exit_2(tmp_path, capsys):
    assert main(["train-source", "--out", str(tmp_path)]) == 2
    assert "missing" in capsys.readouterr().err


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    for command in ("synth", "build-vocab", "train-source", "finetune-target", "train-baseline"):
        assert main([command, "--out", str(out), *TINY]) == 0, command
    return out


def test_synth_writes_three_manifests(pipeline):
    for name in ("source", "target", "test"):
        assert (pipeline / "corpus" / f"{name}.jsonl").exists()


def test_checkpoints_written(pipeline):
    names = {p.name for p in (pipeline / "checkpoints").iterdir()}
    assert {"phase_a.ckpt", "phase_b.ckpt", "baseline.ckpt"} <= names


def test_compare_schema(pipeline, capsys):
    assert main(["compare", "--out", str(pipeline), *TINY]) == 0
    printed = json.loads(capsys.readouterr().out)
    report = json.loads((pipeline / "reports" / "compare.json").read_text())
    for arm in ("al_model", "baseline"):
        assert {"accuracy_micro", "accuracy_paper_macro", "bleu", "confusion", "per_style", "n_test"} <= set(report[arm])
    diff = report["al_model"]["accuracy_micro"] - report["baseline"]["accuracy_micro"]
    assert report["accuracy_micro_difference"] == pytest.approx(diff)
    assert printed["accuracy_micro_difference"] == pytest.approx(diff)
    assert (pipeline / "figures" / "confusion_al_model.png").exists()
    assert (pipeline / "figures" / "confusion_baseline.png").exists()


def test_caption_jsonl(pipeline):
    assert main(["caption", "--out", str(pipeline), *TINY]) == 0
    rows = [json.loads(line) for line in (pipeline / "reports" / "captions.jsonl").read_text().splitlines()]
    assert len(rows) == 12
    assert {"image", "caption", "log_prob"} <= set(rows[0])


def test_attention_maps(pipeline):
    assert main(["attention-maps", "--out", str(pipeline), *TINY]) == 0
    dirs = [p for p in (pipeline / "figures" / "attention").iterdir() if p.is_dir()]
    assert len(dirs) == 2
    for d in dirs:
        assert (d / "composite.png").exists()


def test_resolved_config_round_trips(pipeline):
    path = pipeline / "resolved_config.json"
    assert path.exists()
    assert parse_config(path) == parse_config(None, TINY)
