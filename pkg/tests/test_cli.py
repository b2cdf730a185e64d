"""Command-line interface: exit codes, config validation and the full chain."""

import json
import subprocess
import sys

import numpy as np
import pytest

from conftest import MINI_LAYOUT
from wildspread.cli import load_schema, pair_counts, run, validate_config, ValidationError
from wildspread.rollout import read_pgm
from wildspread.stacking import load_archive
from wildspread.synthfire import SynthParams

TINY = {"width": 40, "height": 40, "days": 3, "block": 8, "fire_id": "tiny"}


def write_json(path, doc):
    path.write_text(json.dumps(doc))
    return path


@pytest.fixture(scope="module")
def chain(tmp_path_factory):
    """synth -> sample -> train on a tiny fire; returns the working directory."""
    d = tmp_path_factory.mktemp("chain")
    assert run(["--seed", "3", "synth", str(write_json(d / "synth.json", TINY)), "--out", str(d / "a.npz")]) == 0
    assert run(["--seed", "3", "sample", str(d / "a.npz"), "--per-pair", "40", "--out", str(d / "s.zip")]) == 0
    cfg = {"stores": ["s.zip"], "epochs": 2, "batch_size": 16, "layout": MINI_LAYOUT, "metrics_every": 1}
    assert run(["--seed", "3", "--threads", "1", "train", str(write_json(d / "train.json", cfg)),
                "--out", str(d / "run")]) == 0
    return d


def test_pair_counts_spread_the_total():
    assert pair_counts(20000, 9) == [2223] * 2 + [2222] * 7
    assert sum(pair_counts(7, 3)) == 7


def test_synth_writes_archive_and_manifest(chain):
    arc = load_archive(chain / "a.npz")
    assert len(arc.stacks) == 3 and arc.spec.shape == (40, 40)
    man = json.loads((chain / "a.npz.run.json").read_text())
    assert man["subcommand"] == "synth" and man["seed"] == 3
    assert man["config"]["seed"] == 3 and man["version"]
    assert str(chain / "a.npz") in man["outputs"]
    assert set(man) >= {"subcommand", "config_path", "seed", "inputs", "outputs", "wall_time", "version"}


def test_seed_flag_overrides_config(tmp_path):
    cfg = write_json(tmp_path / "s.json", {**TINY, "seed": 1})
    run(["synth", str(cfg), "--out", str(tmp_path / "a.npz")])
    run(["--seed", "2", "synth", str(cfg), "--out", str(tmp_path / "b.npz")])
    a, b = load_archive(tmp_path / "a.npz"), load_archive(tmp_path / "b.npz")
    assert not np.array_equal(a.stacks[0].data, b.stacks[0].data)
    assert json.loads((tmp_path / "b.npz.run.json").read_text())["seed"] == 2


def test_synth_is_idempotent(tmp_path):
    cfg = write_json(tmp_path / "s.json", TINY)
    run(["synth", str(cfg), "--out", str(tmp_path / "a.npz")])
    first = (tmp_path / "a.npz").read_bytes()
    run(["synth", str(cfg), "--out", str(tmp_path / "a.npz")])
    assert (tmp_path / "a.npz").read_bytes() == first


def test_train_outputs(chain):
    out = chain / "run"
    for name in ("final.ckpt", "best.ckpt", "history.csv", "run.json"):
        assert (out / name).exists(), name
    lines = (out / "history.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_loss,train_acc,val_loss,val_acc" and len(lines) == 3
    man = json.loads((out / "run.json").read_text())
    assert man["seed"] == 3 and man["threads"] == 1 and man["config"]["epochs"] == 2


def test_eval_prints_json_and_normalized_table(chain, capsys):
    capsys.readouterr()
    rc = run(["eval", str(chain / "run" / "final.ckpt"), str(chain / "s.zip"), "--split", "all",
              "--persistence", "--out", str(chain / "eval.json")])
    assert rc == 0
    text = capsys.readouterr().out
    doc = json.loads(text[: text.rindex("}") + 1])
    assert doc["confusion"]["total"] == 80
    assert sum(doc["normalized"].values()) == pytest.approx(1.0)
    assert "persistence" in doc and 0 <= doc["persistence"]["metrics"]["accuracy"] <= 1
    assert "pred 0" in text and "true 1" in text
    assert json.loads((chain / "eval.json").read_text()) == doc


def test_predict_and_rollout(chain):
    rc = run(["predict", str(chain / "run" / "final.ckpt"), str(chain / "a.npz"), "--out", str(chain / "m.pgm"),
              "--timestamp", "2020-08-02T00:00:00Z"])
    assert rc == 0
    assert read_pgm(chain / "m.pgm").shape == (40, 40)
    side = json.loads((chain / "m.pgm.json").read_text())
    assert side["source_timestamp"] == "2020-08-02T00:00:00Z"
    rc = run(["rollout", str(chain / "run" / "final.ckpt"), str(chain / "a.npz"), "--steps", "2",
              "--out", str(chain / "roll"), "--format", "asc"])
    assert rc == 0
    assert sorted(p.name for p in (chain / "roll").iterdir()) == [
        "run.json", "step_001.asc", "step_001.asc.json", "step_002.asc", "step_002.asc.json"]


def test_stack_from_bundle_matches_synth(tmp_path):
    cfg = write_json(tmp_path / "s.json", TINY)
    assert run(["synth", str(cfg), "--out", str(tmp_path / "a.npz"), "--bundle", str(tmp_path / "raw")]) == 0
    assert run(["stack", str(tmp_path / "raw" / "manifest.json"), "--out", str(tmp_path / "b.npz")]) == 0
    a, b = load_archive(tmp_path / "a.npz"), load_archive(tmp_path / "b.npz")
    for x, y in zip(a.stacks, b.stacks):
        assert np.array_equal(x.fire_mask, y.fire_mask)


def test_missing_field_exits_1_with_path(tmp_path, capsys):
    cfg = write_json(tmp_path / "t.json", {"epochs": 3})
    assert run(["train", str(cfg), "--out", str(tmp_path / "o")]) == 1
    assert "$.stores" in capsys.readouterr().err


def test_bad_field_type_exits_1_with_path(tmp_path, capsys):
    cfg = write_json(tmp_path / "s.json", {"p0": "high"})
    assert run(["synth", str(cfg), "--out", str(tmp_path / "a.npz")]) == 1
    assert "$.p0" in capsys.readouterr().err
    cfg = write_json(tmp_path / "t.json", {"stores": ["x.zip"], "layout": [["conv", "3", 4]]})
    assert run(["train", str(cfg), "--out", str(tmp_path / "o")]) == 1
    assert "$.layout[0][1]" in capsys.readouterr().err


def test_unknown_field_and_bad_flags_exit_1(tmp_path):
    cfg = write_json(tmp_path / "s.json", {"colour": "red"})
    assert run(["synth", str(cfg), "--out", str(tmp_path / "a.npz")]) == 1
    with pytest.raises(SystemExit) as e:
        run(["synth"])
    assert e.value.code == 1
    assert run(["sample", "x.npz", "--out", "s.zip", "--splits", "0.5", "0.5", "0.5"]) == 1
    assert run(["--threads", "1", "rollout", "c", "a", "--steps", "0", "--out", "o"]) == 1


def test_runtime_failures_exit_2(tmp_path, capsys):
    assert run(["sample", str(tmp_path / "missing.npz"), "--out", str(tmp_path / "s.zip")]) == 2
    assert "error" in capsys.readouterr().err
    cfg = write_json(tmp_path / "t.json", {"stores": ["nope.zip"]})
    assert run(["train", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_schemas_accept_defaults():
    validate_config(SynthParams().to_dict(), "synth")
    validate_config({"stores": ["a.zip"], "layout": MINI_LAYOUT}, "train")
    with pytest.raises(ValidationError):
        validate_config({"stores": []}, "train")
    assert load_schema("fire_manifest")["required"][0] == "fire_id"


def test_console_entry_point():
    out = subprocess.run([sys.executable, "-m", "wildspread.cli", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and "wildspread" in out.stdout
