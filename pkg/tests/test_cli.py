import hashlib
import json
import subprocess
import sys

import pytest

from dualhead import __version__
from dualhead.cli import main

TINY_CFG = """
[model]
backbone_channels = 4
coarse_channels = 4
fine_channels = 2
scales = 1
stages = 1
[data]
frames = 16
target_frames = 16
per_class_train = 3
per_class_test = 2
[optim]
epochs = 2
batch_size = 4
[ablate]
seeds = 2
variants = single-coarse,dual
"""


@pytest.fixture
def cfg(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(TINY_CFG)
    return path


def run(*argv):
    return main([str(a) for a in argv])


def records(path):
    return [json.loads(line) for line in path.read_text().splitlines()]


def digests(folder):
    return {p.relative_to(folder).as_posix(): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(folder.rglob("*")) if p.is_file()}


def test_generate_is_reproducible(tmp_path, cfg):
    assert run("generate", "--config", cfg, "--out", tmp_path / "a") == 0
    assert run("generate", "--config", cfg, "--out", tmp_path / "b") == 0
    assert digests(tmp_path / "a") == digests(tmp_path / "b")
    rec = records(tmp_path / "a" / "generate.jsonl")
    assert rec[0]["per_class"] == [3, 3, 3, 3]
    assert len((tmp_path / "a" / "train.manifest").read_text().splitlines()) == rec[0]["sequences"] == 12


def test_seed_changes_data(tmp_path, cfg):
    run("generate", "--config", cfg, "--out", tmp_path / "a")
    run("--seed", "8", "generate", "--config", cfg, "--out", tmp_path / "b")
    assert digests(tmp_path / "a") != digests(tmp_path / "b")


def test_train_eval_resume(tmp_path, cfg, capsys):
    out = tmp_path / "run"
    run("generate", "--config", cfg, "--out", out)
    assert run("train", "--config", cfg, "--out", out) == 0
    first = (out / "metrics.jsonl").read_bytes()
    epochs = records(out / "metrics.jsonl")
    assert [r["epoch"] for r in epochs] == [0, 1]
    assert all("wall_time" not in r for r in epochs)
    assert len(records(out / "timing.jsonl")) == 2

    # rerun: byte-identical metrics
    assert run("train", "--config", cfg, "--out", out) == 0
    assert (out / "metrics.jsonl").read_bytes() == first

    capsys.readouterr()
    assert run("eval", "--config", cfg, "--out", out) == 0
    ev = records(out / "eval.jsonl")
    assert ev[0]["acc"] == epochs[-1]["test_acc"]
    assert ev[-1] == {"record": "ensemble", "streams": 1, "acc": ev[0]["acc"]}
    printed = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
    assert printed == ev

    # resume from epoch 0 reproduces epoch 1
    longer = tmp_path / "more.cfg"
    longer.write_text(TINY_CFG.replace("epochs = 2", "epochs = 3"))
    ck = tmp_path / "e1.ckpt"
    ck.write_bytes((out / "final.ckpt").read_bytes())
    assert run("train", "--config", longer, "--out", out, "--resume", ck) == 0
    resumed = records(out / "metrics.jsonl")
    assert [r["epoch"] for r in resumed] == [0, 1, 2]


def test_eval_multiple_streams(tmp_path, cfg):
    out = tmp_path / "run"
    run("generate", "--config", cfg, "--out", out)
    run("train", "--config", cfg, "--out", out)
    ck = out / "final.ckpt"
    assert run("eval", "--config", cfg, "--out", out, "--stream", ck, "--stream", f"{ck}:joint") == 0
    ev = records(out / "eval.jsonl")
    assert [r["record"] for r in ev] == ["stream", "stream", "ensemble"]
    assert ev[2]["acc"] == ev[0]["acc"]


def test_eval_wrong_architecture(tmp_path, cfg):
    out = tmp_path / "run"
    run("generate", "--config", cfg, "--out", out)
    run("train", "--config", cfg, "--out", out)
    other = tmp_path / "other.cfg"
    other.write_text(TINY_CFG.replace("fine_channels = 2", "fine_channels = 3"))
    assert run("eval", "--config", other, "--out", out) == 1


def test_gradcheck_verb(tmp_path, cfg):
    small = tmp_path / "gc.cfg"
    small.write_text("[gradcheck]\njoints = 2\nframes = 6\nchannels = 2\n")
    assert run("gradcheck", "--config", small, "--out", tmp_path) == 0
    rec = records(tmp_path / "gradcheck.jsonl")
    assert rec[-1]["record"] == "gradcheck_summary" and rec[-1]["failed"] == []
    assert run("gradcheck", "--config", small, "--out", tmp_path, "--corrupt", "cls_fine.bias") == 2
    assert records(tmp_path / "gradcheck.jsonl")[-1]["failed"] == ["cls_fine.bias"]
    assert run("gradcheck", "--config", small, "--out", tmp_path, "--corrupt", "nope") == 1


def test_ablate_verb(tmp_path, cfg, capsys):
    assert run("ablate", "--config", cfg, "--out", tmp_path) == 0
    table = (tmp_path / "ablation.txt").read_text().splitlines()
    assert len(table) == 3 and table[1].startswith("single-coarse")
    rows = [r for r in records(tmp_path / "ablate.jsonl") if r["record"] == "ablate"]
    assert [r["variant"] for r in rows] == ["single-coarse", "dual"]
    assert "single-coarse" in capsys.readouterr().err


def test_invalid_inputs(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("[model]\nmu = 2\n")
    assert run("generate", "--config", bad, "--out", tmp_path) == 1
    assert "model.mu" in capsys.readouterr().err
    assert run("train", "--out", tmp_path / "empty") == 1
    assert run() == 1
    with pytest.raises(SystemExit):
        run("--seed", "-3", "generate")


def test_print_defaults_and_version(capsys):
    assert run("--print-defaults") == 0
    assert "[optim]\n# real > 0\nlr = 0.1" in capsys.readouterr().out
    with pytest.raises(SystemExit):
        run("--version")
    assert __version__ in capsys.readouterr().out


def test_console_entry_point():
    out = subprocess.run([sys.executable, "-m", "dualhead.cli", "--print-defaults"], capture_output=True,
                         text=True, check=True).stdout
    assert out.startswith("[model]")
