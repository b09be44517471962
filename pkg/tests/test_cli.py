import json
import subprocess
import sys

import numpy as np
import pytest

from manipred.cli import main
from manipred.datasets import (FeatureSequence, load_manifest, read_features, stream_header,
                               write_features)
from manipred.model import SequenceModel

SMALL = ["--classes", "3", "--dim", "16", "--subjects", "2", "--per-class", "4",
         "--t-min", "20", "--t-max", "30"]
FAST = ["--epochs", "2", "--hidden", "6", "--seed", "0"]


def synth(tmp_path, name="data", extra=()):
    out = tmp_path / name
    assert main(["synth", "--out", str(out), *SMALL, *extra]) == 0
    return out


def test_synth_writes_manifest(tmp_path):
    out = synth(tmp_path, extra=["--forces"])
    m = load_manifest(out / "manifest.txt")
    assert m.objects == ["synth"] and m.subjects == ["subject0", "subject1"]
    assert len(m.records) == 3 * 4
    assert all(r.forces is not None and r.touch is not None for r in m.records)


def test_train_predict_stream(tmp_path, capsys):
    out = synth(tmp_path)
    model = tmp_path / "m.mprc"
    assert main(["train", "--manifest", str(out / "manifest.txt"), "--model", str(model),
                 *FAST]) == 0
    log = [json.loads(l) for l in (tmp_path / "m.mprc.log.jsonl").read_text().splitlines()]
    assert [r["epoch"] for r in log] == [1, 2]
    one = tmp_path / "one.fseq"
    seq = read_features(next((out / "features").glob("*.fseq")))
    write_features(one, FeatureSequence(seq.frames[:1]))
    capsys.readouterr()
    assert main(["predict", "--model", str(model), str(one)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 1
    rec = json.loads(lines[0])
    assert rec["frame"] == 0 and len(rec["probs"]) == 3 and 0 <= rec["uncertainty"] <= 1


def test_predict_from_stdin_pipe(tmp_path):
    m = SequenceModel.init(4, 5, n_labels=2, seed=0, labels=("a", "b"))
    path = tmp_path / "m.mprc"
    m.save(path)
    frames = np.random.default_rng(0).normal(size=(3, 4)).astype("<f4")
    proc = subprocess.run([sys.executable, "-m", "manipred", "predict", "--model", str(path)],
                          input=stream_header(4) + frames.tobytes(), capture_output=True)
    assert proc.returncode == 0, proc.stderr
    assert [json.loads(l)["frame"] for l in proc.stdout.decode().splitlines()] == [0, 1, 2]


def test_pipeline_is_byte_identical(tmp_path):
    outs = []
    for run in ("a", "b"):
        data = synth(tmp_path, f"data_{run}")
        model = tmp_path / f"{run}.mprc"
        tables = tmp_path / f"tables_{run}"
        manifest = str(data / "manifest.txt")
        assert main(["train", "--manifest", manifest, "--model", str(model), *FAST]) == 0
        assert main(["eval", "--manifest", manifest, "--out", str(tables), *FAST,
                     "--window", "10", "--pca-dim", "4", "--hmm-states", "2",
                     "--lpre", "10", "--lpost", "20"]) == 0
        outs.append((model, tables))
    (ma, ta), (mb, tb) = outs
    assert ma.read_bytes() == mb.read_bytes()
    names = sorted(p.name for p in ta.iterdir())
    assert names == sorted(p.name for p in tb.iterdir())
    assert "table3_accuracy.csv" in names and "curves_synth.csv" in names
    for n in names:
        assert (ta / n).read_bytes() == (tb / n).read_bytes(), n


def test_force_task_and_forces_command(tmp_path):
    data = synth(tmp_path, extra=["--forces"])
    manifest = str(data / "manifest.txt")
    model = tmp_path / "f.mprc"
    assert main(["train", "--manifest", manifest, "--model", str(model), "--task", "force",
                 *FAST]) == 0
    assert SequenceModel.load(model).task == "force"
    tables = tmp_path / "t"
    assert main(["eval", "--manifest", manifest, "--out", str(tables), "--task", "force",
                 *FAST]) == 0
    header = (tables / "table4_finger_error.csv").read_text().splitlines()[0]
    assert header == "object,thumb,pointer,middle,ring"
    rec = next((data / "forces").glob("*.frec"))
    csv_out = tmp_path / "f.csv"
    assert main(["forces", str(rec), "--out", str(csv_out), "--frames", "7",
                 "--model", str(model)]) == 0
    rows = csv_out.read_text().splitlines()
    assert len(rows) == 8
    vals = np.array([[float(v) for v in r.split(",")[1:]] for r in rows[1:]])
    assert np.all((vals >= 0) & (vals <= 1))


def test_config_file(tmp_path):
    data = synth(tmp_path)
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"epochs": 1, "hidden": 3, "batch_size": 4}))
    model = tmp_path / "m.mprc"
    assert main(["train", "--manifest", str(data / "manifest.txt"), "--model", str(model),
                 "--config", str(cfg)]) == 0
    assert SequenceModel.load(model).hidden_dim == 3
    cfg.write_text(json.dumps({"epochs": 1, "warp": 9}))
    assert main(["train", "--manifest", str(data / "manifest.txt"), "--model", str(model),
                 "--config", str(cfg)]) == 1


@pytest.mark.parametrize("argv", [
    [],
    ["frobnicate"],
    ["train", "--manifest", "x.txt"],
    ["eval", "--manifest", "x.txt", "--out", "o", "--offsets", "a,b"],
    ["synth", "--out", "o", "--classes", "1"],
])
def test_usage_errors_exit_1(argv, capsys):
    assert main(argv) == 1
    assert "error" in capsys.readouterr().err


def test_data_errors_exit_2(tmp_path, capsys):
    assert main(["train", "--manifest", str(tmp_path / "none.txt"), "--model",
                 str(tmp_path / "m.mprc")]) == 2
    data = synth(tmp_path, extra=["--subjects", "1"])
    capsys.readouterr()
    assert main(["eval", "--manifest", str(data / "manifest.txt"), "--out",
                 str(tmp_path / "t"), *FAST]) == 2
    assert "at least 2 subjects" in capsys.readouterr().err
    assert not (tmp_path / "t").exists()
    bad = tmp_path / "bad.mprc"
    bad.write_bytes(b"garbage")
    assert main(["predict", "--model", str(bad), str(tmp_path / "x.fseq")]) == 2
