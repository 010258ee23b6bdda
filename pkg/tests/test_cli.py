import csv
import json

import numpy as np
import pytest

from vnngp import cli
from vnngp.errors import NumericalError


@pytest.fixture
def data(tmp_path):
    rng = np.random.default_rng(3)
    X = rng.uniform(0, 3, (50, 2))
    y = np.sin(X.sum(axis=1)) + 0.1 * rng.normal(size=50)
    p = tmp_path / "d.csv"
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["a", "b", "y"])
        for r, t in zip(X, y):
            w.writerow([repr(float(r[0])), repr(float(r[1])), repr(float(t))])
    return p


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_train_predict_eval(tmp_path, data, capsys):
    out = tmp_path / "run"
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"iterations": 20, "batch_data": 16, "batch_ip": 16}))
    assert run("train", "--data", data, "--target", "y", "--method", "vnngp", "--k", 4,
               "--config", cfg, "--seed", 1, "--out", out) == 0
    rows = list(csv.reader(open(out / "trace.csv")))
    assert rows[0] == ["iteration", "raw_loss", "smoothed_loss", "lr"] and len(rows) == 21
    state = json.loads((out / "model.json").read_text())
    assert state["K"] == 4 and state["schema_version"] == 1
    assert run("predict", "--model", out / "model.json", "--data", data, "--out", out) == 0
    lines = (out / "predictions.csv").read_text().splitlines()
    assert lines[0].startswith("#") and len(lines) == 52
    capsys.readouterr()
    assert run("eval", "--model", out / "model.json", "--data", data) == 0
    metrics = json.loads(capsys.readouterr().out)
    assert metrics["n"] == 50 and metrics["rmse"] > 0


@pytest.mark.parametrize("method", ["exact", "svgp", "swsgp"])
def test_train_other_methods(tmp_path, data, method):
    assert run("train", "--data", data, "--target", "y", "--method", method, "--k", 4,
               "--seed", 0, "--out", tmp_path) == 0
    assert run("predict", "--model", tmp_path / "model.json", "--data", data, "--out", tmp_path) == 0


def test_bench_report(tmp_path, data, capsys):
    assert run("bench", "--data", data, "--target", "y", "--method", "vnngp", "--k", 4,
               "--seed", 2, "--out", tmp_path) == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["seed"] == 2 and set(report["metrics"]) == {"test", "val"}


def test_experiment_needs_seed(tmp_path):
    for cmd in ("fig-precision", "fig-kl", "sim-overfit", "noise-sweep", "bench"):
        with pytest.raises(SystemExit) as info:
            run(cmd, "--out", tmp_path)
        assert info.value.code == 2


def test_experiment_runs(tmp_path, capsys):
    assert run("fig-precision", "--seed", 0, "--out", tmp_path) == 0
    assert (tmp_path / "fig_precision.csv").read_text().startswith("#")
    assert run("fig-kl", "--seed", 0, "--out", tmp_path) == 0
    assert (tmp_path / "fig_kl.csv").read_text().startswith("#")


def test_argument_errors(tmp_path, data):
    with pytest.raises(SystemExit) as info:
        run("train", "--method", "nope")
    assert info.value.code == 2
    with pytest.raises(SystemExit) as info:
        run("train", "--k", -1, "--data", data)
    assert info.value.code == 2
    assert run("train", "--data", data, "--target", "y", "--seed", 0) == 2  # no --out
    bad = tmp_path / "bad.json"
    bad.write_text("{oops")
    assert run("fig-kl", "--seed", 0, "--out", tmp_path, "--config", bad) == 2
    assert run("bench", "--seed", 0, "--out", tmp_path, "--data", data, "--target", "y",
               "--config", bad) == 2


def test_ingestion_errors(tmp_path, data):
    assert run("train", "--data", tmp_path / "none.csv", "--target", "y", "--seed", 0,
               "--out", tmp_path) == 3
    assert run("train", "--data", data, "--target", "zzz", "--seed", 0, "--out", tmp_path) == 3
    junk = tmp_path / "m.json"
    junk.write_text(json.dumps({"format": "x"}))
    assert run("predict", "--model", junk, "--data", data, "--out", tmp_path) == 3


def test_numerical_error_exit(tmp_path, data, monkeypatch):
    def boom(*a, **k):
        raise NumericalError("loss is nan")
    monkeypatch.setattr(cli, "train", boom)
    assert run("train", "--data", data, "--target", "y", "--seed", 0, "--out", tmp_path) == 4
