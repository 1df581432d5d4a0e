import csv
import json

import numpy as np
import pytest

from alphabox.cli import main
from alphabox.harness.data import write_idx_images, write_idx_labels
from alphabox.numerics import RngStream


@pytest.fixture
def regression_config(tmp_path):
    rng = RngStream(0)
    X = rng.normal((60, 3))
    y = X @ np.array([1.0, -0.5, 0.2]) + 0.1 * rng.normal(60)
    data = tmp_path / "toy.csv"
    np.savetxt(data, np.column_stack([X, y]), delimiter=",")
    cfg = {"task": "regression", "dataset": {"format": "csv", "path": str(data)},
           "architecture": {"hidden_widths": [8]},
           "objective": {"alpha": 0.5, "K": 3},
           "optimiser": {"epochs": 3, "batch_size": 16},
           "split": {"n_splits": 2, "test_fraction": 0.2, "seed": 1}, "K_test": 5}
    path = tmp_path / "reg.json"
    path.write_text(json.dumps(cfg))
    return path


@pytest.fixture
def classification_config(tmp_path):
    rng = RngStream(1)
    paths = {}
    for split, n in (("train", 40), ("test", 12)):
        labels = np.arange(n) % 3
        imgs = (rng.uniform((n, 4, 4)) * 80 + labels[:, None, None] * 60).astype(np.uint8)
        ip, lp = tmp_path / f"{split}-img", tmp_path / f"{split}-lab"
        write_idx_images(ip, imgs, 4, 4)
        write_idx_labels(lp, labels)
        paths[f"{split}_images"], paths[f"{split}_labels"] = str(ip), str(lp)
    cfg = {"task": "classification", "dataset": {"format": "idx", **paths},
           "architecture": {"hidden_widths": [6, 6], "dropout_rate": 0.5},
           "objective": {"alpha": 0.5, "K": 2},
           "optimiser": {"epochs": 2, "batch_size": 8}, "K_test": 4}
    path = tmp_path / "cls.json"
    path.write_text(json.dumps(cfg))
    return path


def _csv(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert len({len(r) for r in rows}) == 1
    return rows


def test_train_twice_is_bit_identical(regression_config, tmp_path):
    outs = [tmp_path / "a", tmp_path / "b"]
    for out in outs:
        assert main(["train", "--config", str(regression_config), "--seed", "7", "--out", str(out)]) == 0
    for name in ("metrics.csv", "metrics.json", "checkpoint.bin"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    assert _csv(outs[0] / "metrics.csv")[0] == ["epoch", "train_loss"]
    assert (outs[0] / "timing.csv").exists()


def test_evaluate_after_train(regression_config, tmp_path):
    out = tmp_path / "run"
    assert main(["train", "--config", str(regression_config), "--out", str(out)]) == 0
    trained = json.loads((out / "metrics.json").read_text())["metrics"]
    assert main(["evaluate", "--config", str(regression_config), "--out", str(out)]) == 0
    evaluated = json.loads((out / "metrics.json").read_text())["metrics"]
    assert evaluated["test_rmse"] == trained["test_rmse"]
    assert evaluated["test_nll"] == trained["test_nll"]


def test_regression_benchmark(regression_config, tmp_path):
    assert main(["benchmark", "--config", str(regression_config), "--out", str(tmp_path / "b")]) == 0
    summary = json.loads((tmp_path / "b" / "metrics.json").read_text())["summary"]
    assert set(summary) == {"test_nll", "test_nll_se", "test_rmse", "test_rmse_se"}
    assert len(_csv(tmp_path / "b" / "metrics.csv")) == 3


def test_classification_train_attack_benchmark(classification_config, tmp_path):
    out = tmp_path / "c"
    cfg = str(classification_config)
    assert main(["train", "--config", cfg, "--out", str(out)]) == 0
    header = _csv(out / "metrics.csv")[0]
    assert header == ["epoch", "train_loss", "test_nll", "test_accuracy", "mean_entropy"]
    assert main(["attack", "--config", cfg, "--out", str(out), "--n-points", "6"]) == 0
    fgs = _csv(out / "plotdata" / "fgs.csv")
    assert fgs[0] == ["sweep_value", "accuracy", "mean_entropy", "n_points"]
    assert len(fgs) == 7
    assert main(["benchmark", "--config", cfg, "--out", str(tmp_path / "k"), "--k-values", "1,2"]) == 0
    rows = _csv(tmp_path / "k" / "plotdata" / "k_sweep.csv")
    assert rows[0] == ["K", "epoch", "train_loss", "test_accuracy", "test_ll"] and len(rows) == 5
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "d"), "--baseline"]) == 0


def test_check_commands(tmp_path):
    assert main(["divergence-check", "--out", str(tmp_path / "d")]) == 0
    rows = _csv(tmp_path / "d" / "metrics.csv")
    assert rows[0][0] == "check" and all(r[-1] == "True" for r in rows[1:])
    assert main(["gradcheck", "--out", str(tmp_path / "g"), "--n-configs", "5"]) == 0


def test_usage_and_validation_errors(tmp_path, regression_config, capsys):
    assert main(["train", "--config", str(regression_config), "--bogus"]) == 1
    assert "usage" in capsys.readouterr().err
    assert main(["frobnicate"]) == 1
    assert main(["train"]) == 1
    assert main(["train", "--config", str(tmp_path / "missing.json")]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"task": "regression", "objective": {"alhpa": 1}}))
    assert main(["train", "--config", str(bad)]) == 1
    assert main(["gradcheck", "--seed", "-3"]) == 1
    assert main(["evaluate", "--config", str(regression_config), "--out", str(tmp_path / "none")]) == 1


def test_runtime_failure_exit_code(tmp_path):
    data = tmp_path / "d.csv"
    data.write_text("1,2\n3,4\n5,6\n7,8\n9,10\n11,12\n13,14\n15,16\n17,18\n19,20\n")
    cfg = {"task": "regression", "dataset": {"format": "csv", "path": str(data)},
           "optimiser": {"kind": "sgd_momentum", "learning_rate": 1e300, "epochs": 3}, "K_test": 2}
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg))
    with pytest.warns(RuntimeWarning):
        assert main(["train", "--config", str(path), "--out", str(tmp_path / "o")]) == 2
