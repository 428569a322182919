import json

import numpy as np
import pytest

from conftest import TRUE
from hypodiff.cli import EXIT_INVALID, EXIT_OK, EXIT_STUDY_FAILURE, main
from hypodiff.simulate import Trajectory


@pytest.fixture
def ho_csv(tmp_path):
    path = tmp_path / "ho.csv"
    assert main(["simulate", "--model", "ho", "--params", "D=4,gamma=0.5,sigma=0.5", "--n", "400",
                 "--delta", "0.02", "--seed", "3", "--out", str(path)]) == EXIT_OK
    return path


def test_simulate_writes_csv_and_manifest(ho_csv):
    tr = Trajectory.from_csv(ho_csv)
    assert tr.states.shape == (401, 2) and tr.dt == pytest.approx(0.02)
    man = json.loads((ho_csv.parent / "ho.csv.manifest.json").read_text())
    assert man["seed"] == 3 and man["config"]["model"] == "ho"


def test_simulate_fine_euler_from_config(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"model": "sie", "params": TRUE["sie"], "n": 50, "delta": 0.02}))
    out = tmp_path / "sie.csv"
    assert main(["simulate", "--config", str(cfg), "--out", str(out), "--n", "30"]) == EXIT_OK
    assert Trajectory.from_csv(out).states.shape == (31, 3)


def test_estimate_complete(ho_csv, tmp_path, capsys):
    out = tmp_path / "est.json"
    assert main(["estimate-complete", "--model", "ho", "--data", str(ho_csv), "--out", str(out)]) == EXIT_OK
    res = json.loads(out.read_text())
    assert set(res["params"]) == {"D", "gamma", "sigma"}
    assert (tmp_path / "est.json.manifest.json").exists()
    assert main(["estimate-complete", "--model", "ho", "--data", str(ho_csv), "--estimator", "euler"]) == EXIT_OK


def test_filter_and_saem(ho_csv, tmp_path):
    out = tmp_path / "filt.csv"
    assert main(["filter", "--model", "ho", "--params", "D=4,gamma=0.5,sigma=0.5", "--data", str(ho_csv),
                 "--particles", "30", "--u0", "0", "--out", str(out)]) == EXIT_OK
    assert out.read_text().startswith("t,filtered_mean_U1")
    trace = tmp_path / "trace.csv"
    assert main(["saem", "--model", "ho", "--data", str(ho_csv), "--iters", "6", "--burn-in", "2",
                 "--particles", "20", "--u0", "0", "--trace", str(trace), "--out", str(tmp_path / "s.json")]) == EXIT_OK
    assert len(trace.read_text().splitlines()) == 7


def test_order_check(tmp_path, capsys):
    out = tmp_path / "order.csv"
    assert main(["order-check", "--out", str(out)]) == EXIT_OK
    text = capsys.readouterr().out
    slope = float(text.split("mean ")[-1].split(",")[0])
    assert abs(slope - 3) < 0.3
    assert (tmp_path / "order.csv.manifest.json").exists()


def test_replicate_success_and_failure(tmp_path):
    cfg = {"model": "ho", "true_params": TRUE["ho"], "n": 200, "replications": 2,
           "estimators": ["euler_contrast"]}
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg))
    assert main(["replicate", "--config", str(path), "--out", str(tmp_path / "ok")]) == EXIT_OK
    assert (tmp_path / "ok" / "summary.csv").exists()
    bad = dict(cfg, estimators=["new_contrast_complete"], options={"init": {"D": -1.0}})
    path.write_text(json.dumps(bad))
    assert main(["replicate", "--config", str(path), "--out", str(tmp_path / "bad")]) == EXIT_STUDY_FAILURE


@pytest.mark.parametrize("argv", [
    [],
    ["simulate", "--model", "ho"],
    ["simulate", "--model", "ho", "--params", "D=oops", "--n", "5", "--delta", "0.1", "--out", "x.csv"],
    ["simulate", "--model", "fhn", "--params", "epsilon=0.1,gamma=1.5,alpha=0.8,sigma=0.3", "--n", "5",
     "--delta", "0.1", "--protocol", "exact", "--out", "x.csv"],
    ["replicate"],
    ["replicate", "--config", "/nonexistent.json"],
    ["filter", "--model", "nope"],
])
def test_invalid_input_exit_code(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == EXIT_INVALID


def test_wrong_columns_exit_code(ho_csv):
    assert main(["estimate-complete", "--model", "sie", "--data", str(ho_csv)]) == EXIT_INVALID


def test_unknown_config_key(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"model": "ho", "true_params": TRUE["ho"], "bogus": 1}))
    assert main(["replicate", "--config", str(path)]) == EXIT_INVALID
