import json
import subprocess
import sys

import numpy as np
import pytest

from preflab.cli import main
from preflab.core import TabularTripletDistribution


def run(args):
    return main([str(a) for a in args])


@pytest.fixture
def workspace(tmp_path):
    (tmp_path / "g.json").write_text(json.dumps({"m": 5, "d": 6}))
    assert run(["gen", "--config", tmp_path / "g.json", "--seed", 1, "--out", tmp_path / "items.json",
                "--model-out", tmp_path / "target.json"]) == 0
    for name, n, seed in (("train", 400, 1), ("val", 100, 2)):
        assert run(["sample", "--items", tmp_path / "items.json", "--model", tmp_path / "target.json",
                    "--n", n, "--seed", seed, "--out", tmp_path / f"{name}.csv"]) == 0
    return tmp_path


def test_gen_and_sample(workspace):
    items = json.loads((workspace / "items.json").read_text())
    assert items["m"] == 5 and items["d"] == 6
    assert (workspace / "train.csv").read_text().splitlines()[0] == "context_id,pos_id,neg_id"


def test_train(workspace):
    (workspace / "tc.json").write_text(json.dumps({"epochs": 2, "learning_rates": [0.01]}))
    assert run(["train", "--items", workspace / "items.json", "--train", workspace / "train.csv",
                "--val", workspace / "val.csv", "--config", workspace / "tc.json", "--out", workspace / "r.json",
                "--history", workspace / "h.csv"]) == 0
    assert json.loads((workspace / "r.json").read_text())["selected_lr"] == 0.01
    assert len((workspace / "h.csv").read_text().splitlines()) == 3


def test_diagnose_and_connectivity(tmp_path, capsys):
    t = np.full((3, 3), 0.1)
    np.fill_diagonal(t, 0)
    t[0, 1] = t[1, 2] = t[2, 0] = 0.9
    TabularTripletDistribution.single_context(t).save(tmp_path / "cyc.json")
    assert run(["diagnose", "--table", tmp_path / "cyc.json"]) == 0
    verdict = json.loads(capsys.readouterr().out)
    assert verdict["representable"] is False
    assert verdict["cycle_log_odds"] == pytest.approx(3 * np.log(9))
    TabularTripletDistribution.single_context(np.ones((4, 4)) - np.eye(4)).save(tmp_path / "k4.json")
    assert run(["connectivity", "--table", tmp_path / "k4.json", "--method", "tabular_spectral"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert set(out) == {"method", "value", "restarts", "per_restart_values"}
    assert out["value"] == pytest.approx(8 / 3)


def test_error_exit_code(tmp_path, capsys):
    t = np.zeros((2, 2))
    t[0, 1] = 1.0
    TabularTripletDistribution.single_context(t).save(tmp_path / "one.json")
    assert run(["diagnose", "--table", tmp_path / "one.json"]) == 2
    assert "InfiniteLogOddsError" in capsys.readouterr().err


def test_experiment_subprocess(tmp_path):
    cfg = {"m": 5, "d": 6, "hidden": 4, "embed": 3, "n_grid": [32], "seeds": [0],
           "train": {"epochs": 1, "learning_rates": [0.01], "validation_size": 32},
           "variational": {"restarts": 1, "steps": 10}}
    (tmp_path / "e.json").write_text(json.dumps(cfg))
    outs = []
    for i in range(2):
        path = tmp_path / f"o{i}.csv"
        subprocess.run([sys.executable, "-m", "preflab.cli", "experiment", "margin", "--config", tmp_path / "e.json",
                        "--seed", "18446744073709551615", "--out", path], check=True,
                       env={"PREFLAB_THREADS": "1", "PATH": "/usr/bin:/bin"})
        outs.append(path.read_bytes())
    assert outs[0] == outs[1]
    assert len(outs[0].decode().splitlines()) == 3
