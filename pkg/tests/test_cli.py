import csv
import json

import pytest

from demandbandit.cli import main

SMALL = {"rounds": 30, "n_units": 5, "log": {"params": {"n_impressions": 400}},
         "agent": {"batch_size": 8}}


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(SMALL))
    return path


def test_gen_log_and_table2(tmp_path, capsys):
    log = tmp_path / "log.csv"
    assert main(["gen-log", "--n", "2000", "--seed", "1", "--out", str(log),
                 "--ctr-beta", "40"]) == 0
    meta = json.loads((tmp_path / "log.csv.meta.json").read_text())
    assert meta["generation_params"]["ctr_beta"] == 40.0
    out = tmp_path / "t2.csv"
    assert main(["table2", "--log", str(log), "--budget-frac", "0.1",
                 "--out", str(out)]) == 0
    rows = list(csv.reader(out.open()))
    assert rows[0] == ["Demand Type", "PV", "Click Number", "GMV"]
    for i, row in enumerate(rows[1:]):
        assert float(row[1 + i]) == 1.0
    assert "Optimize GMV" in capsys.readouterr().out


def test_run_writes_metrics(tmp_path, config_file, capsys):
    assert main(["run", "--config", str(config_file), "--seed", "2",
                 "--out", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "metrics_learned_2.csv").exists()
    assert "AER=" in capsys.readouterr().out


def test_run_is_byte_deterministic(tmp_path, config_file):
    for d in ("a", "b"):
        assert main(["run", "--config", str(config_file), "--out", str(tmp_path / d)]) == 0
    assert ((tmp_path / "a" / "metrics_learned_0.csv").read_bytes()
            == (tmp_path / "b" / "metrics_learned_0.csv").read_bytes())


def test_sweep_subcommand(tmp_path, capsys):
    path = tmp_path / "sweep.json"
    path.write_text(json.dumps({"base": {**SMALL, "seeds": [0]},
                                "arms": [{"arm": "random", "agent_mode": "random-demand"},
                                         {"arm": "d40"}]}))
    assert main(["sweep", "--config", str(path), "--out", str(tmp_path / "s")]) == 0
    assert (tmp_path / "s" / "summary.csv").exists()
    assert "d40" in capsys.readouterr().out


@pytest.mark.parametrize("argv", [
    ["run"],
    ["frobnicate"],
    ["table2", "--log", "missing.csv", "--budget-frac", "0.1"],
    ["table2", "--log", "x.csv", "--budget-frac", "1.5"],
    ["gen-log", "--n", "0", "--seed", "0", "--out", "x.csv"],
])
def test_config_errors_exit_1(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == 1


def test_unknown_config_key_exit_1(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"rounds": 5, "colour": "red"}))
    assert main(["run", "--config", str(path)]) == 1


def test_unwritable_output_exit_2(tmp_path):
    target = tmp_path / "no" / "such" / "dir" / "log.csv"
    assert main(["gen-log", "--n", "5", "--seed", "0", "--out", str(target)]) == 2


def test_help_exit_0():
    assert main(["--help"]) == 0
