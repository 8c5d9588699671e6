from __future__ import annotations

import json
import shutil
import subprocess

import pytest

from drofa.cli import main, oracle_checks

CONFIG = {
    "federation": {"kind": "synthetic", "n_clients": 4, "dim": 3, "samples_per_client": 40,
                   "holdout_per_client": 40, "seed": 1},
    "algo": {"algorithm": "drfa", "T": 40, "tau": 5, "m": 2, "eta": 0.05, "gamma": 0.01,
             "batch_primal": 8, "batch_probe": 8},
    "seeds": [0],
}


@pytest.fixture
def config_path(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(CONFIG), encoding="utf-8")
    return path


def test_run_writes_outputs(config_path, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", str(config_path), "--out", str(out), "--seed", "0,3"]) == 0
    assert "final worst_acc" in capsys.readouterr().out
    summary = json.loads((out / "summary.json").read_text())
    assert summary["seeds"] == [0, 3]
    assert {p.name for p in out.iterdir()} == {"metrics.csv", "summary.json", "lambda_trace.csv"}


def test_compare_and_sweep(config_path, tmp_path, capsys):
    other = dict(CONFIG, algo=dict(CONFIG["algo"], algorithm="fedavg"))
    other_path = tmp_path / "other.json"
    other_path.write_text(json.dumps(other), encoding="utf-8")
    assert main(["compare", str(config_path), str(other_path), "--out", str(tmp_path / "cmp"),
                 "--threshold", "0.4"]) == 0
    text = capsys.readouterr().out
    assert "drfa_tau5" in text and "fedavg_tau5" in text
    assert main(["sweep", str(config_path), "--param", "tau", "--values", "1,5",
                 "--out", str(tmp_path / "sw")]) == 0
    assert "tau=1" in capsys.readouterr().out


def test_errors_exit_with_code_2(config_path, tmp_path, capsys):
    assert main(["run", str(tmp_path / "missing.json")]) == 2
    bad = dict(CONFIG, algo=dict(CONFIG["algo"], lr=0.1))
    config_path.write_text(json.dumps(bad), encoding="utf-8")
    assert main(["run", str(config_path), "--out", str(tmp_path / "o")]) == 2
    assert "did you mean 'eta'" in capsys.readouterr().err


def test_oracle_check_passes(capsys):
    assert main(["oracle-check", "--n-vectors", "200"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 4 and all(line.startswith("PASS") for line in lines)
    assert all(ok for _, ok, _ in oracle_checks(50, seed=7))


@pytest.mark.skipif(shutil.which("drofa") is None, reason="console script not installed")
def test_console_script(tmp_path):
    proc = subprocess.run(["drofa", "oracle-check", "--n-vectors", "20"], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
