import json
import subprocess
import sys

import pytest

from dpps.harness.cli import main


@pytest.fixture
def cfg_file(tmp_path):
    path = tmp_path / "exp.toml"
    path.write_text(
        f'output_dir = "{tmp_path / "out"}"\n'
        "[optimizer]\nrounds = 15\neval_batch_size = 50\n"
        "[task]\nn_examples = 600\nn_test = 100\n"
    )
    return path


def test_validate_config_prints_full_config(cfg_file, capsys):
    assert main(["validate-config", "--config", str(cfg_file)]) == 0
    out = capsys.readouterr().out
    assert "[privacy]" in out and "lambda = 0.55" in out and "rounds = 15" in out


def test_validation_error_exit_code(cfg_file, capsys):
    assert main(["validate-config", "--config", str(cfg_file), "--set", "topology.kind=ring"]) == 1
    assert "topology.kind" in capsys.readouterr().err
    assert main(["run", "--config", str(cfg_file.parent / "nope.toml")]) == 1


def test_run_and_test_mode(cfg_file, tmp_path, capsys):
    assert main(["run", "--config", str(cfg_file), "--test-mode"]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["total_rounds"] == 15
    assert (tmp_path / "out" / "metrics.csv").exists()
    code = main(["run", "--config", str(cfg_file), "--set", "privacy.c_prime=0.01", "--test-mode"])
    assert code == 2
    assert "c_prime=0.01" in capsys.readouterr().err


def test_sweep_verb(cfg_file, tmp_path, capsys):
    assert main(["sweep", "--config", str(cfg_file), "--axis", "shared_layers", "--values", "1,3"]) == 0
    assert (tmp_path / "out" / "sweep.csv").read_text().count("\n") == 3
    assert "shared_layers=3" in capsys.readouterr().out


def test_calibrate_verb(cfg_file, tmp_path):
    assert main(["calibrate", "--config", str(cfg_file), "--headroom", "0.1"]) == 0
    cal = json.loads((tmp_path / "out" / "calibration.json").read_text())
    assert cal["headroom"] == 0.1 and cal["c_prime"] > 0


def test_check_invariants_verb(cfg_file, capsys):
    assert main(["check-invariants", "--config", str(cfg_file), "--rounds", "10"]) == 0
    assert capsys.readouterr().out.count("[PASS]") == 4
    assert main(["check-invariants", "--config", str(cfg_file), "--set", "privacy.c_prime=0.01"]) == 2


def test_module_entry_point(cfg_file):
    proc = subprocess.run(
        [sys.executable, "-m", "dpps", "validate-config", "--config", str(cfg_file)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0
    assert "[topology]" in proc.stdout
