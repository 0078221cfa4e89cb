import json
import subprocess
import sys

import pytest

from dbo_lab.cli import main


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "quad.cfg"
    p.write_text('problem = "quadratic"\nrounds = 12\ntruth_every = 4\n')
    return p


def test_run(cfg_file, tmp_path):
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg_file), "--out", str(out), "--rounds", "7", "--seed", "3"]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["rows"] == 8 and summary["seed"] == 3


def test_run_config_error_is_usage(tmp_path, capsys):
    p = tmp_path / "bad.cfg"
    p.write_text("problem = quadratic\nalpha = -0.1\n")
    assert main(["run", "--config", str(p), "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "alpha" in err and "line 2" in err


def test_bad_seed_arg(cfg_file):
    with pytest.raises(SystemExit) as exc:
        main(["run", "--config", str(cfg_file), "--seed", "-4"])
    assert exc.value.code == 2


def test_compare_needs_two(cfg_file, tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["compare", "--configs", str(cfg_file), "--out", str(tmp_path)])
    assert exc.value.code == 2


def test_compare(cfg_file, tmp_path):
    other = tmp_path / "soba.cfg"
    other.write_text('problem = "quadratic"\nrounds = 12\nalgorithm = soba\ntruth_every = 4\n')
    with pytest.warns(UserWarning):
        code = main(["compare", "--configs", f"{cfg_file},{other}", "--out", str(tmp_path / "cmp"),
                     "--accuracy-thresholds", "0.5"])
    assert code == 0
    report = json.loads((tmp_path / "cmp" / "compare.json").read_text())
    assert set(report["runs"]) == {"quad", "soba"}


def test_gen_data(tmp_path):
    spec = tmp_path / "d.spec"
    spec.write_text("n_agents = 2\ndim = 3\nsamples = 5\nseed = 1\n")
    assert main(["gen-data", "--spec", str(spec), "--out", str(tmp_path / "data")]) == 0
    rows = (tmp_path / "data" / "agent2_train.txt").read_text().strip().splitlines()
    assert len(rows) >= 5


def test_module_entry_point(cfg_file, tmp_path):
    proc = subprocess.run([sys.executable, "-m", "dbo_lab", "run", "--config", str(cfg_file),
                           "--out", str(tmp_path / "m")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "m" / "trace.csv").exists()
