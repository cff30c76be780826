import json
import subprocess
import sys

import pytest

from homog2d.cli import HARD_ERROR, OK, PARTIAL, main

BASE = """
[coefficient]
kind = checkerboard
[cell]
m = 16
[study]
epsilons = 1/8
h0 = 1/32
cross_seed = false
"""


@pytest.fixture
def config(tmp_path):
    def make(extra=""):
        p = tmp_path / "study.ini"
        p.write_text(BASE + extra)
        return p
    return make


def test_cell_command(config, tmp_path, capsys):
    assert main(["cell", str(config()), "--out", str(tmp_path / "o")]) == OK
    data = json.loads((tmp_path / "o" / "cell.json").read_text())
    assert data["m"] == 16 and data["certificate"] > 0
    assert not data["from_cache"]
    assert "ahat" in capsys.readouterr().out
    # second run reads the cache
    assert main(["cell", str(config()), "--out", str(tmp_path / "o")]) == OK
    assert json.loads((tmp_path / "o" / "cell.json").read_text())["from_cache"]


def test_solve_command(config, tmp_path):
    assert main(["solve", str(config()), "--out", str(tmp_path / "o"), "--variant", "smoothed"]) == OK
    data = json.loads((tmp_path / "o" / "solve.json").read_text())
    assert data["converged"]


def test_study_command(config, tmp_path):
    assert main(["study", str(config()), "--out", str(tmp_path / "o"), "--no-cache"]) == OK
    out = tmp_path / "o"
    assert (out / "sweep.csv").read_text().count("\n") == 2
    assert not (out / "cache").exists()
    rep = json.loads((out / "report.json").read_text())
    assert rep["slopes"]["sup_err"] == "insufficient data"


def test_partial_failure_exit_code(config, tmp_path):
    cfg = config("[newton]\nmax_iter = 1\ntol = 1e-15\n")
    assert main(["solve", str(cfg), "--out", str(tmp_path / "o")]) == PARTIAL
    assert main(["study", str(cfg), "--out", str(tmp_path / "o")]) == PARTIAL


def test_probe_command(config, tmp_path):
    cfg = config("[probe]\neps = 1/8\ntrials = 2\n")
    assert main(["probe", str(cfg), "--out", str(tmp_path / "o"), "--seed", "3"]) == OK
    data = json.loads((tmp_path / "o" / "probe.json").read_text())
    assert len(data["trials"]) == 2 and data["all_agree"]


def test_hard_errors(config, tmp_path, capsys):
    assert main(["cell", str(config("[newton]\nresolution = 8\n"))]) == HARD_ERROR
    assert "unknown" in capsys.readouterr().err
    assert main(["cell", str(tmp_path / "missing.ini")]) == HARD_ERROR
    assert "cannot read" in capsys.readouterr().err
    with pytest.raises(SystemExit) as exc:
        main(["bogus", str(config())])
    assert exc.value.code == 2  # argparse usage error


def test_module_entry_point(config, tmp_path):
    r = subprocess.run([sys.executable, "-m", "homog2d.cli", "cell", str(config()), "--out", str(tmp_path / "o")],
                       capture_output=True, text=True, timeout=300)
    assert r.returncode == 0, r.stderr
