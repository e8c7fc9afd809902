import json
import subprocess
import sys

import pytest

from nsplab.cli import main
from nsplab.polytrope import PolytropeProfile

SMALL = """\
[scenario]
name = tiny
gates = invariant_set

[physics]
gamma = 1.25
eta = 1

[initial]
kind = scaled_lane_emden
mu = 10000
lam = 0.95

[numerics]
N = 24
t_end = 0.1
output_dt = 0.05
splitting = predictor
"""


@pytest.fixture
def ini(tmp_path):
    p = tmp_path / "tiny.ini"
    p.write_text(SMALL)
    return p


def test_steady_writes_table(tmp_path, capsys):
    out = tmp_path / "star.txt"
    assert main(["steady", "--gamma", "1.3", "--mu", "2", "--out", str(out)]) == 0
    summary = json.loads(capsys.readouterr().out)
    prof = PolytropeProfile.load(out)
    assert summary["M"] == prof.M and summary["mu"] == 2.0
    assert abs(summary["Q"]) < 1e-6 * prof.M**2 / prof.R


def test_gates_verb(ini, capsys):
    assert main(["gates", "--config", str(ini)]) == 0
    d = json.loads(capsys.readouterr().out)
    assert [g["gate"] for g in d] == ["invariant_set"]
    main(["gates", "--config", str(ini), "--all"])
    d = json.loads(capsys.readouterr().out)
    assert [g["gate"] for g in d] == ["invariant_set", "kl_gate"]


def test_run_and_verdict_verbs(ini, tmp_path, capsys):
    out = tmp_path / "run"
    code = main(["run", "--config", str(ini), "--out", str(out)])
    summary = json.loads(capsys.readouterr().out)
    assert code in (0, 1) and summary["out"] == str(out)
    code2 = main(["verdict", str(out), "--diagnostics", "energy_residual", "q_persistence", "--out", str(tmp_path / "v.json")])
    v = json.loads((tmp_path / "v.json").read_text())
    assert set(v["checks"]) == {"energy_residual", "q_persistence"}
    assert code2 == (0 if v["passed"] else 1)


def test_run_uses_output_env(ini, tmp_path, monkeypatch):
    monkeypatch.setenv("NSPLAB_OUT", str(tmp_path / "env"))
    main(["run", "--config", str(ini)])
    assert (tmp_path / "env" / "tiny" / "timeseries.csv").exists()


def test_sweep_verb_parallel(ini, tmp_path, capsys):
    out = tmp_path / "sw"
    code = main(["sweep", "--config", str(ini), "--vary", "lam=0.9,0.95", "--vary", "N=24,32", "--out", str(out), "--workers", "2"])
    rows = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
    assert len(rows) == 4 and code in (0, 1)
    assert (out / "aggregate.csv").read_text().splitlines()[0].startswith("run,lam,N,Q0")


def test_config_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[physics]\ngamma = 1.3\nnope = 1\n")
    assert main(["run", "--config", str(bad)]) == 64
    assert "bad.ini:3:" in capsys.readouterr().err


def test_gate_failure_exit_code(tmp_path):
    p = tmp_path / "g.ini"
    p.write_text(SMALL.replace("lam = 0.95", "lam = 1.2"))
    assert main(["run", "--config", str(p), "--out", str(tmp_path / "g")]) == 2


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "nsplab", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "steady" in r.stdout
