import csv
import json
from importlib import resources
from pathlib import Path

import pytest

from nsplab import runner
from nsplab.config import ConfigError, load_config, parse_text

SCENARIOS = Path(resources.files("nsplab") / "scenarios")

SMALL = """\
[scenario]
name = small
gates = invariant_set

[physics]
gamma = 1.25
eta = 1

[initial]
init = scaled_lane_emden(10000, 0.95)

[numerics]
N = 32
t_end = 0.2
output_dt = 0.05
splitting = predictor
"""


def test_shipped_scenarios_load():
    names = sorted(p.stem for p in SCENARIOS.glob("*.ini"))
    assert names == ["alpha_sweep", "gamma125_expansion", "gamma43_subcritical", "lambda_family"]
    for p in SCENARIOS.glob("*.ini"):
        sc = load_config(p)
        assert sc.name == p.stem


def test_init_call_shorthand():
    sc = parse_text(SMALL)
    assert sc.sim.initial.kind == "scaled_lane_emden"
    assert sc.sim.initial.mu == 10000 and sc.sim.initial.lam == 0.95
    assert sc.sim.N == 32 and sc.gates == ("invariant_set",)


def test_fraction_values():
    sc = load_config(SCENARIOS / "gamma43_subcritical.ini")
    assert sc.sim.gamma == 4 / 3


@pytest.mark.parametrize(
    "old, new, line",
    [
        ("N = 32", "N = 32\nbogus = 1", 14),
        ("[numerics]", "[numerix]", 12),
        ("eta = 1", "eta = 1\nalpha = 2", 8),
        ("gates = invariant_set", "gates = critical_mass", 3),
        ("N = 32", "N = abc", 13),
    ],
)
def test_rejections_carry_line_numbers(old, new, line):
    with pytest.raises(ConfigError) as exc:
        parse_text(SMALL.replace(old, new), "x.ini")
    assert exc.value.line == line
    assert str(exc.value).startswith(f"x.ini:{line}:")


def test_other_rejections():
    with pytest.raises(ConfigError):
        parse_text(SMALL.replace("splitting = predictor", "splitting = leapfrog"))
    with pytest.raises(ConfigError):
        parse_text(SMALL.replace("gates = invariant_set", "gates = kl_gate, nonsense"))
    with pytest.raises(ConfigError):
        parse_text("gamma = 1.3\n")
    with pytest.raises(ConfigError):
        load_config("/nonexistent/file.ini")


def test_override_and_round_trip():
    sc = parse_text(SMALL)
    sc2 = sc.with_override("lam", "0.9")
    assert sc2.sim.initial.lam == 0.9
    sc3 = parse_text(sc2.to_ini())
    assert sc3.sim == sc2.sim
    with pytest.raises(ConfigError):
        sc.with_override("no_such_key", "1")


def test_execute_writes_outputs(tmp_path):
    o = runner.execute(parse_text(SMALL), tmp_path / "run")
    for name in ("scenario.ini", "timeseries.csv", "meta.json", "checkpoint.json", "verdict.json"):
        assert (o.out_dir / name).exists()
    v = json.loads((o.out_dir / "verdict.json").read_text())
    assert v["simulation"] == "completed"
    assert v["gates"][0]["decision"] is True
    assert o.exit_code in (runner.EXIT_OK, runner.EXIT_DIAGNOSTIC)
    again = runner.verdict_from_dir(o.out_dir)
    assert again["checks"] == v["checks"]


def test_gate_failure_skips_simulation(tmp_path):
    # lambda > 1 compresses the star: Q < 0 leaves the invariant set
    sc = parse_text(SMALL.replace("0.95)", "1.2)"))
    o = runner.execute(sc, tmp_path / "gated")
    assert o.exit_code == runner.EXIT_GATE
    assert o.verdict["simulation"] == "skipped"
    assert not (o.out_dir / "timeseries.csv").exists()


def test_sweep_aggregate(tmp_path):
    rows = runner.sweep(parse_text(SMALL), runner.parse_vary(["lam=0.9,1.2"]), tmp_path / "sw", workers=1)
    assert [r["lam"] for r in rows] == ["0.9", "1.2"]
    with open(tmp_path / "sw" / "aggregate.csv") as fh:
        agg = list(csv.DictReader(fh))
    assert agg[0]["run"] == "000_lam=0.9" and agg[0]["simulation"] == "completed"
    assert agg[1]["simulation"] == "skipped" and int(agg[1]["exit_code"]) == runner.EXIT_GATE
    assert float(agg[0]["Q0"]) > 0 > float(agg[1]["Q0"])


def test_parse_vary_rejects_garbage():
    with pytest.raises(ValueError):
        runner.parse_vary(["lam"])
    with pytest.raises(ValueError):
        runner.parse_vary(["lam="])


def test_worker_count_env(monkeypatch):
    monkeypatch.setenv(runner.WORKERS_ENV, "3")
    assert runner.worker_count() == 3
    monkeypatch.setenv(runner.WORKERS_ENV, "x")
    assert runner.worker_count() == 1
