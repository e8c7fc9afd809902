"""Acceptance criteria 1-14 at their stated tolerances.

Each test records one PASS/FAIL line; the lines are printed in the pytest
terminal summary (see conftest.py).  Run alone with
``pytest tests/test_acceptance.py -v`` or ``python3 tests/test_acceptance.py``.
"""

import math
from importlib import resources
from pathlib import Path

import numpy as np
import pytest

from nsplab import functionals as fn
from nsplab.config import load_config
from nsplab.diagnostics import RunRecord, fit_exponent
from nsplab.functionals import RadialField
from nsplab.polytrope import GAMMA_MASS_CRITICAL, solve_profile
from nsplab.runner import execute, initial_field

SCENARIOS = Path(resources.files("nsplab") / "scenarios")
RESULTS: dict[int, list] = {}


def record(criterion: int, passed: bool, detail: str) -> None:
    RESULTS.setdefault(criterion, []).append((bool(passed), detail))
    print(f"criterion {criterion:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
    assert passed, detail


def summary_lines() -> list[str]:
    out = []
    for c in sorted(RESULTS):
        ok = all(p for p, _ in RESULTS[c])
        detail = "; ".join(d for _, d in RESULTS[c])
        out.append(f"criterion {c:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
    return out


# -- runs shared between criteria ---------------------------------------------


class Runs:
    def __init__(self, root: Path):
        self.root = root
        self._cache = {}

    def get(self, name: str, **overrides):
        key = (name, tuple(sorted(overrides.items())))
        if key not in self._cache:
            sc = load_config(SCENARIOS / f"{name}.ini")
            for k, v in overrides.items():
                sc = sc.with_override(k, str(v))
            label = name + "".join(f"_{k}={v}" for k, v in sorted(overrides.items()))
            o = execute(sc, self.root / label)
            rec = RunRecord.from_csv(o.out_dir / "timeseries.csv", dict(o.verdict, gamma=sc.sim.gamma,
                                     alpha=sc.sim.visc.alpha, eta=sc.sim.visc.eta))
            self._cache[key] = (o, rec)
        return self._cache[key]


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    return Runs(tmp_path_factory.mktemp("acceptance"))


# -- 1-6: steady states and functionals -----------------------------------------


def test_criterion_01_scaling_laws():
    worst = 0.0
    for g in (1.25, 1.3, 1.35):
        base = solve_profile(g, 1.0)
        for mu in (0.5, 2.0, 4.0):
            p = solve_profile(g, mu)
            for got, want in (
                (p.M / base.M, mu ** ((3 * g - 4) / 2)),
                (p.R / base.R, mu ** ((g - 2) / 2)),
                (p.E_total / base.E_total, mu ** ((5 * g - 6) / 2)),
            ):
                worst = max(worst, abs(got / want - 1))
    record(1, worst <= 1e-3, f"max relative deviation {worst:.2e} (tol 1e-3)")


def test_criterion_02_mass_criticality():
    masses = [solve_profile(GAMMA_MASS_CRITICAL, mu).M for mu in (0.5, 1.0, 4.0)]
    spread = (max(masses) - min(masses)) / min(masses)
    record(2, spread <= 1e-3, f"M_ch = {masses[1]:.9f}, relative spread {spread:.2e} (tol 1e-3)")


def test_criterion_03_pohozaev_identity():
    worst = 0.0
    for g in (1.21, 1.25, 1.3, 4 / 3, 1.4, 1.5, 1.6, 1.7, 1.8, 1.9, 1.95):
        for mu in (0.5, 1.0, 10.0):
            e = fn.energy(RadialField.from_profile(solve_profile(g, mu)))
            worst = max(worst, abs(e.Q) / e.internal)
    record(3, worst <= 1e-3, f"max |Q|/internal {worst:.2e} over gamma in (6/5, 2) (tol 1e-3)")


def test_criterion_04_best_constant():
    p = solve_profile(GAMMA_MASS_CRITICAL, 1.0)
    lane = fn.hls_ratio(RadialField.from_profile(p))
    want = 6.0 * p.M ** (-2.0 / 3.0)
    dev = abs(lane / want - 1)
    rng = np.random.default_rng(2024)
    trials = [fn.hls_ratio(fn.random_trial_density(rng, GAMMA_MASS_CRITICAL)) for _ in range(200)]
    excess = max(trials) / lane - 1
    ok = dev <= 1e-3 and excess <= 1e-6
    record(4, ok, f"ratio/6M_ch^(-2/3) - 1 = {dev:.2e}; 200 trials, max excess {excess:.2e}")


def test_criterion_05_gravitational_identity():
    fields = [RadialField.from_profile(solve_profile(g, 1.0)) for g in (1.25, 1.3, 4 / 3, 1.5)]
    r = np.linspace(0.0, 2.0, 2001)
    fields.append(RadialField(r, np.full_like(r, 3.0), 1.3))
    rng = np.random.default_rng(7)
    fields += [fn.random_trial_density(rng, 1.3) for _ in range(50)]
    worst = max(abs(d / i - 1) for d, i in (fn.gravitational_energy(f) for f in fields))
    record(5, worst <= 1e-6, f"max relative mismatch {worst:.2e} over {len(fields)} densities (tol 1e-6)")


def test_criterion_06_lambda_family():
    base = load_config(SCENARIOS / "lambda_family.ini")
    ref = solve_profile(1.3, base.sim.initial.mu)
    s_ref = fn.s_mu(RadialField.from_profile(ref), ref)
    qs, ok, notes = [], True, []
    for lam in (0.9, 0.95, 0.99):
        sc = base.with_override("lam", str(lam))
        f = initial_field(sc)
        q = fn.q_functional(f)
        qs.append(q)
        s_ok = fn.s_mu(f, ref) < s_ref
        inv = fn.invariant_set_check(f)
        ok &= q > 0 and s_ok and bool(inv)
        notes.append(f"lam={lam}: Q={q:.3g} inv={'y' if inv else 'n'}")
    decreasing = all(b < a for a, b in zip(qs, qs[1:]))
    kl = fn.kl_gate(initial_field(base.with_override("lam", "0.99")), seed=base.seed)
    ok &= decreasing and not kl
    notes.append(f"chain at lam=0.99 {'fails' if not kl else 'holds'}")
    record(6, ok, ", ".join(notes))


# -- 7-14: dynamics -------------------------------------------------------------


def test_criterion_07_energy_identity(runs):
    _, r400 = runs.get("gamma125_expansion")
    _, r800 = runs.get("gamma125_expansion", N=800)
    e400 = abs(r400.column("energy_residual")[-1])
    e800 = abs(r800.column("energy_residual")[-1])
    ok = e400 <= 1e-2 and e400 / e800 >= 1.8
    record(7, ok, f"terminal residual N=400 {e400:.3e}, N=800 {e800:.3e}, ratio {e400 / e800:.2f} (need <=1e-2, >=1.8)")


def test_criterion_08_subcritical_exponent(runs):
    _, rec = runs.get("gamma125_expansion")
    fit = fit_exponent(rec)
    record(8, 0.28 <= fit.slope <= 0.38, f"slope {fit.slope:.4f} on t in [{fit.window[0]:.3g}, {fit.window[1]:.3g}] (band [0.28, 0.38])")


def test_criterion_09_critical_gamma_exponent(runs):
    o, rec = runs.get("gamma43_subcritical")
    fit = fit_exponent(rec)
    ratio = o.verdict["gates"][0]["constants"]["M"] / o.verdict["gates"][0]["constants"]["M_ch"]
    record(9, 0.22 <= fit.slope <= 0.36, f"M/M_ch = {ratio:.3f}, slope {fit.slope:.4f} (band [0.22, 0.36])")


@pytest.mark.parametrize("alpha", [0.3, 0.8])
def test_criterion_10_density_dependent_viscosity(runs, alpha):
    _, rec = runs.get("alpha_sweep", alpha=alpha)
    fit = fit_exponent(rec)
    if alpha < 2 / 3:
        p = 1 / (3 * (1 - alpha))
        lo, hi = p - 0.08, p + 0.10
    else:
        lo, hi = 0.9, math.inf
    record(10, lo <= fit.slope <= hi, f"alpha={alpha}: slope {fit.slope:.4f} (band [{lo:.3f}, {hi:.3f}])")


def test_criterion_11_q_persistence(runs):
    _, rec = runs.get("gamma125_expansion")
    q = rec.column("Q")
    k = int(np.argmin(q))
    record(11, q[k] > 0, f"min Q = {q[k]:.4g} at t = {rec.column('t')[k]:.3g}")


def test_criterion_12_virial_consistency(runs):
    o, _ = runs.get("gamma125_expansion", N=800)
    vc = o.verdict["virial_checks"]["virial_fd"]
    record(12, vc["d2H_vs_Hpp"] <= 0.05, f"N=800 late-window RMS |d2H/dt2 - formula| / |formula| = {vc['d2H_vs_Hpp']:.2e} (tol 5e-2)")


def test_criterion_13_holder_chain(runs):
    recs = [runs.get("gamma125_expansion")[1], runs.get("gamma125_expansion", N=800)[1],
            runs.get("gamma43_subcritical")[1], runs.get("alpha_sweep", alpha=0.3)[1], runs.get("alpha_sweep", alpha=0.8)[1]]
    worst = min(float(np.min(r.column("holder_margin"))) for r in recs)
    n = sum(len(r) for r in recs)
    record(13, worst >= -1e-12, f"min normalized margin {worst:.2e} over {n} sampled states")


def test_criterion_14_determinism(runs, tmp_path):
    o, _ = runs.get("gamma125_expansion")
    again = execute(load_config(SCENARIOS / "gamma125_expansion.ini"), tmp_path / "repeat")
    a = (o.out_dir / "timeseries.csv").read_bytes()
    b = (again.out_dir / "timeseries.csv").read_bytes()
    record(14, a == b, f"repeated gamma125_expansion CSVs identical ({len(a)} bytes)")


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-v"]))
