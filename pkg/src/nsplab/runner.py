"""Scenario execution: gates, simulation, diagnostics, files on disk, sweeps."""

from __future__ import annotations

import csv
import itertools
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import diagnostics, functionals
from .config import Scenario
from .functionals import RadialField
from .polytrope import GAMMA_ENERGY_CRITICAL, GAMMA_MASS_CRITICAL, solve_profile
from .simulator import SimulationError, run

log = logging.getLogger(__name__)

OUT_ENV = "NSPLAB_OUT"
WORKERS_ENV = "NSPLAB_WORKERS"

EXIT_OK = 0
EXIT_DIAGNOSTIC = 1
EXIT_GATE = 2
EXIT_ABORT = 3


def output_root(default="runs") -> Path:
    return Path(os.environ.get(OUT_ENV, default))


def worker_count(default: int = 1) -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, default)))
    except ValueError:
        return default


def initial_field(sc: Scenario) -> RadialField:
    """The continuous initial data the gates are evaluated on."""
    cfg = sc.sim
    init_ = cfg.initial
    if init_.kind == "table":
        r = np.asarray(init_.table_r, dtype=float)
        rho = np.asarray(init_.table_rho, dtype=float) * init_.mass_scale
    else:
        prof = solve_profile(cfg.gamma, init_.mu)
        lam = init_.lam if init_.kind == "scaled_lane_emden" else 1.0
        f = functionals.mass_preserving_scaling(prof, lam)
        r, rho = f.r_grid, f.rho * init_.mass_scale
    if init_.velocity == "linear":
        u = init_.velocity_c * r
    elif init_.velocity == "table":
        u = np.interp(r, np.asarray(init_.table_r), np.asarray(init_.table_u))
    else:
        u = np.zeros_like(r)
    return RadialField(r, rho, cfg.gamma, u, float(r[-1]))


def with_applicable_gates(sc: Scenario) -> Scenario:
    g = sc.sim.gamma
    if abs(g - GAMMA_MASS_CRITICAL) < 1e-12:
        gates = ("critical_mass",)
    elif GAMMA_ENERGY_CRITICAL < g < GAMMA_MASS_CRITICAL:
        gates = ("invariant_set", "kl_gate")
    else:
        gates = ()
    return replace(sc, gates=gates)


def evaluate_gates(sc: Scenario, f: RadialField | None = None) -> list:
    f = initial_field(sc) if f is None else f
    out = []
    for gate in sc.gates:
        if gate in ("invariant_set", "critical_mass"):
            d = functionals.invariant_set_check(f)
        elif gate == "kl_gate":
            d = functionals.kl_gate(f, seed=sc.seed)
        else:
            raise ValueError(f"unknown gate {gate!r}")
        out.append(d)
    return out


@dataclass
class Outcome:
    name: str
    out_dir: Path
    verdict: dict
    exit_code: int


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(diagnostics._clean(obj), indent=2, sort_keys=True) + "\n")


def execute(sc: Scenario, out_dir) -> Outcome:
    """Gates, then the run, then the diagnostics; everything lands in ``out_dir``.

    Files: scenario.ini, timeseries.csv, meta.json, checkpoint.json, verdict.json.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "scenario.ini").write_text(sc.to_ini())
    verdict: dict = {"scenario": sc.name, "gates": [], "simulation": None, "events": []}

    try:
        f0 = initial_field(sc)
        verdict["initial_energy"] = functionals.energy(f0).to_dict()
        decisions = evaluate_gates(sc, f0)
    except (ValueError, SimulationError) as exc:
        verdict["simulation"] = "skipped"
        verdict["error"] = f"gate evaluation failed: {exc}"
        verdict["passed"] = False
        _write_json(out / "verdict.json", verdict)
        return Outcome(sc.name, out, verdict, EXIT_GATE)
    verdict["gates"] = [d.to_dict() for d in decisions]
    if not all(decisions):
        failed = [d.name for d in decisions if not d]
        verdict["simulation"] = "skipped"
        verdict["error"] = "gate failed: " + ", ".join(failed)
        verdict["passed"] = False
        _write_json(out / "verdict.json", verdict)
        log.info("%s: gate failure, no simulation", sc.name)
        return Outcome(sc.name, out, verdict, EXIT_GATE)

    try:
        rec = run(sc.sim)
    except (ValueError, SimulationError) as exc:
        verdict["simulation"] = "failed"
        verdict["error"] = str(exc)
        verdict["passed"] = False
        _write_json(out / "verdict.json", verdict)
        return Outcome(sc.name, out, verdict, EXIT_ABORT)

    final = rec.meta.pop("final_state")
    rec.to_csv(out / "timeseries.csv")
    _write_json(out / "meta.json", rec.meta)
    (out / "checkpoint.json").write_text(json.dumps(final.to_dict()) + "\n")
    aborted = any(tag == "abort" for _, tag, _ in rec.events)
    verdict["events"] = [{"t": t, "tag": tag, "message": msg} for t, tag, msg in rec.events]
    verdict["simulation"] = "aborted" if aborted else "completed"
    verdict["steps"] = rec.meta.get("steps")
    verdict.update(diagnostics.verdict(rec, sc.window_fraction, sc.diagnostics))
    if aborted:
        verdict["passed"] = False
        code = EXIT_ABORT
    else:
        code = EXIT_OK if verdict["passed"] else EXIT_DIAGNOSTIC
    _write_json(out / "verdict.json", verdict)
    return Outcome(sc.name, out, verdict, code)


def verdict_from_dir(run_dir, window_fraction: float = 0.5, requested=diagnostics.ALL_DIAGNOSTICS) -> dict:
    """Recompute the diagnostics of an existing run from its CSV and metadata."""
    d = Path(run_dir)
    meta = json.loads((d / "meta.json").read_text()) if (d / "meta.json").exists() else {}
    rec = diagnostics.RunRecord.from_csv(d / "timeseries.csv", meta)
    return diagnostics.verdict(rec, window_fraction, requested)


# -- sweeps -------------------------------------------------------------------


def parse_vary(items) -> dict:
    """['lam=0.9,0.95', 'N=200,400'] -> {'lam': ['0.9', '0.95'], 'N': ['200', '400']}."""
    out = {}
    for item in items:
        if "=" not in item:
            raise ValueError(f"--vary expects key=v1,v2,..., got {item!r}")
        key, vals = item.split("=", 1)
        values = [v.strip() for v in vals.split(",") if v.strip()]
        if not values:
            raise ValueError(f"no values given for {key!r}")
        out[key.strip()] = values
    return out


def expand(sc: Scenario, vary: dict) -> list[tuple[dict, Scenario]]:
    keys = list(vary)
    items = []
    for combo in itertools.product(*(vary[k] for k in keys)):
        point = dict(zip(keys, combo))
        s = sc
        for k, v in point.items():
            s = s.with_override(k, v)
        items.append((point, s))
    return items


def _dir_name(k: int, point: dict) -> str:
    label = "_".join(f"{key.split('.')[-1]}={v}" for key, v in point.items())
    return f"{k:03d}_{label}"


def _execute_job(args):
    sc, out_dir = args
    o = execute(sc, out_dir)
    return o.verdict, o.exit_code


AGGREGATE_COLUMNS = ("Q0", "min_Q", "exponent", "energy_residual_max", "simulation", "exit_code")


def sweep(sc: Scenario, vary: dict, out_dir, workers: int | None = None) -> list[dict]:
    """Run every point of the cartesian product in its own directory; write aggregate.csv."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs = expand(sc, vary)
    names = [_dir_name(k, p) for k, (p, _) in enumerate(jobs)]
    args = [(s, out / n) for (_, s), n in zip(jobs, names)]
    workers = worker_count() if workers is None else max(1, workers)
    if workers == 1 or len(args) == 1:
        results = [_execute_job(a) for a in args]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(args))) as pool:
            results = list(pool.map(_execute_job, args))
    rows = []
    for (point, _), name, (v, code) in zip(jobs, names, results):
        fit = v.get("exponent_fit") or {}
        e0 = v.get("initial_energy") or {}
        row = {"run": name, **point}
        row.update(
            {
                "Q0": e0.get("Q"),
                "min_Q": v.get("min_Q"),
                "exponent": fit.get("slope"),
                "energy_residual_max": v.get("energy_residual_max"),
                "simulation": v.get("simulation"),
                "exit_code": code,
            }
        )
        rows.append(row)
    cols = ["run", *vary.keys(), *AGGREGATE_COLUMNS]
    with open(out / "aggregate.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: ("" if row.get(k) is None else row.get(k)) for k in cols})
    return rows
