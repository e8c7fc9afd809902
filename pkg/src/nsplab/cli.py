"""Command line entry point: steady, gates, run, sweep, verdict."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import runner
from .config import ConfigError, load_config
from .diagnostics import ALL_DIAGNOSTICS
from .functionals import RadialField, energy
from .polytrope import PolytropeError, solve_profile


def _cmd_steady(args) -> int:
    prof = solve_profile(args.gamma, args.mu, args.tol, r_max=args.r_max)
    text = prof.to_text()
    if args.out:
        Path(args.out).write_text(text)
        e = energy(RadialField.from_profile(prof))
        print(json.dumps({"gamma": prof.gamma, "mu": prof.mu, "R": prof.R if prof.finite else None, "M": prof.M, "E": prof.E_total, "Q": e.Q}))
    else:
        sys.stdout.write(text)
    return 0


def _cmd_gates(args) -> int:
    sc = load_config(args.config)
    if args.all:
        sc = runner.with_applicable_gates(sc)
    decisions = runner.evaluate_gates(sc)
    print(json.dumps([d.to_dict() for d in decisions], indent=2))
    return 0 if all(decisions) else runner.EXIT_GATE


def _cmd_run(args) -> int:
    sc = load_config(args.config)
    out = Path(args.out) if args.out else runner.output_root() / sc.name
    o = runner.execute(sc, out)
    print(json.dumps({"scenario": sc.name, "out": str(out), "passed": o.verdict.get("passed"), "checks": o.verdict.get("checks")}))
    return o.exit_code


def _cmd_sweep(args) -> int:
    sc = load_config(args.config)
    vary = runner.parse_vary(args.vary)
    out = Path(args.out) if args.out else runner.output_root() / f"{sc.name}_sweep"
    rows = runner.sweep(sc, vary, out, args.workers)
    for row in rows:
        print(json.dumps(row))
    return max((r["exit_code"] for r in rows), default=0)


def _cmd_verdict(args) -> int:
    v = runner.verdict_from_dir(args.run_dir, args.window_fraction, tuple(args.diagnostics or ALL_DIAGNOSTICS))
    text = json.dumps(v, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return runner.EXIT_OK if v["passed"] else runner.EXIT_DIAGNOSTIC


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nsplab", description="Viscous gaseous star laboratory.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("steady", help="solve a Lane-Emden star and dump its table")
    s.add_argument("--gamma", type=float, required=True)
    s.add_argument("--mu", type=float, default=1.0)
    s.add_argument("--tol", type=float, default=1e-10)
    s.add_argument("--r-max", type=float, default=1e4)
    s.add_argument("--out", help="write the table here instead of stdout")
    s.set_defaults(func=_cmd_steady)

    s = sub.add_parser("gates", help="evaluate the admissibility gates of a scenario")
    s.add_argument("--config", required=True)
    s.add_argument("--all", action="store_true", help="every gate defined for the scenario's gamma, not just the required ones")
    s.set_defaults(func=_cmd_gates)

    s = sub.add_parser("run", help="run one scenario")
    s.add_argument("--config", required=True)
    s.add_argument("--out", help="output directory (default: $NSPLAB_OUT/<name>)")
    s.set_defaults(func=_cmd_run)

    s = sub.add_parser("sweep", help="run a scenario over a parameter grid")
    s.add_argument("--config", required=True)
    s.add_argument("--vary", action="append", required=True, metavar="KEY=V1,V2", help="repeatable")
    s.add_argument("--out")
    s.add_argument("--workers", type=int, default=None, help="default: $NSPLAB_WORKERS or 1")
    s.set_defaults(func=_cmd_sweep)

    s = sub.add_parser("verdict", help="recompute diagnostics for an existing run directory")
    s.add_argument("run_dir")
    s.add_argument("--window-fraction", type=float, default=0.5)
    s.add_argument("--diagnostics", nargs="*", choices=ALL_DIAGNOSTICS)
    s.add_argument("--out")
    s.set_defaults(func=_cmd_verdict)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 64
    except (PolytropeError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 65


if __name__ == "__main__":
    sys.exit(main())
