"""Scenario files: flat sectioned ``key = value`` text read with configparser."""

from __future__ import annotations

import configparser
import io
import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .polytrope import GAMMA_ENERGY_CRITICAL, GAMMA_MASS_CRITICAL
from .simulator import InitialData, SimConfig, ViscosityModel

GATES = ("invariant_set", "critical_mass", "kl_gate")
DIAGNOSTICS = ("exponent_fit", "energy_residual", "q_persistence", "virial", "holder")


class ConfigError(ValueError):
    """Bad scenario file; ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None, path: str | None = None, key: tuple | None = None):
        self.message = message
        self.key = key
        where = ""
        if path:
            where = f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}".strip())
        self.line = line
        self.path = path


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _number(text: str) -> float:
    """Float, also accepting a fraction such as 4/3."""
    return float(Fraction(text.strip())) if "/" in text else float(text)


def _opt_float(text: str):
    t = text.strip().lower()
    return None if t in ("", "none", "auto") else _number(t)


def _opt_int(text: str):
    t = text.strip().lower()
    return None if t in ("", "none", "auto") else int(t)


def _words(text: str) -> tuple:
    return tuple(w for w in re.split(r"[,\s]+", text.strip()) if w)


# section -> key -> (parser, default)
SCHEMA = {
    "scenario": {
        "name": (str, "scenario"),
        "gates": (_words, ()),
        "diagnostics": (_words, DIAGNOSTICS),
        "seed": (int, 0),
    },
    "physics": {
        "gamma": (_number, None),
        "epsilon": (_number, 0.0),
        "eta": (_number, 1.0),
        "alpha": (_number, 0.0),
    },
    "initial": {
        "init": (str, None),
        "kind": (str, "scaled_lane_emden"),
        "mu": (float, 1.0),
        "lam": (float, 1.0),
        "mass_scale": (float, 1.0),
        "table": (str, None),
        "velocity": (str, "zero"),
        "velocity_c": (float, 0.0),
    },
    "numerics": {
        "N": (int, 400),
        "t_end": (float, 50.0),
        "cfl": (float, 0.5),
        "xi": (_opt_float, None),
        "output_stride": (int, 100),
        "output_dt": (_opt_float, None),
        "grid": (str, "mass"),
        "splitting": (str, "first"),
        "max_steps": (_opt_int, None),
        "boundary": (str, "stress_free"),
        "pressure": (_bool, True),
        "gravity": (_bool, True),
        "accumulate_dissipation": (_bool, True),
    },
    "diagnostics": {
        "window_fraction": (float, 0.5),
    },
}

_INIT_CALL = re.compile(r"^\s*(\w+)\s*\((.*)\)\s*$")
_INIT_ALIASES = {"lane_emden_scaled": "scaled_lane_emden", "scaled_lane_emden": "scaled_lane_emden", "lane_emden": "lane_emden"}


@dataclass(frozen=True)
class Scenario:
    name: str
    sim: SimConfig
    gates: tuple = ()
    diagnostics: tuple = DIAGNOSTICS
    seed: int = 0
    window_fraction: float = 0.5
    base: Path | None = field(default=None, compare=False, repr=False)
    values: dict = field(default_factory=dict, compare=False, repr=False)

    def with_override(self, key: str, value: str) -> "Scenario":
        """New scenario with one key replaced; ``key`` is ``section.key`` or a bare unique key."""
        section, name = _locate(key)
        values = {s: dict(v) for s, v in self.values.items()}
        values.setdefault(section, {})[name] = str(value)
        return build_scenario(values, self.base)

    def to_ini(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        for section, items in self.values.items():
            cp[section] = {k: str(v) for k, v in items.items()}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()


def _locate(key: str) -> tuple[str, str]:
    if "." in key:
        section, name = key.split(".", 1)
        if section not in SCHEMA or name not in SCHEMA[section]:
            raise ConfigError(f"unknown key {key!r}")
        return section, name
    hits = [s for s, keys in SCHEMA.items() if key in keys]
    if len(hits) != 1:
        raise ConfigError(f"unknown or ambiguous key {key!r}")
    return hits[0], key


def _line_index(text: str) -> dict:
    """(section, key) -> line number, for error messages."""
    out = {}
    section = None
    for n, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if not s or s[0] in "#;":
            continue
        m = re.match(r"^\[(.+)\]$", s)
        if m:
            section = m.group(1).strip()
            out[(section, None)] = n
            continue
        if "=" in s and section is not None:
            out[(section, s.split("=", 1)[0].strip())] = n
    return out


def parse_text(text: str, path: str | None = None) -> Scenario:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # keep N upper case
    try:
        cp.read_string(text, source=path or "<string>")
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError("key outside of any [section]", exc.lineno, path) from exc
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(f"duplicate key {exc.option!r}", exc.lineno, path) from exc
    except configparser.DuplicateSectionError as exc:
        raise ConfigError(f"duplicate section {exc.section!r}", exc.lineno, path) from exc
    except configparser.ParsingError as exc:
        line = exc.errors[0][0] if exc.errors else None
        raise ConfigError("malformed line (expected key = value)", line, path) from exc
    lines = _line_index(text)
    values: dict = {}
    for section in cp.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]", lines.get((section, None)), path)
        for key, raw in cp[section].items():
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]", lines.get((section, key)), path)
            values.setdefault(section, {})[key] = raw
    try:
        return build_scenario(values, base=Path(path).parent if path else None)
    except ConfigError as exc:
        if exc.line is None and exc.path is None:
            raise ConfigError(exc.message, lines.get(exc.key), path, exc.key) from exc
        raise
    except ValueError as exc:
        raise ConfigError(str(exc), None, path) from exc


def load_config(path) -> Scenario:
    path = str(path)
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", None, path) from exc
    return parse_text(text, path)


def _get(values: dict, section: str, key: str):
    parser, default = SCHEMA[section][key]
    raw = values.get(section, {}).get(key)
    if raw is None:
        return default
    try:
        return parser(raw)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: {exc}", key=(section, key)) from exc


def _read_table(path: Path) -> np.ndarray:
    data = np.loadtxt(path, comments="#", ndmin=2)
    if data.shape[1] < 2:
        raise ConfigError(f"table {path} needs columns r rho [u]")
    return data


def build_scenario(values: dict, base: Path | None = None) -> Scenario:
    g = _get(values, "physics", "gamma")
    if g is None:
        raise ConfigError("[physics] gamma is required")
    visc = ViscosityModel(_get(values, "physics", "epsilon"), _get(values, "physics", "eta"), _get(values, "physics", "alpha"))
    if visc.alpha > g:
        raise ConfigError(f"alpha = {visc.alpha} exceeds gamma = {g}", key=("physics", "alpha"))

    kind = _get(values, "initial", "kind")
    mu = _get(values, "initial", "mu")
    lam = _get(values, "initial", "lam")
    call = _get(values, "initial", "init")
    if call:
        m = _INIT_CALL.match(call)
        if not m or m.group(1) not in _INIT_ALIASES:
            raise ConfigError(f"cannot parse init = {call!r}")
        kind = _INIT_ALIASES[m.group(1)]
        args = [float(a) for a in _words(m.group(2))]
        # explicit mu / lam keys (e.g. sweep overrides) take precedence over the call
        explicit = values.get("initial", {})
        if args and "mu" not in explicit:
            mu = args[0]
        if len(args) > 1 and "lam" not in explicit:
            lam = args[1]
    table_r = table_rho = table_u = ()
    velocity = _get(values, "initial", "velocity")
    tpath = _get(values, "initial", "table")
    if kind == "table" or velocity == "table":
        if not tpath:
            raise ConfigError("table initial data needs [initial] table = <file>")
        p = Path(tpath)
        if base is not None and not p.is_absolute():
            p = base / p
        data = _read_table(p)
        table_r, table_rho = tuple(data[:, 0]), tuple(data[:, 1])
        if velocity == "table":
            if data.shape[1] < 3:
                raise ConfigError("velocity = table needs a third column u")
            table_u = tuple(data[:, 2])
    if kind not in ("lane_emden", "scaled_lane_emden", "table"):
        raise ConfigError(f"unknown initial kind {kind!r}")
    if velocity not in ("zero", "linear", "table"):
        raise ConfigError(f"unknown velocity {velocity!r}")
    initial = InitialData(
        kind=kind,
        mu=mu,
        lam=lam,
        mass_scale=_get(values, "initial", "mass_scale"),
        table_r=table_r,
        table_rho=table_rho,
        velocity=velocity,
        velocity_c=_get(values, "initial", "velocity_c"),
        table_u=table_u,
    )
    num = {k: _get(values, "numerics", k) for k in SCHEMA["numerics"]}
    if num["max_steps"] is None:
        num.pop("max_steps")
    if num["grid"] not in ("mass", "radius"):
        raise ConfigError(f"unknown grid {num['grid']!r}")
    if num["splitting"] not in ("first", "strang", "midpoint", "predictor"):
        raise ConfigError(f"unknown splitting {num['splitting']!r}")
    if num["boundary"] not in ("stress_free", "continue"):
        raise ConfigError(f"unknown boundary {num['boundary']!r}")
    if num["t_end"] <= 0 and not math.isclose(num["t_end"], 0.0):
        raise ConfigError("t_end must be non-negative")
    try:
        sim = SimConfig(gamma=g, visc=visc, initial=initial, **num)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    gates = _get(values, "scenario", "gates")
    for gate in gates:
        if gate not in GATES:
            raise ConfigError(f"unknown gate {gate!r}")
    try:
        _check_gates(g, gates)
    except ConfigError as exc:
        raise ConfigError(exc.message, key=("scenario", "gates")) from exc
    diags = _get(values, "scenario", "diagnostics")
    for d in diags:
        if d not in DIAGNOSTICS:
            raise ConfigError(f"unknown diagnostic {d!r}")
    # each requested diagnostic appears once
    diags = tuple(dict.fromkeys(diags))
    wf = _get(values, "diagnostics", "window_fraction")
    if not 0 < wf <= 1:
        raise ConfigError("window_fraction must lie in (0, 1]")
    return Scenario(
        name=_get(values, "scenario", "name"),
        sim=sim,
        gates=tuple(dict.fromkeys(gates)),
        diagnostics=diags,
        seed=_get(values, "scenario", "seed"),
        window_fraction=wf,
        base=base,
        values={s: dict(v) for s, v in values.items()},
    )


def _check_gates(gamma: float, gates) -> None:
    critical = abs(gamma - GAMMA_MASS_CRITICAL) < 1e-12
    inside = GAMMA_ENERGY_CRITICAL < gamma <= GAMMA_MASS_CRITICAL + 1e-12
    if "invariant_set" in gates and not inside:
        raise ConfigError(f"invariant_set gate needs 6/5 < gamma <= 4/3, got {gamma}")
    if "critical_mass" in gates and not critical:
        raise ConfigError(f"critical_mass gate needs gamma = 4/3, got {gamma}")
    if "kl_gate" in gates and not (inside and not critical):
        raise ConfigError(f"kl_gate needs 6/5 < gamma < 4/3, got {gamma}")
