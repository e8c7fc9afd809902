"""Virial functionals, energy bookkeeping and expansion-rate fits for runs."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .functionals import gravitational_energy, pressure_integral
from .quadrature import integrate
from .simulator import FOUR_PI, StarState, boundary_residual

COLUMNS = (
    "t",
    "a",
    "u_boundary",
    "E",
    "kinetic",
    "internal",
    "gravitational",
    "Q",
    "dissipation_accum",
    "energy_residual",
    "H",
    "Hp",
    "Hpp",
    "min_interior_rho",
    "rho2gamma_r8_accum",
)
EXTRA_COLUMNS = ("mass", "boundary_sigma", "holder_margin", "geometric_defect")
ENERGY_FLOOR = 1e-12


# -- per-state quantities --------------------------------------------------


def lagrangian_energies(state: StarState) -> dict:
    """Kinetic, internal and gravitational energy as mass-coordinate sums."""
    g = state.gamma
    dmb = state.dm_interface[1:]
    kin = 0.5 * float(np.sum(dmb * state.u[1:] ** 2))
    internal = float(np.sum(state.dm * state.rho ** (g - 1.0))) / (g - 1.0)
    grav = float(np.sum(dmb * state.x[1:] / state.r[1:]))
    return {"kinetic": kin, "internal": internal, "gravitational": grav}


def q_value(state: StarState) -> float:
    e = lagrangian_energies(state)
    return 3.0 * (state.gamma - 1.0) * e["internal"] - e["gravitational"]


def virial_H(state: StarState) -> tuple[float, float, float]:
    """H = 2 pi int rho r^4 dr, H' = 4 pi int rho u r^3 dr and H'' from the virial identity."""
    v = state.visc
    r = state.r
    H = float(np.sum(2.0 * math.pi * state.rho * np.diff(r**5) / 5.0))
    dmb = state.dm_interface[1:]
    Hp = float(np.sum(dmb * state.u[1:] * r[1:]))
    e = lagrangian_energies(state)
    Q = 3.0 * (state.gamma - 1.0) * e["internal"] - e["gravitational"]
    flux = r**2 * state.u
    if v.alpha == 0:
        visc_term = v.nu * (flux[-1] - flux[0])
    else:
        visc_term = v.eta * float(np.sum(state.rho**v.alpha * np.diff(flux)))
    Hpp = 2.0 * e["kinetic"] + Q - 3.0 * FOUR_PI * visc_term
    return H, Hp, Hpp


def virial_I(state: StarState) -> float:
    """I = H - (1+t) H' + (1+t)^2 E, only meaningful for gamma = 4/3."""
    if abs(state.gamma - 4.0 / 3.0) > 1e-12:
        raise ValueError("virial_I is defined for gamma = 4/3")
    H, Hp, _ = virial_H(state)
    e = lagrangian_energies(state)
    E = e["kinetic"] + e["internal"] - e["gravitational"]
    s = 1.0 + state.tau
    return H - s * Hp + s * s * E


def virial_I_direct(state: StarState) -> float:
    """I from its defining integrals, evaluated by quadrature on the cell-centred field."""
    if abs(state.gamma - 4.0 / 3.0) > 1e-12:
        raise ValueError("virial_I is defined for gamma = 4/3")
    f = state.to_field()
    s = 1.0 + state.tau
    w = f.rho * (f.r_grid - s * f.u) ** 2 * f.r_grid**2
    first = 0.5 * FOUR_PI * integrate(f.r_grid, w)
    return first + s * s * (3.0 * pressure_integral(f) - gravitational_energy(f)[0])


def holder_margin(state: StarState) -> float:
    """min over nodes of (P^(1/g) V^((g-1)/g) - x) / M, P = int_0^r rho^g dx-volume, V = 4 pi r^3/3."""
    g = state.gamma
    P = np.concatenate(([0.0], np.cumsum(state.dm * state.rho ** (g - 1.0))))
    V = FOUR_PI * state.r**3 / 3.0
    rhs = P ** (1.0 / g) * V ** ((g - 1.0) / g)
    return float(np.min(rhs[1:] - state.x[1:]) / state.M)


def min_interior_rho(state: StarState, fraction: float = 0.9) -> float:
    xc = 0.5 * (state.x[1:] + state.x[:-1])
    return float(np.min(state.rho[xc <= fraction * state.M]))


def sample_row(state: StarState, E0: float | None = None) -> dict:
    e = lagrangian_energies(state)
    E = e["kinetic"] + e["internal"] - e["gravitational"]
    E0 = E if E0 is None else E0
    H, Hp, Hpp = virial_H(state)
    row = {
        "t": state.tau,
        "a": state.a,
        "u_boundary": float(state.u[-1]),
        "E": E,
        "kinetic": e["kinetic"],
        "internal": e["internal"],
        "gravitational": e["gravitational"],
        "Q": 3.0 * (state.gamma - 1.0) * e["internal"] - e["gravitational"],
        "dissipation_accum": state.dissipation,
        "energy_residual": (E + state.dissipation - E0) / max(abs(E0), ENERGY_FLOOR),
        "H": H,
        "Hp": Hp,
        "Hpp": Hpp,
        "min_interior_rho": min_interior_rho(state),
        "rho2gamma_r8_accum": state.rho2gamma_r8,
        "mass": float(np.sum(state.dm)),
        "boundary_sigma": boundary_residual(state),
        "holder_margin": holder_margin(state),
        "geometric_defect": state.geometric_defect(),
    }
    return row


# -- records ---------------------------------------------------------------


@dataclass
class RunRecord:
    meta: dict = field(default_factory=dict)
    rows: list = field(default_factory=list)
    events: list = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        return np.array([row[name] for row in self.rows], dtype=float)

    def __len__(self) -> int:
        return len(self.rows)

    def add_event(self, t: float, tag: str, message: str) -> None:
        self.events.append((float(t), tag, message))

    def to_csv(self, path=None, extra: bool = True) -> str:
        cols = COLUMNS + (EXTRA_COLUMNS if extra else ())
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for row in self.rows:
            w.writerow([repr(float(row[c])) for c in cols])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, path_or_text, meta: dict | None = None) -> "RunRecord":
        text = str(path_or_text)
        if "\n" not in text:
            text = Path(text).read_text()
        reader = csv.DictReader(io.StringIO(text))
        rows = [{k: float(v) for k, v in row.items()} for row in reader]
        return cls(meta=dict(meta or {}), rows=rows)

    @classmethod
    def synthetic(cls, t, a, **columns) -> "RunRecord":
        t = np.asarray(t, dtype=float)
        rows = []
        for k, tk in enumerate(t):
            row = {c: 0.0 for c in COLUMNS}
            row["t"] = float(tk)
            row["a"] = float(np.asarray(a)[k])
            for name, values in columns.items():
                row[name] = float(np.asarray(values)[k])
            rows.append(row)
        return cls(rows=rows)


# -- record-level diagnostics ------------------------------------------------


@dataclass(frozen=True)
class ExponentFit:
    window: tuple
    slope: float
    intercept: float
    r_squared: float
    target: float | None
    band: tuple
    n_samples: int

    @property
    def in_band(self) -> bool:
        lo, hi = self.band
        return lo <= self.slope <= hi

    def to_dict(self) -> dict:
        d = asdict(self)
        d["in_band"] = self.in_band
        return d


class InsufficientData(ValueError):
    pass


def expected_rate(gamma: float, alpha: float, eta: float) -> tuple[float | None, tuple]:
    """Target exponent and acceptance band for a(t) ~ t^p.

    The bands are implementation tolerances around the predicted rates.
    """
    if alpha == 0:
        if abs(gamma - 4.0 / 3.0) < 1e-12:
            # only 1/4 <= p <= 1/3 is predicted; no point target
            return None, (0.22, 0.36)
        return 1.0 / 3.0, (0.28, 0.38)
    if eta == 0:
        return None, (-math.inf, math.inf)
    if alpha >= 2.0 / 3.0:
        return 1.0, (0.9, math.inf)
    p = 1.0 / (3.0 * (1.0 - alpha))
    return p, (p - 0.08, p + 0.10)


def fit_exponent(
    record: RunRecord,
    window_fraction: float = 0.5,
    gamma: float | None = None,
    alpha: float | None = None,
    eta: float | None = None,
    min_decades: float = 1.0,
) -> ExponentFit:
    """Least-squares slope of log a against log t over the last ``window_fraction`` of log-time.

    The log-time span runs from the first positive sample to the last one.
    """
    t = record.column("t")
    a = record.column("a")
    pos = t > 0
    t, a = t[pos], a[pos]
    if t.size < 10:
        raise InsufficientData("need at least 10 samples with t > 0")
    lt = np.log(t)
    lo = lt[-1] - window_fraction * (lt[-1] - lt[0])
    sel = lt >= lo
    if sel.sum() < 10:
        raise InsufficientData("fewer than 10 samples in the fit window")
    if lt[-1] - lo < min_decades * math.log(10.0) - 1e-12:
        raise InsufficientData("fit window spans less than the required decades")
    if np.any(np.diff(a[sel]) < 0):
        raise InsufficientData("free-boundary radius is not monotone in the fit window")
    x, y = lt[sel], np.log(a[sel])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    meta = record.meta
    gamma = meta.get("gamma") if gamma is None else gamma
    alpha = meta.get("alpha", 0.0) if alpha is None else alpha
    eta = meta.get("eta", 1.0) if eta is None else eta
    target, band = (None, (-math.inf, math.inf)) if gamma is None else expected_rate(gamma, alpha, eta)
    return ExponentFit(
        window=(float(math.exp(lo)), float(t[-1])),
        slope=float(slope),
        intercept=float(intercept),
        r_squared=r2,
        target=target,
        band=band,
        n_samples=int(sel.sum()),
    )


def energy_residual(record: RunRecord, floor: float = ENERGY_FLOOR) -> np.ndarray:
    E = record.column("E")
    D = record.column("dissipation_accum")
    E0 = E[0]
    return (E + D - E0) / max(abs(E0), floor)


def q_persistence(record: RunRecord) -> tuple[float, float]:
    Q = record.column("Q")
    k = int(np.argmin(Q))
    return float(Q[k]), float(record.column("t")[k])


def second_derivative(t: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Centred second difference on a possibly non-uniform grid (interior points)."""
    h1 = t[1:-1] - t[:-2]
    h2 = t[2:] - t[1:-1]
    return 2.0 * (h1 * y[2:] - (h1 + h2) * y[1:-1] + h2 * y[:-2]) / (h1 * h2 * (h1 + h2))


def first_derivative(t: np.ndarray, y: np.ndarray) -> np.ndarray:
    h1 = t[1:-1] - t[:-2]
    h2 = t[2:] - t[1:-1]
    return (h1**2 * y[2:] - h2**2 * y[:-2] + (h2**2 - h1**2) * y[1:-1]) / (h1 * h2 * (h1 + h2))


def late_window(t: np.ndarray, window_fraction: float = 0.5) -> np.ndarray:
    """Boolean mask of the last ``window_fraction`` of log-time (samples with t > 0)."""
    pos = t > 0
    if pos.sum() < 2:
        return pos
    lt0, lt1 = np.log(t[pos][0]), np.log(t[-1])
    lo = lt1 - window_fraction * (lt1 - lt0)
    with np.errstate(divide="ignore"):
        return pos & (np.log(np.where(pos, t, 1.0)) >= lo)


def virial_consistency(record: RunRecord, window_fraction: float = 0.5) -> dict:
    """RMS relative mismatch between finite differences of H, H' and the formula columns."""
    t = record.column("t")
    H, Hp, Hpp = record.column("H"), record.column("Hp"), record.column("Hpp")
    late = late_window(t, window_fraction)[1:-1]
    if late.sum() < 3:
        raise InsufficientData("too few samples in the late window")

    def rel(num, ref):
        scale = np.sqrt(np.mean(ref**2))
        return float(np.sqrt(np.mean((num - ref) ** 2)) / scale) if scale > 0 else 0.0

    return {
        "d2H_vs_Hpp": rel(second_derivative(t, H)[late], Hpp[1:-1][late]),
        "dHp_vs_Hpp": rel(first_derivative(t, Hp)[late], Hpp[1:-1][late]),
        "dH_vs_Hp": rel(first_derivative(t, H)[late], Hp[1:-1][late]),
        "n_samples": int(late.sum()),
    }


def virial_lower_chain(record: RunRecord, nu: float) -> dict:
    """Check Lambda t + C0 <= H' + 4 pi nu a^3 with Lambda = min Q and C0 the t = 0 value of the right side."""
    t = record.column("t")
    rhs = record.column("Hp") + FOUR_PI * nu * record.column("a") ** 3
    lam = q_persistence(record)[0]
    c0 = float(rhs[0] - lam * t[0])
    gap = rhs - (lam * t + c0)
    tol = 1e-9 * max(1.0, float(np.max(np.abs(rhs))))
    return {"Lambda": lam, "C0": c0, "margin": float(np.min(gap)), "holds": bool(np.min(gap) >= -tol)}


def virial_upper_chain(record: RunRecord, nu: float) -> dict:
    """Integrated upper bound H' + 4 pi nu a^3 <= 2 E0 t + (H' + 4 pi nu a^3)(0)."""
    t = record.column("t")
    lhs = record.column("Hp") + FOUR_PI * nu * record.column("a") ** 3
    E0 = float(record.column("E")[0])
    gap = 2.0 * E0 * (t - t[0]) + lhs[0] - lhs
    tol = 1e-9 * max(1.0, float(np.max(np.abs(lhs))))
    return {"E0": E0, "margin": float(np.min(gap)), "holds": bool(np.min(gap) >= -tol)}


def i_monotonicity(record: RunRecord, nu: float) -> dict:
    """(I/(1+t)) - 4 pi nu a^3 should be non-increasing for gamma = 4/3 runs."""
    t = record.column("t")
    s = 1.0 + t
    I = record.column("H") - s * record.column("Hp") + s * s * record.column("E")
    g = I / s - FOUR_PI * nu * record.column("a") ** 3
    inc = np.diff(g)
    scale = max(float(np.max(np.abs(g))), 1e-300)
    return {"max_increase": float(np.max(inc)) / scale if inc.size else 0.0, "holds": bool(np.all(inc <= 1e-6 * scale))}


ALL_DIAGNOSTICS = ("exponent_fit", "energy_residual", "q_persistence", "virial", "holder")
ENERGY_TOL = 1e-2
VIRIAL_TOL = 0.05


def verdict(record: RunRecord, window_fraction: float = 0.5, requested=ALL_DIAGNOSTICS) -> dict:
    """Per-run summary used by the runner and the ``verdict`` CLI verb.

    Keys: exponent_fit, energy_residual_max, min_Q, virial_checks, plus a
    ``checks`` map of pass/fail flags for the requested diagnostics.
    """
    meta = record.meta
    nu = float(meta.get("nu", meta.get("eta", 1.0)))
    gamma = meta.get("gamma")
    alpha = float(meta.get("alpha", 0.0))
    out: dict = {"exponent_fit": None, "energy_residual_max": None, "min_Q": None, "virial_checks": {}}
    passes: dict = {}
    if "exponent_fit" in requested:
        try:
            fit = fit_exponent(record, window_fraction)
            out["exponent_fit"] = fit.to_dict()
            passes["exponent_fit"] = fit.in_band
        except InsufficientData as exc:
            out["exponent_fit"] = {"error": str(exc)}
            passes["exponent_fit"] = False
    if "energy_residual" in requested:
        res = energy_residual(record)
        out["energy_residual_max"] = float(np.max(np.abs(res)))
        out["energy_residual_final"] = float(res[-1])
        passes["energy_residual"] = bool(abs(res[-1]) <= ENERGY_TOL)
    if "q_persistence" in requested:
        min_q, t_q = q_persistence(record)
        out["min_Q"] = min_q
        out["min_Q_time"] = t_q
        passes["q_persistence"] = bool(min_q > 0)
    checks = out["virial_checks"]
    if "virial" in requested:
        try:
            vc = virial_consistency(record, window_fraction)
            checks["virial_fd"] = {"pass": vc["d2H_vs_Hpp"] <= VIRIAL_TOL, **vc}
        except InsufficientData as exc:
            checks["virial_fd"] = {"pass": False, "error": str(exc)}
        if gamma is not None and alpha == 0:
            if gamma < 4.0 / 3.0 - 1e-12:
                lc = virial_lower_chain(record, nu)
                checks["virial_lower"] = {"pass": lc["holds"], "margin": lc["margin"], "Lambda": lc["Lambda"], "C0": lc["C0"]}
                uc = virial_upper_chain(record, nu)
                checks["virial_upper"] = {"pass": uc["holds"], "margin": uc["margin"], "E0": uc["E0"]}
            else:
                im = i_monotonicity(record, nu)
                checks["I_monotone"] = {"pass": im["holds"], "margin": -im["max_increase"]}
        passes["virial"] = all(c["pass"] for c in checks.values())
    if "holder" in requested:
        if record.rows and "holder_margin" in record.rows[0]:
            hm = float(np.min(record.column("holder_margin")))
            checks["holder_chain"] = {"pass": hm >= -1e-12, "margin": hm}
            passes["holder"] = hm >= -1e-12
        else:
            passes["holder"] = False
    out["checks"] = {k: bool(v) for k, v in passes.items()}
    out["passed"] = all(passes.values())
    return _clean(out)


def _clean(o):
    """JSON-safe copy: non-finite floats become None, numpy scalars become Python."""
    if isinstance(o, dict):
        return {k: _clean(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_clean(v) for v in o]
    if isinstance(o, (np.bool_, bool)):
        return bool(o)
    if isinstance(o, (np.integer, int)):
        return int(o)
    if isinstance(o, (np.floating, float)):
        return float(o) if math.isfinite(o) else None
    return o


def write_verdict(v: dict, path) -> None:
    Path(path).write_text(json.dumps(_clean(v), indent=2, sort_keys=True) + "\n")
