"""Free-boundary Navier-Stokes-Poisson dynamics in Lagrangian mass coordinates.

Staggered grid: interfaces j = 0..N carry the enclosed mass x_j, radius r_j and
velocity u_j; cells i = 0..N-1 carry the density rho_i.  The inner interface is
pinned at r_0 = xi with u_0 = 0, the outer interface r_N = a(t) is the free
boundary where the effective viscous flux vanishes.

One step is

1. explicit pressure-gradient and gravity kick (gravity from the enclosed mass),
2. backward-Euler viscous solve (tridiagonal in the interface velocities),
3. radii advanced with the new velocities, densities from the exact cell volumes.

The discrete energy sum(1/2 u^2 dm) + sum(rho^(gamma-1)/(gamma-1) dm) - sum(x/r dm)
is conserved by the semi-discrete scheme up to the viscous dissipation, which is
accumulated alongside.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.linalg import solve_banded

from .functionals import RadialField
from .polytrope import solve_profile

FOUR_PI = 4.0 * math.pi
MASS_FLOOR = 1e-300
PROFILE_SAMPLES = 8001


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class ViscosityModel:
    """Shear ``epsilon``, bulk ``eta``; both multiplied by rho^alpha."""

    epsilon: float = 0.0
    eta: float = 1.0
    alpha: float = 0.0

    def __post_init__(self):
        if self.epsilon < 0 or self.eta < 0:
            raise ValueError("viscosity coefficients must be non-negative")
        if max(self.epsilon, self.eta) <= 0:
            raise ValueError("at least one of epsilon, eta must be positive")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")

    @property
    def nu(self) -> float:
        """eta + 4 epsilon / 3."""
        return self.eta + 4.0 * self.epsilon / 3.0


@dataclass(frozen=True)
class InitialData:
    kind: str = "scaled_lane_emden"  # lane_emden | scaled_lane_emden | table
    mu: float = 1.0
    lam: float = 1.0
    mass_scale: float = 1.0
    table_r: tuple = ()
    table_rho: tuple = ()
    velocity: str = "zero"  # zero | linear | table
    velocity_c: float = 0.0
    table_u: tuple = ()


@dataclass(frozen=True)
class SimConfig:
    gamma: float
    visc: ViscosityModel
    N: int = 400
    t_end: float = 50.0
    cfl: float = 0.5
    xi: float | None = None
    initial: InitialData = field(default_factory=InitialData)
    output_stride: int = 100
    output_dt: float | None = None
    grid: str = "mass"  # mass | radius
    splitting: str = "first"  # first | strang | midpoint | predictor
    max_steps: int = 50_000_000
    # diagnostic switches
    pressure: bool = True
    gravity: bool = True
    accumulate_dissipation: bool = True
    boundary: str = "stress_free"  # stress_free | continue

    def __post_init__(self):
        if self.N < 16:
            raise ValueError("need at least 16 cells")
        if self.t_end < 0:
            raise ValueError("t_end must be non-negative")
        if not 0 < self.cfl < 1:
            raise ValueError("cfl must lie in (0, 1)")
        if not 1.0 < self.gamma < 2.0:
            raise ValueError("gamma must lie in (1, 2)")
        if self.visc.alpha > self.gamma:
            raise ValueError("alpha may not exceed gamma")


@dataclass
class StarState:
    tau: float
    x: np.ndarray
    rho: np.ndarray
    u: np.ndarray
    r: np.ndarray
    xi: float
    gamma: float
    visc: ViscosityModel
    dissipation: float = 0.0
    rho2gamma_r8: float = 0.0
    steps: int = 0

    @property
    def dm(self) -> np.ndarray:
        return np.diff(self.x)

    @property
    def dm_interface(self) -> np.ndarray:
        dm = self.dm
        out = np.empty(self.x.size)
        out[0] = 0.5 * dm[0]
        out[1:-1] = 0.5 * (dm[1:] + dm[:-1])
        out[-1] = 0.5 * dm[-1]
        return out

    @property
    def a(self) -> float:
        return float(self.r[-1])

    @property
    def M(self) -> float:
        return float(self.x[-1])

    @property
    def N(self) -> int:
        return self.rho.size

    def copy(self) -> "StarState":
        return replace(self, x=self.x.copy(), rho=self.rho.copy(), u=self.u.copy(), r=self.r.copy())

    def geometric_defect(self) -> float:
        """Max relative violation of r_{i+1}^3 - r_i^3 = 3 dm_i / (4 pi rho_i)."""
        lhs = np.diff(self.r**3)
        rhs = 3.0 * self.dm / (FOUR_PI * self.rho)
        return float(np.max(np.abs(lhs - rhs) / rhs))

    def to_field(self) -> RadialField:
        """Cell-centred density and velocity on the cell-centre radii, closed by rho(a) = 0."""
        rc = np.cbrt(0.5 * (self.r[1:] ** 3 + self.r[:-1] ** 3))
        uc = 0.5 * (self.u[1:] + self.u[:-1])
        r = np.concatenate(([self.r[0]], rc, [self.r[-1]]))
        rho = np.concatenate(([self.rho[0]], self.rho, [0.0]))
        u = np.concatenate(([self.u[0]], uc, [self.u[-1]]))
        return RadialField(r, rho, self.gamma, u, self.a)

    def to_dict(self) -> dict:
        return {
            "tau": self.tau,
            "x": self.x.tolist(),
            "rho": self.rho.tolist(),
            "u": self.u.tolist(),
            "r": self.r.tolist(),
            "xi": self.xi,
            "gamma": self.gamma,
            "visc": {"epsilon": self.visc.epsilon, "eta": self.visc.eta, "alpha": self.visc.alpha},
            "dissipation": self.dissipation,
            "rho2gamma_r8": self.rho2gamma_r8,
            "steps": self.steps,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StarState":
        return cls(
            tau=float(d["tau"]),
            x=np.array(d["x"], dtype=float),
            rho=np.array(d["rho"], dtype=float),
            u=np.array(d["u"], dtype=float),
            r=np.array(d["r"], dtype=float),
            xi=float(d["xi"]),
            gamma=float(d["gamma"]),
            visc=ViscosityModel(**d["visc"]),
            dissipation=float(d.get("dissipation", 0.0)),
            rho2gamma_r8=float(d.get("rho2gamma_r8", 0.0)),
            steps=int(d.get("steps", 0)),
        )


# -- initial data -----------------------------------------------------------


def _initial_mass_curve(cfg: SimConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Radii, densities and enclosed masses of the initial density on [0, a0]."""
    from .functionals import enclosed_mass

    init = cfg.initial
    if init.kind in ("lane_emden", "scaled_lane_emden"):
        prof = solve_profile(cfg.gamma, init.mu, n_samples=PROFILE_SAMPLES)
        if not prof.finite:
            raise SimulationError("initial Lane-Emden star has no finite support")
        lam = init.lam if init.kind == "scaled_lane_emden" else 1.0
        # lam^3 rho(lam r) encloses m(lam r): the ODE mass curve carries over exactly
        r = prof.r_samples / lam
        rho = lam**3 * prof.rho_samples * init.mass_scale
        m = prof.m_samples * init.mass_scale
    elif init.kind == "table":
        r = np.asarray(init.table_r, dtype=float)
        rho = np.asarray(init.table_rho, dtype=float) * init.mass_scale
        if r.size < 4:
            raise ValueError("density table needs at least 4 rows")
        if np.any(rho[:-1] <= 0):
            raise SimulationError("initial density must be positive inside the support")
        m = enclosed_mass(RadialField(r, rho, cfg.gamma))
    else:
        raise ValueError(f"unknown initial data kind {init.kind!r}")
    return r, rho, np.maximum.accumulate(m)


def default_cutoff(r: np.ndarray, rho: np.ndarray, m: np.ndarray, fraction: float = 1e-7) -> float:
    """Radius of the central ball holding ``fraction`` of the mass at the central density."""
    return float(np.cbrt(3.0 * fraction * m[-1] / (FOUR_PI * rho[0])))


def _velocity(init: InitialData, r: np.ndarray) -> np.ndarray:
    if init.velocity == "zero":
        return np.zeros_like(r)
    if init.velocity == "linear":
        return init.velocity_c * r
    if init.velocity == "table":
        u = np.asarray(init.table_u, dtype=float)
        return np.interp(r, np.asarray(init.table_r, dtype=float), u)
    raise ValueError(f"unknown velocity spec {init.velocity!r}")


def init(cfg: SimConfig) -> StarState:
    """Sample the initial data on a Lagrangian grid.

    The mass inside the cutoff xi is redistributed by rescaling the density
    on [xi, a0) so the total mass is unchanged.
    """
    r_prof, rho_prof, m_prof = _initial_mass_curve(cfg)
    a0 = float(r_prof[-1])
    M = float(m_prof[-1])
    if M <= MASS_FLOOR:
        raise SimulationError("initial mass below floor")
    xi = default_cutoff(r_prof, rho_prof, m_prof) if cfg.xi is None else float(cfg.xi)
    if not 0.0 <= xi < a0:
        raise ValueError("cutoff must lie inside the support")

    # r^3 is smooth in m at the centre, unlike r itself
    keep = np.concatenate(([True], np.diff(m_prof) > 0))
    inv = CubicSpline(m_prof[keep], r_prof[keep] ** 3)
    m_xi = float(inv.solve(xi**3, extrapolate=False)[0]) if xi > 0 else 0.0

    N = cfg.N
    if cfg.grid == "mass":
        x = np.linspace(0.0, M, N + 1)
    elif cfg.grid == "radius":
        r_nodes = np.linspace(xi, a0, N + 1)
        x = (np.interp(r_nodes, r_prof, m_prof) - m_xi) * M / (M - m_xi)
        x[0], x[-1] = 0.0, M
        if np.any(np.diff(x) <= 0):
            raise SimulationError("radius grid produced empty cells")
    else:
        raise ValueError(f"unknown grid {cfg.grid!r}")
    m_target = m_xi + x * (M - m_xi) / M
    r3 = inv(m_target)
    r3[0] = xi**3
    r3[-1] = a0**3
    vol = np.diff(r3) * FOUR_PI / 3.0
    if np.any(vol <= 0):
        raise SimulationError("degenerate initial cell")
    rho = np.diff(x) / vol
    if np.any(rho <= 0) or not np.all(np.isfinite(rho)):
        raise SimulationError("non-positive density cell in initial data")
    # radii rebuilt from the recursion so the geometric relation holds to round-off
    r = np.cbrt(xi**3 + np.concatenate(([0.0], np.cumsum(3.0 * np.diff(x) / (FOUR_PI * rho)))))
    u = _velocity(cfg.initial, r)
    u[0] = 0.0
    return StarState(0.0, x, rho, u, r, xi, cfg.gamma, cfg.visc)


# -- boundary --------------------------------------------------------------


def boundary_pressure(state: StarState) -> float:
    """rho^gamma at x = M, extrapolated linearly in mass from the last two cells, floored at 0."""
    p = state.rho**state.gamma
    dm = state.dm
    slope = (p[-1] - p[-2]) / (0.5 * (dm[-1] + dm[-2]))
    return max(p[-1] + slope * 0.5 * dm[-1], 0.0)


def apply_boundary(state: StarState) -> StarState:
    """Enforce u(0) = 0.  The outer closure (viscous face stress = boundary pressure) lives in ``step``."""
    state.u[0] = 0.0
    return state


def boundary_residual(state: StarState) -> float:
    """sigma at the outer cell: extrapolated boundary pressure minus the viscous normal stress of the last cell."""
    v = state.visc
    rho = state.rho[-1]
    g = state.r**2 * state.u
    div = FOUR_PI * rho * (g[-1] - g[-2]) / state.dm[-1]
    return boundary_pressure(state) - v.nu * rho**v.alpha * div


# -- stepping --------------------------------------------------------------


def explicit_acceleration(state: StarState, pressure: bool = True, gravity: bool = True) -> np.ndarray:
    """Pressure-gradient plus gravity acceleration at interfaces (entry 0 is zero)."""
    r = state.r
    acc = np.zeros_like(r)
    dmb = state.dm_interface
    if pressure:
        p = state.rho**state.gamma
        pf = np.empty(state.N + 1)
        pf[:-1] = p
        pf[-1] = boundary_pressure(state)
        acc[1:] -= FOUR_PI * r[1:] ** 2 * (pf[1:] - pf[:-1]) / dmb[1:]
    if gravity:
        acc[1:] -= state.x[1:] / r[1:] ** 2
    v = state.visc
    if v.alpha > 0 and v.epsilon > 0:
        ra = np.empty(state.N + 1)
        ra[:-1] = state.rho**v.alpha
        ra[-1] = 0.0
        acc[1:] -= 4.0 * FOUR_PI * v.epsilon * r[1:] * state.u[1:] * (ra[1:] - ra[:-1]) / dmb[1:]
    return acc


def _viscous_coefficients(state: StarState) -> np.ndarray:
    v = state.visc
    return v.nu * state.rho ** (1.0 + v.alpha) * FOUR_PI / state.dm


def _viscous_solve(state: StarState, u_star: np.ndarray, dt: float, q_face: float) -> np.ndarray:
    """Backward Euler for du/dt = 4 pi r^2 d_x(q), q_i = kappa_i (r^2 u)_{i+1} - (r^2 u)_i."""
    r2 = state.r**2
    kappa = _viscous_coefficients(state)
    c = dt * FOUR_PI * r2[1:] / state.dm_interface[1:]
    n = state.N
    k_out = np.empty(n)
    k_out[:-1] = kappa[1:]
    k_out[-1] = 0.0
    k_in = kappa
    diag = 1.0 + c * r2[1:] * (k_out + k_in)
    upper = -c[:-1] * k_out[:-1] * r2[2:]
    lower = -c[1:] * k_in[1:] * r2[1:-1]
    rhs = u_star[1:].copy()
    rhs[-1] += c[-1] * q_face
    ab = np.zeros((3, n))
    ab[0, 1:] = upper
    ab[1] = diag
    ab[2, :-1] = lower
    try:
        sol = solve_banded((1, 1), ab, rhs, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise SimulationError(f"tridiagonal viscous solve failed: {exc}") from exc
    out = np.empty_like(u_star)
    out[0] = 0.0
    out[1:] = sol
    return out


def dissipation_rate(state: StarState, u: np.ndarray | None = None) -> float:
    """Viscous dissipation rate.

    alpha = 0: 4 pi int (eta + 4 eps/3) (d_r u + 2u/r)^2 r^2 dr.
    alpha > 0: 4 pi int [eta rho^a (d_r u + 2u/r)^2 + 4/3 eps rho^a (d_r u - u/r)^2] r^2 dr.
    Both written on cells with dx = 4 pi rho r^2 dr.
    """
    v = state.visc
    u = state.u if u is None else u
    r = state.r
    rho = state.rho
    dm = state.dm
    div = FOUR_PI * rho * np.diff(r**2 * u) / dm
    if v.alpha == 0 or v.epsilon == 0:
        return float(np.sum(v.nu * rho**v.alpha * div**2 * dm / rho))
    rc3 = 0.5 * (r[1:] ** 3 + r[:-1] ** 3)
    with np.errstate(divide="ignore", invalid="ignore"):
        u_over_r = np.where(r > 0, u / np.where(r > 0, r, 1.0), 0.0)
    shear = FOUR_PI * rho * rc3 * np.diff(u_over_r) / dm
    return float(np.sum(rho**v.alpha * (v.eta * div**2 + 4.0 / 3.0 * v.epsilon * shear**2) * dm / rho))


def _drifted(s: StarState, dt: float) -> StarState:
    r = s.r + dt * s.u
    r[0] = s.r[0]
    vol = np.diff(r**3)
    if np.any(vol <= 0):
        raise SimulationError(f"cell inversion at t={s.tau:.6g}; time step too large")
    return replace(s, r=r, rho=3.0 * s.dm / (FOUR_PI * vol))


def step(state: StarState, dt: float, cfg: SimConfig | None = None) -> StarState:
    """Advance one time step of size dt; returns a new state."""
    pressure = True if cfg is None else cfg.pressure
    gravity = True if cfg is None else cfg.gravity
    boundary = "stress_free" if cfg is None else cfg.boundary
    accumulate = True if cfg is None else cfg.accumulate_dissipation

    s = state
    strang = cfg is not None and cfg.splitting == "strang"
    # midpoint / predictor: forces and viscous operator on the geometry drifted by dt/2 or dt
    mode = "first" if cfg is None else cfg.splitting
    g = _drifted(s, 0.5 * dt) if mode == "midpoint" else _drifted(s, dt) if mode == "predictor" else s
    kick = 0.5 * dt if strang else dt
    u = s.u + kick * explicit_acceleration(g, pressure, gravity)
    u[0] = 0.0
    if boundary == "stress_free":
        # sigma = 0 at x = M: viscous face stress equals the face pressure
        q_face = boundary_pressure(g) if pressure else 0.0
    else:
        # diagnostic closure: continue the last cell's viscous stress through the face
        k = _viscous_coefficients(g)[-1]
        q_face = k * (g.r[-1] ** 2 * g.u[-1] - g.r[-2] ** 2 * g.u[-2])
    u = _viscous_solve(g, u, dt, q_face)

    diss = dissipation_rate(g, u) * dt if accumulate else 0.0
    r_new = s.r + dt * u
    r_new[0] = s.r[0]
    vol = np.diff(r_new**3)
    if np.any(vol <= 0) or not np.all(np.isfinite(vol)):
        raise SimulationError(f"cell inversion at t={s.tau:.6g}; time step too large")
    rho_new = 3.0 * s.dm / (FOUR_PI * vol)
    if np.any(rho_new <= 0):
        raise SimulationError("negative density after update")
    out = StarState(
        s.tau + dt,
        s.x,
        rho_new,
        u,
        r_new,
        s.xi,
        s.gamma,
        s.visc,
        s.dissipation + diss,
        s.rho2gamma_r8 + dt * float(np.sum(s.rho ** (2 * s.gamma) * np.diff(s.r**9)) / 9.0),
        s.steps + 1,
    )
    if strang:
        out.u = out.u + 0.5 * dt * explicit_acceleration(out, pressure, gravity)
    return apply_boundary(out)


def stable_dt(state: StarState, cfl: float = 0.5, pressure: bool = True, gravity: bool = True) -> float:
    """cfl * min over cells of dr / (c_s + |du|), limited further by the relative explicit acceleration."""
    dr = np.diff(state.r)
    cs = np.sqrt(state.gamma * state.rho ** (state.gamma - 1.0)) if pressure else np.zeros(state.N)
    du = np.abs(np.diff(state.u))
    speed = cs + du
    with np.errstate(divide="ignore"):
        dt_wave = np.min(np.where(speed > 0, dr / speed, np.inf))
        acc = explicit_acceleration(state, pressure, gravity)
        dacc = np.abs(np.diff(acc))
        dt_acc = np.min(np.where(dacc > 0, np.sqrt(2.0 * dr / dacc), np.inf))
    dt = cfl * min(dt_wave, dt_acc)
    if not np.isfinite(dt):
        dt = cfl * float(np.min(dr))
    return float(dt)


def run(cfg: SimConfig, state: StarState | None = None, progress=None):
    """Drive ``step`` to ``cfg.t_end`` and return a RunRecord.

    Samples are taken every ``output_stride`` steps, or on the ``output_dt``
    time lattice when that is set.  A failing step ends the run; the partial
    record is returned with an ``abort`` event.
    """
    from .diagnostics import RunRecord, sample_row

    s = init(cfg) if state is None else state
    rec = RunRecord(meta=run_metadata(cfg, s))
    row = sample_row(s)
    E0 = row["E"]
    rec.meta["E0"] = E0
    rec.rows.append(row)
    k_out = 1
    last_sampled = s.steps
    while s.tau < cfg.t_end:
        if s.steps >= cfg.max_steps:
            rec.add_event(s.tau, "abort", f"max_steps={cfg.max_steps} reached")
            break
        target = min(k_out * cfg.output_dt, cfg.t_end) if cfg.output_dt else cfg.t_end
        dt = stable_dt(s, cfg.cfl, cfg.pressure, cfg.gravity)
        # land exactly on the target instead of leaving a sliver step
        hit = dt >= (target - s.tau) * (1.0 - 1e-9)
        if hit:
            dt = target - s.tau
        try:
            s = step(s, dt, cfg)
        except SimulationError as exc:
            rec.add_event(s.tau, "abort", str(exc))
            break
        if hit:
            s.tau = target
        done = hit and target >= cfg.t_end
        if cfg.output_dt:
            due = hit
            if hit:
                k_out += 1
        else:
            due = s.steps - last_sampled >= cfg.output_stride
        if due or done:
            rec.rows.append(sample_row(s, E0))
            last_sampled = s.steps
            if progress is not None:
                progress(s)
        if done:
            break
    rec.meta["steps"] = s.steps
    rec.meta["final_state"] = s
    return rec


def run_metadata(cfg: SimConfig, s: StarState) -> dict:
    v = cfg.visc
    return {
        "gamma": cfg.gamma,
        "epsilon": v.epsilon,
        "eta": v.eta,
        "alpha": v.alpha,
        "nu": v.nu,
        "N": cfg.N,
        "cfl": cfg.cfl,
        "t_end": cfg.t_end,
        "xi": s.xi,
        "M": s.M,
        "a0": s.a,
    }
