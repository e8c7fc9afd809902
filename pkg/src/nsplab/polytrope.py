"""Lane-Emden steady states of a self-gravitating polytropic gas (K = 1).

The hydrostatic profile solves

    d(rho^gamma)/dr = -rho * m(r) / r^2,   dm/dr = 4 pi rho r^2,

with rho(0) = mu.  We integrate in z = rho^(gamma-1), for which the first
equation becomes dz/dr = -((gamma-1)/gamma) m / r^2.  z vanishes linearly at
the physical vacuum boundary, so the zero crossing is well conditioned even
where d(rho)/dr blows up.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import PchipInterpolator

from .quadrature import integrate

GAMMA_ENERGY_CRITICAL = 6.0 / 5.0
GAMMA_MASS_CRITICAL = 4.0 / 3.0
DEFAULT_R_MAX = 1.0e4


class PolytropeError(RuntimeError):
    """Raised when a steady profile cannot be computed to the requested tolerance."""


@dataclass(frozen=True)
class PolytropeProfile:
    """A sampled Lane-Emden star.

    ``R`` is ``math.inf`` when no vacuum was found before ``r_max``; the mass
    and energy are then those of the truncated profile.
    """

    gamma: float
    mu: float
    r_samples: np.ndarray
    rho_samples: np.ndarray
    m_samples: np.ndarray
    R: float
    M: float
    E_total: float
    quadrature_tol: float
    internal: float = 0.0
    gravitational: float = 0.0
    _z_interp: PchipInterpolator | None = field(default=None, repr=False, compare=False)

    @property
    def finite(self) -> bool:
        return math.isfinite(self.R)

    @property
    def support(self) -> float:
        return self.R if self.finite else float(self.r_samples[-1])

    @property
    def potential_at_surface(self) -> float:
        """Phi(R) = -M/R for the potential vanishing at infinity."""
        if not self.finite:
            raise PolytropeError("surface potential needs a finite vacuum radius")
        return -self.M / self.R

    def density(self, r):
        r = np.asarray(r, dtype=float)
        interp = self._z_interp
        if interp is None:
            interp = PchipInterpolator(self.r_samples, self.rho_samples ** (self.gamma - 1.0))
        z = np.where((r >= 0) & (r <= self.support), interp(np.clip(r, 0, self.support)), 0.0)
        return np.maximum(z, 0.0) ** (1.0 / (self.gamma - 1.0))

    def enclosed_mass(self, r):
        r = np.asarray(r, dtype=float)
        return np.interp(r, self.r_samples, self.m_samples, left=0.0, right=self.M)

    def radius_of_mass(self, m):
        """Inverse of the enclosed-mass curve (monotone interpolation)."""
        m = np.asarray(m, dtype=float)
        interp = PchipInterpolator(self.m_samples, self.r_samples)
        return interp(np.clip(m, 0.0, self.M))

    def to_text(self) -> str:
        lines = [
            f"# gamma = {self.gamma!r}",
            f"# mu = {self.mu!r}",
            f"# R = {self.R!r}",
            f"# M = {self.M!r}",
            f"# E = {self.E_total!r}",
            f"# quadrature_tol = {self.quadrature_tol!r}",
            "# r rho m",
        ]
        for r, rho, m in zip(self.r_samples, self.rho_samples, self.m_samples):
            lines.append(f"{float(r)!r} {float(rho)!r} {float(m)!r}")
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def from_text(cls, text: str) -> "PolytropeProfile":
        header = {}
        rows = []
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                if "=" in line:
                    key, value = line[1:].split("=", 1)
                    header[key.strip()] = float(value)
                continue
            rows.append([float(v) for v in line.split()])
        data = np.array(rows)
        return _build(
            header["gamma"],
            header["mu"],
            data[:, 0],
            data[:, 1],
            data[:, 2],
            header["R"],
            header["M"],
            header["E"],
            header["quadrature_tol"],
        )

    @classmethod
    def load(cls, path) -> "PolytropeProfile":
        return cls.from_text(Path(path).read_text())


def _build(gamma, mu, r, rho, m, R, M, E, qtol, internal=0.0, grav=0.0) -> PolytropeProfile:
    r = np.asarray(r, dtype=float)
    rho = np.asarray(rho, dtype=float)
    m = np.asarray(m, dtype=float)
    return PolytropeProfile(
        gamma=float(gamma),
        mu=float(mu),
        r_samples=r,
        rho_samples=rho,
        m_samples=m,
        R=float(R),
        M=float(M),
        E_total=float(E),
        quadrature_tol=float(qtol),
        internal=float(internal),
        gravitational=float(grav),
        _z_interp=PchipInterpolator(r, rho ** (gamma - 1.0)),
    )


def length_scale(gamma: float, mu: float) -> float:
    """Emden length sqrt(gamma mu^(gamma-2) / (4 pi (gamma-1)))."""
    return math.sqrt(gamma * mu ** (gamma - 2.0) / (4.0 * math.pi * (gamma - 1.0)))


def _center_series(gamma: float, mu: float, r0: float):
    # theta = 1 - xi^2/6 + n xi^4/120, rho = mu theta^n, z = mu^(gamma-1) theta
    n = 1.0 / (gamma - 1.0)
    A = length_scale(gamma, mu)
    xi = r0 / A
    theta = 1.0 - xi**2 / 6.0 + n * xi**4 / 120.0
    m = 4.0 * math.pi * A**3 * mu * (xi**3 / 3.0 - n * xi**5 / 30.0)
    z = mu ** (gamma - 1.0) * theta
    rho = mu * theta**n
    # internal and gravitational running integrals to leading order
    internal = 4.0 * math.pi * mu**gamma * r0**3 / 3.0
    grav = (4.0 * math.pi) ** 2 * mu**2 * r0**5 / 15.0
    return z, m, internal, grav, rho


def _sample_grid(R: float, n: int) -> np.ndarray:
    uniform = np.linspace(0.0, R, n)
    near_edge = R - R * np.logspace(-1.0, -6.0, 121)
    grid = np.union1d(uniform, near_edge)
    return grid[grid <= R]


def solve_profile(
    gamma: float,
    mu: float = 1.0,
    tol: float = 1e-10,
    r_max: float = DEFAULT_R_MAX,
    n_samples: int = 4001,
) -> PolytropeProfile:
    """Integrate the Lane-Emden ODE outward from the centre to the vacuum radius."""
    if not 1.0 < gamma < 2.0:
        raise ValueError(f"gamma must lie in (1, 2), got {gamma}")
    if mu <= 0:
        raise ValueError("central density must be positive")
    if tol <= 0:
        raise ValueError("tol must be positive")

    A = length_scale(gamma, mu)
    # series truncation error is O((r0/A)^6)
    r0 = A * min(1e-2, 0.1 * tol ** (1.0 / 6.0))
    z0, m0, i0, g0, _ = _center_series(gamma, mu, r0)
    n = 1.0 / (gamma - 1.0)
    slope = (gamma - 1.0) / gamma
    four_pi = 4.0 * math.pi

    def rhs(r, y):
        z, m = y[0], y[1]
        rho = max(z, 0.0) ** n
        return [
            -slope * m / r**2,
            four_pi * rho * r**2,
            four_pi * rho**gamma * r**2,
            four_pi * rho * r * m,
        ]

    def vacuum(r, y):
        return y[0]

    vacuum.terminal = True
    vacuum.direction = -1

    scale_z = mu ** (gamma - 1.0)
    scale_m = four_pi * A**3 * mu
    scale_e = scale_m**2 / A
    atol = np.array([scale_z, scale_m, scale_e, scale_e]) * tol * 1e-4
    sol = solve_ivp(
        rhs,
        (r0, r_max),
        [z0, m0, i0, g0],
        method="DOP853",
        rtol=tol,
        atol=atol,
        events=vacuum,
        dense_output=True,
    )
    if sol.status == -1:
        raise PolytropeError(f"Lane-Emden integration failed: {sol.message}")

    if sol.t_events[0].size:
        R = float(sol.t_events[0][0])
        r = _sample_grid(R, n_samples)
    else:
        R = math.inf
        edge = float(sol.t[-1])
        r = np.union1d(np.linspace(0.0, min(edge, 50.0 * A), n_samples), np.geomspace(r0, edge, n_samples))

    inner = r < r0
    y = np.empty((4, r.size))
    y[:, ~inner] = sol.sol(np.clip(r[~inner], r0, None))
    for k in np.flatnonzero(inner):
        y[:, k] = _center_series(gamma, mu, r[k])[:4]
    if math.isfinite(R):
        y[0, -1] = 0.0
    rho = np.maximum(y[0], 0.0) ** n
    rho[0] = mu
    m = np.maximum.accumulate(np.maximum(y[1], 0.0))
    m[0] = 0.0

    end = sol.sol(R if math.isfinite(R) else r[-1])
    M = float(end[1])
    internal = float(end[2]) / (gamma - 1.0)
    grav = float(end[3])
    E = internal - grav

    M_quad = four_pi * integrate(r, rho * r**2)
    qtol = max(abs(M_quad - M) / M, tol)
    if math.isfinite(R) and qtol > 1e-4:
        raise PolytropeError(f"mass quadrature mismatch {qtol:.2e} exceeds tolerance")
    return _build(gamma, mu, r, rho, m, R, M, E, qtol, internal, grav)


def scaled_profile(base: PolytropeProfile, beta: float, n_samples: int | None = None) -> PolytropeProfile:
    """Return beta^(2/(2-gamma)) rho_1(beta r), the Lane-Emden star of central density mu = beta^(2/(2-gamma))."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    if not base.finite:
        raise PolytropeError("scaling needs a profile with finite support")
    g = base.gamma
    amp = beta ** (2.0 / (2.0 - g))
    r = base.r_samples / beta
    rho = amp * base.rho_samples
    # mass ~ amp * beta^-3, energy ~ amp^2 * beta^-5
    m_fac = amp / beta**3
    e_fac = amp**2 / beta**5
    return _build(
        g,
        amp * base.mu,
        r,
        rho,
        base.m_samples * m_fac,
        base.R / beta,
        base.M * m_fac,
        base.E_total * e_fac,
        base.quadrature_tol,
        base.internal * e_fac,
        base.gravitational * e_fac,
    )


def chandrasekhar_mass(tol: float = 1e-10, mu: float = 1.0) -> float:
    """Mass of the gamma = 4/3 Lane-Emden star; independent of the central density."""
    return solve_profile(GAMMA_MASS_CRITICAL, mu, tol).M


def vacuum_exponent(profile: PolytropeProfile, window: float = 1e-2, decades: float = 1.0) -> float:
    """Fit p in rho ~ C (R - r)^p over ``decades`` of distance ending ``window * R`` from the edge."""
    if not profile.finite:
        raise PolytropeError("vacuum exponent needs a finite radius")
    d = profile.R - profile.r_samples
    hi = window * profile.R
    lo = hi * 10.0 ** (-decades)
    sel = (d >= lo) & (d <= hi) & (profile.rho_samples > 0)
    if sel.sum() < 5:
        raise PolytropeError("too few samples near the vacuum boundary")
    slope, _ = np.polyfit(np.log(d[sel]), np.log(profile.rho_samples[sel]), 1)
    return float(slope)
