"""Mass, energy and variational functionals of radial density/velocity pairs,
plus the admissibility gates for initial data.

All integrals are over the ball of radius ``a`` in 3D, written radially
(``dx = 4 pi r^2 dr``).  The gravitational energy is reported as a positive
magnitude ``G = 4 pi int 4 pi rho r m(r)/(4 pi) dr`` with ``m`` the enclosed mass.
"""

from __future__ import annotations

import math
import threading
from dataclasses import asdict, dataclass, field

import numpy as np

from .polytrope import GAMMA_ENERGY_CRITICAL, GAMMA_MASS_CRITICAL, PolytropeProfile, solve_profile
from .quadrature import cumulative, integrate

FOUR_PI = 4.0 * math.pi


@dataclass(frozen=True)
class RadialField:
    r_grid: np.ndarray
    rho: np.ndarray
    gamma: float
    u: np.ndarray | None = None
    a: float | None = None

    def __post_init__(self):
        r = np.asarray(self.r_grid, dtype=float)
        rho = np.asarray(self.rho, dtype=float)
        if r.shape != rho.shape:
            raise ValueError("r_grid and rho must have the same shape")
        if np.any(np.diff(r) <= 0) or r[0] < 0:
            raise ValueError("r_grid must be strictly increasing and non-negative")
        if np.any(rho < 0):
            raise ValueError("density must be non-negative")
        object.__setattr__(self, "r_grid", r)
        object.__setattr__(self, "rho", rho)
        u = np.zeros_like(r) if self.u is None else np.asarray(self.u, dtype=float)
        object.__setattr__(self, "u", u)
        if self.a is None:
            object.__setattr__(self, "a", float(r[-1]))

    @classmethod
    def from_profile(cls, profile: PolytropeProfile, u=None) -> "RadialField":
        r = profile.r_samples
        if callable(u):
            u = u(r)
        return cls(r, profile.rho_samples, profile.gamma, u, profile.support)

    def with_velocity(self, u) -> "RadialField":
        if callable(u):
            u = u(self.r_grid)
        return RadialField(self.r_grid, self.rho, self.gamma, u, self.a)

    def scaled(self, c: float) -> "RadialField":
        return RadialField(self.r_grid, c * self.rho, self.gamma, self.u, self.a)


@dataclass(frozen=True)
class EnergyBreakdown:
    kinetic: float
    internal: float
    gravitational: float
    E: float
    Q: float
    mass: float
    S_mu: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class GateDecision:
    name: str
    passed: bool
    margins: dict = field(default_factory=dict)
    constants: dict = field(default_factory=dict)

    def __bool__(self) -> bool:
        return self.passed

    def to_dict(self) -> dict:
        return {
            "gate": self.name,
            "decision": bool(self.passed),
            "margins": {k: float(v) for k, v in self.margins.items()},
            "constants": {k: float(v) for k, v in self.constants.items()},
        }


# -- basic integrals -------------------------------------------------------


def enclosed_mass(f: RadialField) -> np.ndarray:
    return FOUR_PI * cumulative(f.r_grid, f.rho * f.r_grid**2)


def mass(f: RadialField) -> float:
    return FOUR_PI * integrate(f.r_grid, f.rho * f.r_grid**2)


def pressure_integral(f: RadialField) -> float:
    """4 pi int rho^gamma r^2 dr."""
    return FOUR_PI * integrate(f.r_grid, f.rho**f.gamma * f.r_grid**2)


def kinetic_energy(f: RadialField) -> float:
    return FOUR_PI * integrate(f.r_grid, 0.5 * f.rho * f.u**2 * f.r_grid**2)


def gravitational_energy(f: RadialField) -> tuple[float, float]:
    """Magnitude of the gravitational energy, evaluated two independent ways.

    ``direct`` integrates 4 pi rho r m(r); ``identity`` integrates by parts to
    m(a)^2/(2a) + int m^2/(2 r^2) dr.
    """
    r = f.r_grid
    m = enclosed_mass(f)
    direct = integrate(r, FOUR_PI * f.rho * r * m)
    with np.errstate(divide="ignore", invalid="ignore"):
        tail = np.where(r > 0, m**2 / (2.0 * r**2), 0.0)
    identity = m[-1] ** 2 / (2.0 * f.a) + integrate(r, tail)
    return float(direct), float(identity)


def q_functional(f: RadialField) -> float:
    return 3.0 * pressure_integral(f) - gravitational_energy(f)[0]


def energy(f: RadialField, reference: PolytropeProfile | None = None) -> EnergyBreakdown:
    g = f.gamma
    p_int = pressure_integral(f)
    kin = kinetic_energy(f)
    internal = p_int / (g - 1.0)
    grav = gravitational_energy(f)[0]
    M = mass(f)
    s = None
    if reference is not None:
        s = internal - grav - reference.potential_at_surface * M
    return EnergyBreakdown(
        kinetic=kin,
        internal=internal,
        gravitational=grav,
        E=kin + internal - grav,
        Q=3.0 * p_int - grav,
        mass=M,
        S_mu=s,
    )


def s_mu(f: RadialField, reference: PolytropeProfile) -> float:
    """internal - gravitational - Phi_mu(R_mu) * mass, with Phi_mu(R_mu) = -M_mu/R_mu."""
    internal = pressure_integral(f) / (f.gamma - 1.0)
    return internal - gravitational_energy(f)[0] - reference.potential_at_surface * mass(f)


def mass_preserving_scaling(profile: PolytropeProfile, lam: float) -> RadialField:
    """lam^3 rho_mu(lam r), supported on [0, R/lam]."""
    if lam <= 0:
        raise ValueError("lambda must be positive")
    return RadialField(profile.r_samples / lam, lam**3 * profile.rho_samples, profile.gamma, None, profile.support / lam)


# -- reference data keyed by gamma ------------------------------------------


@dataclass(frozen=True)
class ReferenceData:
    gamma: float
    profile: PolytropeProfile
    l1: float


class ProfileStore:
    """gamma-keyed cache of the mu = 1 Lane-Emden star and l_1 = S_1(rho_1)."""

    def __init__(self, tol: float = 1e-10):
        self.tol = tol
        self._items: dict[float, ReferenceData] = {}
        self._lock = threading.Lock()

    def get(self, gamma: float) -> ReferenceData:
        key = float(gamma)
        item = self._items.get(key)
        if item is not None:
            return item
        with self._lock:
            item = self._items.get(key)
            if item is None:
                prof = solve_profile(key, 1.0, self.tol)
                item = ReferenceData(key, prof, s_mu(RadialField.from_profile(prof), prof))
                self._items[key] = item
        return item


STORE = ProfileStore()


def chandrasekhar_mass_cached() -> float:
    return STORE.get(GAMMA_MASS_CRITICAL).profile.M


# -- admissibility gates ---------------------------------------------------


def invariant_mass_bound(gamma: float, E: float, store: ProfileStore = STORE) -> float:
    """Upper mass bound of the invariant set for energy E (gamma strictly between 6/5 and 4/3)."""
    if E <= 0:
        return 0.0
    ref = store.get(gamma)
    g = gamma
    k = 5.0 * g - 6.0
    c = ((k / (2.0 * (g - 1.0))) ** (2.0 * (g - 1.0) / k)) * (((4.0 - 3.0 * g) / k) ** ((4.0 - 3.0 * g) / k))
    return c * ref.l1 ** (2.0 * (g - 1.0) / k) * ref.profile.R / ref.profile.M * E ** ((3.0 * g - 4.0) / k)


def _check_gamma(gamma: float, hi_inclusive: bool = True) -> None:
    ok = GAMMA_ENERGY_CRITICAL < gamma and (gamma <= GAMMA_MASS_CRITICAL + 1e-12 if hi_inclusive else gamma < GAMMA_MASS_CRITICAL)
    if not ok:
        raise ValueError(f"gamma = {gamma} outside the admissible range")


def invariant_set_check(f: RadialField, margin: float = 0.0, store: ProfileStore = STORE) -> GateDecision:
    """Membership test for the admissible initial data.

    gamma = 4/3: M < M_ch.  6/5 < gamma < 4/3: Q > 0 and M below the
    energy-dependent bound.  Both inequalities are strict, tightened by ``margin``.
    """
    g = f.gamma
    _check_gamma(g)
    M = mass(f)
    if abs(g - GAMMA_MASS_CRITICAL) < 1e-12:
        m_ch = store.get(GAMMA_MASS_CRITICAL).profile.M
        return GateDecision("critical_mass", (m_ch - M) > margin, {"mass": m_ch - M}, {"M": M, "M_ch": m_ch})
    e = energy(f)
    bound = invariant_mass_bound(g, e.E, store)
    ref = store.get(g)
    margins = {"Q": e.Q, "mass": bound - M}
    passed = e.Q > margin and bound - M > margin
    return GateDecision(
        "invariant_set",
        passed,
        margins,
        {"M": M, "E": e.E, "mass_bound": bound, "l1": ref.l1, "M1": ref.profile.M, "R1": ref.profile.R},
    )


def hls_ratio(f: RadialField) -> float:
    """Ratio of the double Coulomb integral to M^(2/3) * int rho^(4/3) dx."""
    M = mass(f)
    if M <= 0:
        raise ValueError("density vanishes identically")
    double = 2.0 * gravitational_energy(f)[0]
    l43 = FOUR_PI * integrate(f.r_grid, f.rho ** (4.0 / 3.0) * f.r_grid**2)
    return double / (M ** (2.0 / 3.0) * l43)


# -- comparison with an alternative critical-mass condition ----------------


def _kl_exponents(gamma: float) -> tuple[float, float]:
    return (5.0 * gamma - 6.0) / (3.0 * (gamma - 1.0)), 1.0 / (3.0 * (gamma - 1.0))


def kl_ratio(f: RadialField) -> float:
    """(G/4pi) / (M^p s^q) with s = int rho^gamma r^2 dr; scale and dilation invariant."""
    p, q = _kl_exponents(f.gamma)
    s = pressure_integral(f) / FOUR_PI
    g = gravitational_energy(f)[0] / FOUR_PI
    return g / (mass(f) ** p * s**q)


_B_CACHE: dict[tuple[float, int, int], float] = {}
_B_LOCK = threading.Lock()


def estimate_kl_constant(gamma: float, seed: int = 0, n_trials: int = 64, store: ProfileStore = STORE) -> float:
    """Largest observed kl_ratio over the Lane-Emden star and random trial densities.

    Any observed value is a lower bound on the sharp constant.
    """
    key = (float(gamma), int(seed), int(n_trials))
    with _B_LOCK:
        if key in _B_CACHE:
            return _B_CACHE[key]
    rng = np.random.default_rng(seed)
    best = kl_ratio(RadialField.from_profile(store.get(gamma).profile))
    for _ in range(n_trials):
        best = max(best, kl_ratio(random_trial_density(rng, gamma)))
    with _B_LOCK:
        _B_CACHE[key] = best
    return best


def kl_f(s, gamma: float, M: float, B: float):
    p, q = _kl_exponents(gamma)
    return s / (gamma - 1.0) - B * M**p * np.asarray(s) ** q


def kl_maximizer(gamma: float, M: float, B: float) -> tuple[float, float]:
    """(s*, f(s*)) in closed form."""
    g = gamma
    e = 3.0 * (g - 1.0) / (4.0 - 3.0 * g)
    k = (5.0 * g - 6.0) / (4.0 - 3.0 * g)
    s_star = (B / 3.0) ** (-e) * M ** (-k)
    return s_star, (4.0 - 3.0 * g) / (g - 1.0) * s_star


def kl_critical_mass(gamma: float, B: float, E_tilde: float) -> float:
    g = gamma
    e = 3.0 * (g - 1.0) / (4.0 - 3.0 * g)
    k = (4.0 - 3.0 * g) / (5.0 * g - 6.0)
    return ((4.0 - 3.0 * g) / (g - 1.0) * (B / 3.0) ** (-e)) ** k * (E_tilde / FOUR_PI) ** (-k)


def kl_gate(f: RadialField, B: float | None = None, seed: int = 0) -> GateDecision:
    """Evaluate M < M_c and the lower bound on Q implied by it.

    The chain compares Q/(4 pi) against
    B M^p s ((2(gamma-1))^e - (gamma-1)^e) (E~/4 pi)^e with e = (4-3 gamma)/(3(gamma-1)).
    """
    g = f.gamma
    _check_gamma(g, hi_inclusive=False)
    if B is None:
        B = estimate_kl_constant(g, seed)
    M = mass(f)
    p_int = pressure_integral(f)
    e_tilde = kinetic_energy(f) + p_int / (g - 1.0)
    m_c = kl_critical_mass(g, B, e_tilde)
    s_star, f_star = kl_maximizer(g, M, B)
    p, q = _kl_exponents(g)
    e = (4.0 - 3.0 * g) / (3.0 * (g - 1.0))
    s = p_int / FOUR_PI
    lhs = q_functional(f) / FOUR_PI
    rhs = B * M**p * s * ((2.0 * (g - 1.0)) ** e - (g - 1.0) ** e) * (e_tilde / FOUR_PI) ** e
    c0 = B * (2.0**e - 1.0)
    chain = lhs >= rhs
    return GateDecision(
        "kl_gate",
        bool(M < m_c and chain),
        {"mass": m_c - M, "chain": lhs - rhs},
        {
            "B": B,
            "M": M,
            "M_c": m_c,
            "E_tilde": e_tilde,
            "s_star": s_star,
            "f_s_star": f_star,
            "chain_lhs": lhs,
            "chain_rhs": rhs,
            "C0": c0,
            "C0_rhs": c0 * M**p * s**q,
            "below_critical_mass": float(M < m_c),
            "chain_holds": float(chain),
        },
    )


# -- randomized trial densities ---------------------------------------------


def random_trial_density(rng: np.random.Generator, gamma: float, n: int = 2001) -> RadialField:
    """A compactly supported radial density drawn from a few smooth families."""
    a = float(rng.uniform(0.5, 5.0))
    r = np.linspace(0.0, a, n)
    x = r / a
    kind = int(rng.integers(0, 4))
    k = float(rng.uniform(1.5, 6.0))
    if kind == 0:
        sigma = float(rng.uniform(0.1, 1.0))
        rho = np.exp(-0.5 * (x / sigma) ** 2) * (1.0 - x**2) ** k
    elif kind == 1:
        b = float(rng.uniform(1.0, 4.0))
        rho = (1.0 - x**b) ** k
    elif kind == 2:
        c = float(rng.uniform(0.2, 0.8))
        w = float(rng.uniform(0.05, 0.3))
        rho = (np.exp(-0.5 * ((x - c) / w) ** 2) + float(rng.uniform(0.0, 1.0))) * (1.0 - x**2) ** k
    else:
        coef = rng.uniform(0.0, 1.0, size=3)
        rho = (1.0 + coef[0] * x + coef[1] * x**2 + coef[2] * x**3) * (1.0 - x) ** k
    amp = float(rng.uniform(0.1, 10.0))
    return RadialField(r, amp * np.maximum(rho, 0.0), gamma, None, a)
