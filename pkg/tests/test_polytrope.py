import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nsplab.polytrope import (
    GAMMA_MASS_CRITICAL,
    PolytropeError,
    PolytropeProfile,
    chandrasekhar_mass,
    length_scale,
    scaled_profile,
    solve_profile,
    vacuum_exponent,
)

# [DERIVED] mu = 1 stars from tests/oracle_lane_emden.py (theta form, Radau).
ORACLE = {
    1.25: (9.443798874402553, 5.668311558335505, 3.402206712538922),
    1.3: (4.974831808802215, 4.908823594903484, 0.9687382412907275),
    1.35: (3.5339691228929944, 4.406058829445807, -0.3662238073479112),
    1.5: (2.1268254615767637, 3.534129413476897, -1.9575451671749307),
}
# [DERIVED] gamma = 4/3 mass from the same oracle
M_CH_ORACLE = 4.554670802707238


@pytest.mark.parametrize("gamma", sorted(ORACLE))
def test_profile_matches_oracle(gamma):
    R, M, E = ORACLE[gamma]
    p = solve_profile(gamma, 1.0)
    assert p.R == pytest.approx(R, rel=1e-7)
    assert p.M == pytest.approx(M, rel=1e-7)
    assert p.E_total == pytest.approx(E, rel=1e-6)


def test_chandrasekhar_mass_matches_oracle():
    assert chandrasekhar_mass() == pytest.approx(M_CH_ORACLE, rel=1e-7)


def test_gamma43_energy_vanishes():
    p = solve_profile(GAMMA_MASS_CRITICAL, 1.0)
    assert abs(p.E_total) < 1e-7 * p.gravitational


@pytest.mark.parametrize("gamma", [1.25, 1.3, 1.35])
@pytest.mark.parametrize("mu", [0.5, 2.0, 4.0])
def test_scaling_laws(gamma, mu):
    # [PAPER] M ~ mu^((3g-4)/2), R ~ mu^((g-2)/2), E ~ mu^((5g-6)/2)
    base = solve_profile(gamma, 1.0)
    p = solve_profile(gamma, mu)
    assert p.M / base.M == pytest.approx(mu ** ((3 * gamma - 4) / 2), rel=1e-3)
    assert p.R / base.R == pytest.approx(mu ** ((gamma - 2) / 2), rel=1e-3)
    assert p.E_total / base.E_total == pytest.approx(mu ** ((5 * gamma - 6) / 2), rel=1e-3)


def test_scaled_profile_agrees_with_direct_solve():
    base = solve_profile(1.3, 1.0)
    beta = 1.7
    s = scaled_profile(base, beta)
    d = solve_profile(1.3, s.mu)
    assert s.R == pytest.approx(d.R, rel=1e-8)
    assert s.M == pytest.approx(d.M, rel=1e-8)
    assert s.E_total == pytest.approx(d.E_total, rel=1e-7)


def test_length_scale():
    # A = sqrt(gamma mu^(gamma-2) / (4 pi (gamma-1)))
    assert length_scale(1.5, 4.0) == pytest.approx(math.sqrt(1.5 * 4.0**-0.5 / (4 * math.pi * 0.5)))


@pytest.mark.parametrize("mu", [0.5, 1.0, 4.0])
def test_mass_critical_mu_independence(mu):
    assert solve_profile(GAMMA_MASS_CRITICAL, mu).M == pytest.approx(M_CH_ORACLE, rel=1e-6)


def test_gamma_65_has_no_vacuum():
    # the gamma = 6/5 star is the n = 5 Plummer-type solution with infinite support
    p = solve_profile(1.2, 1.0, r_max=200.0)
    assert not p.finite
    with pytest.raises(PolytropeError):
        _ = p.potential_at_surface


@pytest.mark.parametrize("gamma", [1.25, 4.0 / 3.0, 1.5])
def test_physical_vacuum_exponent(gamma):
    # [PAPER] rho ~ (R - r)^(1/(gamma-1)) at the boundary
    p = solve_profile(gamma, 1.0, n_samples=20001)
    assert vacuum_exponent(p) == pytest.approx(1.0 / (gamma - 1.0), rel=2e-2)


def test_text_round_trip(tmp_path):
    p = solve_profile(1.3, 2.0, n_samples=201)
    path = tmp_path / "star.txt"
    p.save(path)
    q = PolytropeProfile.load(path)
    assert q.gamma == p.gamma and q.mu == p.mu and q.R == p.R and q.M == p.M and q.E_total == p.E_total
    np.testing.assert_array_equal(q.r_samples, p.r_samples)
    np.testing.assert_array_equal(q.rho_samples, p.rho_samples)
    np.testing.assert_array_equal(q.m_samples, p.m_samples)


@pytest.mark.parametrize("bad", [dict(gamma=1.0), dict(gamma=2.0), dict(gamma=1.3, mu=0.0), dict(gamma=1.3, tol=0.0)])
def test_invalid_arguments(bad):
    with pytest.raises(ValueError):
        solve_profile(**bad)


@settings(max_examples=15, deadline=None)
@given(gamma=st.floats(1.22, 1.9), mu=st.floats(0.1, 10.0))
def test_profile_invariants(gamma, mu):
    p = solve_profile(gamma, mu, n_samples=801)
    assert p.finite
    assert p.rho_samples[0] == mu
    assert np.all(np.diff(p.rho_samples) <= 1e-12 * mu)
    assert np.all(np.diff(p.m_samples) >= 0)
    assert p.m_samples[-1] == pytest.approx(p.M, rel=1e-6)
    assert p.rho_samples[-1] == 0.0
    assert p.density(p.R * 1.01) == 0.0


@settings(max_examples=10, deadline=None)
@given(gamma=st.floats(1.22, 1.9), mu=st.floats(0.2, 5.0))
def test_scaling_law_property(gamma, mu):
    base = solve_profile(gamma, 1.0, n_samples=401)
    p = solve_profile(gamma, mu, n_samples=401)
    assert p.M / base.M == pytest.approx(mu ** ((3 * gamma - 4) / 2), rel=1e-6)
    assert p.R / base.R == pytest.approx(mu ** ((gamma - 2) / 2), rel=1e-6)
