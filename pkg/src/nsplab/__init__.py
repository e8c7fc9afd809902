"""Radial viscous gaseous stars: Lane-Emden states, variational gates, free-boundary runs."""

from .polytrope import PolytropeProfile, chandrasekhar_mass, scaled_profile, solve_profile, vacuum_exponent
from .simulator import InitialData, SimConfig, StarState, ViscosityModel, init, run, step

__all__ = [
    "InitialData",
    "PolytropeProfile",
    "SimConfig",
    "StarState",
    "ViscosityModel",
    "chandrasekhar_mass",
    "init",
    "run",
    "scaled_profile",
    "solve_profile",
    "step",
    "vacuum_exponent",
]
