"""Overdamped-limit solvers for interacting Brownian particles with
pairwise hydrodynamic friction: flux (integral-equation) solves, density
stepping, a Hermite-coefficient kinetic solver, an underdamped ensemble
oracle, and cross-solver property studies."""

__version__ = "0.1.0"

from .model import (  # noqa: F401
    Grid,
    PhysicalParams,
    ScalarField,
    VectorField,
    divergence,
    gradient,
    integrate,
)
