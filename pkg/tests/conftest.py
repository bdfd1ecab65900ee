import numpy as np
import pytest

from overdamp.kernels import KernelTables, builtin_kernels
from overdamp.model import Grid, PhysicalParams, ScalarField

BOX = (10.0,)


@pytest.fixture
def grid64():
    return Grid(BOX, (64,))


@pytest.fixture
def grid16():
    return Grid(BOX, (16,))


@pytest.fixture
def params():
    return PhysicalParams(kBT=1.0, m=1.0, gamma=5.0, dim=1)


INTERACTING_SPEC = {
    "v1": {"family": "cosine", "amp": 1.2},
    "v2": {"family": "gaussian", "amp": 0.5, "sigma": 0.5},
    "z1": {"family": "iso_gaussian", "amp": 0.25, "sigma": 0.6},
    "z2": {"family": "iso_gaussian", "amp": 0.1, "sigma": 0.6},
}


@pytest.fixture
def interacting_kernels():
    return builtin_kernels(INTERACTING_SPEC, BOX)


@pytest.fixture
def interacting_tables(grid64, interacting_kernels):
    return KernelTables(grid64, interacting_kernels)


def boltzmann_density(grid, kernels, kBT=1.0, n_particles=50.0):
    vals = np.exp(-kernels.v1_value(grid.cell_centers()) / kBT)
    vals *= n_particles / (vals.sum() * grid.cell_volume)
    return ScalarField(grid, vals)


def wavy_density(grid, n_particles=50.0, amp=0.5):
    x = grid.cell_centers()
    L = np.asarray(grid.lengths)
    vals = 1.0 + amp * np.prod(np.sin(2.0 * np.pi * x / L), axis=1)
    vals *= n_particles / (vals.sum() * grid.cell_volume)
    return ScalarField(grid, vals)
