"""Second-kind integral equation for the density flux, and the diffusion tensor.

The flux field ``a`` satisfies, cell by cell with midpoint quadrature,

    a(r) + [int dr' g(r,r') rho(r') Z1(r,r')] a(r)
         + rho(r) int dr' g(r,r') Z2(r,r') a(r')  =  rhs(r),

    rhs = -[grad rho + (grad U1) rho / kBT + rho int dr' rho' g grad U2 / kBT].

The local part of the right-hand side uses the exponentially fitted stencil
(:func:`overdamp.model.balanced_drift`), so a Boltzmann profile
rho ~ exp(-U1/kBT) with U2 = 0 gives rhs = 0 to rounding and hence a = 0.

With Z2 = 0 the equation inverts cell-locally and yields the density-dependent
diffusion tensor  D = (kBT/m gamma) [I + int g rho' Z1]^(-1); the first-order
(small-amplitude) expansion D0 [I - int g rho' Z1] is available for the
formulation comparison.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.linalg import lapack

from .kernels import KernelSet, KernelTables
from .model import ScalarField, VectorField, balanced_drift

COND_LIMIT = 1e12
MAX_DENSE_UNKNOWNS = 8192


class SolverConditioningError(RuntimeError):
    pass


def ensure_tables(grid, kernels, t=0.0) -> KernelTables:
    if isinstance(kernels, KernelTables):
        return kernels
    return KernelTables(grid, kernels, t)


@dataclass
class FredholmSystem:
    grid: object
    matrix: np.ndarray   # (n*d, n*d)
    rhs: np.ndarray      # (n*d,)


@dataclass
class FluxSolution:
    a: VectorField
    residual: float
    method: str = "direct"
    iterations: int = 0


def drift_rhs(rho: ScalarField, kernels, params, t=0.0) -> VectorField:
    """Right-hand side of the flux equation (the negated drift bracket)."""
    tables = ensure_tables(rho.grid, kernels, t)
    phi = tables.V1 / params.kBT
    bracket = balanced_drift(rho, phi).values
    conv = tables.mean_force(rho.values)
    bracket = bracket + rho.values[:, None] * conv / params.kBT
    return VectorField(rho.grid, -bracket)


def assemble(rho: ScalarField, kernels, params, t=0.0) -> FredholmSystem:
    """Dense matrix of the flux operator plus its right-hand side."""
    tables = ensure_tables(rho.grid, kernels, t)
    grid = rho.grid
    n, d = grid.size, grid.dim
    if n * d > MAX_DENSE_UNKNOWNS:
        raise ValueError(
            f"dense flux solve capped at {MAX_DENSE_UNKNOWNS} unknowns, got {n * d}"
        )
    A = np.zeros((n, d, n, d))
    idx = np.arange(n)
    eye = np.eye(d)
    m1 = tables.z1_average(rho.values)           # (n, d, d)
    A[idx, :, idx, :] = eye[None] + m1
    A += tables.z2_coupling(rho.values).transpose(0, 2, 1, 3)
    rhs = drift_rhs(rho, tables, params, t)
    return FredholmSystem(grid, A.reshape(n * d, n * d), rhs.values.ravel())


def _condition_estimate(matrix, lu, piv):
    anorm = np.linalg.norm(matrix, 1)
    rcond, info = lapack.dgecon(lu, anorm, norm="1")
    if info != 0 or not np.isfinite(rcond) or rcond == 0.0:
        return np.inf
    return 1.0 / rcond


def solve_a(rho: ScalarField, kernels, params, t=0.0, *,
            method="direct", fp_tol=1e-12, fp_max_iter=400) -> FluxSolution:
    """Solve for the flux field.

    ``method="direct"`` does a dense LU solve (the reference path);
    ``method="fixed_point"`` iterates the Neumann map a <- rhs - K a and
    falls back to the direct solve, with a warning, if the kernel part is
    not contractive.
    """
    tables = ensure_tables(rho.grid, kernels, t)
    system = assemble(rho, tables, params, t)
    grid = rho.grid
    rhs = system.rhs
    rhs_norm = np.linalg.norm(rhs)
    if method == "fixed_point":
        K = system.matrix - np.eye(len(rhs))
        a = rhs.copy()
        prev = np.inf
        for it in range(1, fp_max_iter + 1):
            a_next = rhs - K @ a
            diff = np.linalg.norm(a_next - a)
            a = a_next
            if diff <= fp_tol * max(rhs_norm, 1e-300):
                res = np.linalg.norm(system.matrix @ a - rhs) / max(rhs_norm, 1e-300)
                return FluxSolution(VectorField(grid, a), res, "fixed_point", it)
            if diff > 4.0 * prev and it > 4:
                warnings.warn(
                    "flux fixed-point iteration diverges (non-contractive kernel); "
                    "falling back to direct solve",
                    RuntimeWarning,
                )
                break
            prev = diff
        else:
            warnings.warn(
                "flux fixed-point iteration did not converge; falling back to "
                "direct solve",
                RuntimeWarning,
            )
    lu, piv = scipy.linalg.lu_factor(system.matrix)
    cond = _condition_estimate(system.matrix, lu, piv)
    if cond > COND_LIMIT:
        raise SolverConditioningError(
            f"flux operator condition estimate {cond:.2e} exceeds {COND_LIMIT:.0e}; "
            "reduce the z1/z2 kernel amplitudes"
        )
    a = scipy.linalg.lu_solve((lu, piv), rhs)
    res = np.linalg.norm(system.matrix @ a - rhs) / max(rhs_norm, 1e-300)
    return FluxSolution(VectorField(grid, a), res, "direct", 0)


@dataclass
class DiffusionTensorField:
    grid: object
    tensors: np.ndarray   # (n_cells, d, d), units length^2 / time

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.tensors)[:, 0].min())

    def max_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.tensors)[:, -1].max())


def diffusion_tensor(rho: ScalarField, kernels, params, t=0.0, *,
                     first_order=False) -> DiffusionTensorField:
    """Per-cell diffusion tensor D = D0 [I + int g rho' Z1]^(-1) (Z2 must vanish).

    With ``first_order=True`` returns the small-amplitude two-body form
    D0 [I - int g rho' Z1] instead of the exact inverse.
    """
    tables = ensure_tables(rho.grid, kernels, t)
    if tables.kernels.z2[0] != "zero":
        raise ValueError("diffusion tensor requires Z2 = 0 (use the flux solve otherwise)")
    grid = rho.grid
    eye = np.eye(grid.dim)
    m = tables.z1_average(rho.values)
    if first_order:
        return DiffusionTensorField(grid, params.D0 * (eye[None] - m))
    mats = eye[None] + m
    dets = np.linalg.det(mats)
    bad = np.where(np.abs(dets) < 1e-14)[0]
    if bad.size:
        raise np.linalg.LinAlgError(
            f"I + z1-average is singular at cell(s) {bad[:8].tolist()}"
        )
    return DiffusionTensorField(grid, params.D0 * np.linalg.inv(mats))
