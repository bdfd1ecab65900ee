"""Underdamped N-particle ensemble simulator with pairwise friction.

Integrates, per trajectory,

    dr_i = (p_i / m) dt
    dp_i = [ -gamma (Gamma p)_i + X_i ] dt + sqrt(2 gamma m kBT) (A xi)_i sqrt(dt)

with Euler-Maruyama, where ``Gamma`` is the assembled pairwise friction
matrix, ``A`` a symmetric factorisation of it (fluctuation-dissipation:
A A^T = Gamma) and ``X`` the conservative forces.  Cholesky is tried first
and the symmetric-eigendecomposition square root is the fallback.

Trajectories own counter-based RNG streams spawned from the master seed, so
results are a pure function of (config, seed) and independent of how the
trajectory loop is chunked over workers.
"""

from __future__ import annotations

import concurrent.futures
import os
from dataclasses import dataclass, field

import numpy as np

from ._core import pair_forces, pair_gamma
from .model import Grid, ScalarField
from .smoluchowski import NumericalAbort


def worker_count() -> int:
    env = os.environ.get("OVERDAMP_THREADS", "").strip()
    if env:
        return max(1, int(env))
    return 1


@dataclass
class ParticleEnsemble:
    box_lengths: tuple
    positions: np.ndarray          # (n_traj, N, d)
    momenta: np.ndarray            # (n_traj, N, d)
    master_seed: int
    generators: list = field(repr=False, default_factory=list)

    @property
    def n_traj(self) -> int:
        return self.positions.shape[0]

    @property
    def n_particles(self) -> int:
        return self.positions.shape[1]

    @property
    def dim(self) -> int:
        return self.positions.shape[2]

    @classmethod
    def create(cls, box_lengths, n_traj, n_particles, master_seed, params, *,
               rho=None, grid=None):
        """Fresh ensemble: Maxwellian momenta, positions uniform or from ``rho``.

        Each trajectory draws from its own stream spawned off the master
        seed, so creation is reproducible under any scheduling.
        """
        box_lengths = tuple(float(L) for L in box_lengths)
        dim = len(box_lengths)
        seqs = np.random.SeedSequence(master_seed).spawn(n_traj)
        gens = [np.random.Generator(np.random.Philox(s)) for s in seqs]
        pos = np.empty((n_traj, n_particles, dim))
        mom = np.empty((n_traj, n_particles, dim))
        sigma_p = np.sqrt(params.m * params.kBT)
        if rho is not None:
            weights = np.clip(rho.values, 0.0, None)
            weights = weights / weights.sum()
            centers = grid.cell_centers()
            h = grid.spacings
        for k, gen in enumerate(gens):
            if rho is None:
                pos[k] = gen.uniform(0.0, box_lengths, size=(n_particles, dim))
            else:
                idx = gen.choice(len(weights), size=n_particles, p=weights)
                pos[k] = centers[idx] + gen.uniform(-0.5, 0.5, size=(n_particles, dim)) * h
            mom[k] = sigma_p * gen.standard_normal((n_particles, dim))
        return cls(box_lengths, pos, mom, master_seed, gens)


def _noise_amplitude(gamma_mats):
    """A with A A^T = Gamma per batch entry; Cholesky, then eig-sqrt fallback."""
    try:
        return np.linalg.cholesky(gamma_mats)
    except np.linalg.LinAlgError:
        pass
    out = np.empty_like(gamma_mats)
    for k in range(gamma_mats.shape[0]):
        try:
            out[k] = np.linalg.cholesky(gamma_mats[k])
            continue
        except np.linalg.LinAlgError:
            evals, evecs = np.linalg.eigh(gamma_mats[k])
            if evals[0] < -1e-10 * max(evals[-1], 1.0):
                raise NumericalAbort(
                    f"friction matrix of trajectory {k} is not positive "
                    f"semidefinite (min eigenvalue {evals[0]:.3e})",
                    {"trajectory": k, "eigenvalues": evals},
                )
            out[k] = (evecs * np.sqrt(np.clip(evals, 0.0, None))) @ evecs.T
    return out


def step_em(ensemble: ParticleEnsemble, dt, kernels, params,
            traj_slice=slice(None), with_noise=True) -> ParticleEnsemble:
    """One Euler-Maruyama step (in place) for the selected trajectories.

    ``with_noise=False`` drops the stochastic kick (deterministic damped
    dynamics, used by the zero-temperature checks).
    """
    if dt > 0.1 / params.gamma + 1e-15:
        raise ValueError(
            f"dt={dt} too large: need dt <= 0.1/gamma = {0.1 / params.gamma}"
        )
    pos = ensemble.positions[traj_slice]
    mom = ensemble.momenta[traj_slice]
    nb, n, dim = pos.shape
    gens = ensemble.generators[traj_slice]

    gam = pair_gamma(pos, kernels)
    forces = pair_forces(pos, kernels)
    friction = (gam @ mom.reshape(nb, n * dim, 1)).reshape(nb, n, dim)
    mom += dt * (-params.gamma * friction + forces)
    if with_noise:
        amp = _noise_amplitude(gam)
        xi = np.empty((nb, n * dim))
        for k, gen in enumerate(gens):
            xi[k] = gen.standard_normal(n * dim)
        kick = (amp @ xi[:, :, None]).reshape(nb, n, dim)
        mom += np.sqrt(2.0 * params.gamma * params.m * params.kBT * dt) * kick
    pos += dt * mom / params.m
    if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(mom))):
        raise NumericalAbort("non-finite particle state", {"dt": dt})
    L = np.asarray(ensemble.box_lengths)
    np.mod(pos, L, out=pos)
    return ensemble


def simulate(ensemble: ParticleEnsemble, T_final, dt, kernels, params,
             snapshot_times=(), with_noise=True) -> list:
    """March the ensemble, returning ``(time, positions)`` snapshots.

    The trajectory loop may be chunked over ``OVERDAMP_THREADS`` workers;
    every trajectory consumes only its own RNG stream and writes only its
    own slice, so output is bit-identical for any worker count.
    """
    n_steps = max(1, int(round(T_final / dt)))
    dt = T_final / n_steps
    want = sorted({min(n_steps, max(0, int(round(t / dt)))) for t in snapshot_times})
    if not want:
        want = [n_steps]
    workers = worker_count()
    chunks = [slice(i, min(i + max(1, ensemble.n_traj // workers or 1), ensemble.n_traj))
              for i in range(0, ensemble.n_traj,
                             max(1, ensemble.n_traj // workers or 1))]
    snaps = {k: np.empty_like(ensemble.positions) for k in want}
    if 0 in snaps:
        snaps[0][:] = ensemble.positions

    def run_chunk(sl):
        for k in range(1, n_steps + 1):
            step_em(ensemble, dt, kernels, params, traj_slice=sl,
                    with_noise=with_noise)
            if k in snaps:
                snaps[k][sl] = ensemble.positions[sl]

    if workers == 1 or len(chunks) == 1:
        for sl in chunks:
            run_chunk(sl)
    else:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run_chunk, chunks))
    return [(k * dt, snaps[k]) for k in want]


def histogram_density(snapshots, grid: Grid, n_particles=None):
    """Empirical density on the grid, normalised to integrate to N.

    ``snapshots`` is a positions array or a list of them (or of ``(t, pos)``
    pairs); all samples are pooled.  Returns the estimate and its per-cell
    binomial standard error.
    """
    if isinstance(snapshots, np.ndarray):
        arrays = [snapshots]
    else:
        arrays = [s[1] if isinstance(s, tuple) else s for s in snapshots]
    pos = np.concatenate([a.reshape(-1, grid.dim) for a in arrays], axis=0)
    if n_particles is None:
        n_particles = arrays[0].shape[-2]
    idx = []
    for a in range(grid.dim):
        cells = np.floor(pos[:, a] / grid.spacings[a]).astype(int)
        idx.append(np.clip(cells, 0, grid.n_cells[a] - 1))
    flat = np.ravel_multi_index(idx, grid.n_cells)
    counts = np.bincount(flat, minlength=grid.size).astype(float)
    total = pos.shape[0]
    w = grid.cell_volume
    scale = n_particles / (total * w)
    rho_hat = ScalarField(grid, counts * scale)
    p = counts / total
    se = ScalarField(grid, np.sqrt(total * p * (1.0 - p)) * scale)
    return rho_hat, se
