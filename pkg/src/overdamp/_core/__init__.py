"""Pairwise interaction kernels: compiled core with a pure-numpy fallback.

The N-body friction/force assembly is the hot inner loop of the ensemble
simulator (it runs once per particle pair, per trajectory, per time step).
A Cython extension implements it with typed loops; if the extension is not
built, or ``OVERDAMP_NO_EXT`` is set, the numpy implementation is used.
Both backends produce the same numbers to rounding; ``benchmarks/`` times
them against each other.
"""

import os

import numpy as np

_FORCE_PY = os.environ.get("OVERDAMP_NO_EXT", "").strip() not in ("", "0")

try:
    if _FORCE_PY:
        raise ImportError("extension disabled via OVERDAMP_NO_EXT")
    from . import _pairs_cy as _ext
    HAVE_EXT = True
except ImportError:
    _ext = None
    HAVE_EXT = False

from . import _pairs_py as _py


def backend_name() -> str:
    return "cython" if HAVE_EXT else "python"


def pair_gamma(positions, kernels):
    """Friction matrices for a batch of configurations.

    ``positions`` has shape (n_batch, N, d); returns (n_batch, N*d, N*d).
    """
    pos = np.ascontiguousarray(positions, dtype=np.float64)
    if HAVE_EXT:
        codes, params = kernels.pack()
        return _ext.pair_gamma(pos, codes, params,
                               np.asarray(kernels.box_lengths, dtype=np.float64))
    return _py.pair_gamma(pos, kernels)


def pair_forces(positions, kernels, t=0.0):
    """Conservative forces -grad V1 - sum_j grad V2 for a batch; (n_batch, N, d)."""
    pos = np.ascontiguousarray(positions, dtype=np.float64)
    if HAVE_EXT:
        codes, params = kernels.pack()
        return _ext.pair_forces(pos, codes, params,
                                np.asarray(kernels.box_lengths, dtype=np.float64))
    return _py.pair_forces(pos, kernels, t)
