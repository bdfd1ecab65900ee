"""Numpy fallback for the pairwise assembly kernels.

Broadcasts over (batch, N, N) displacement tables and reuses the vectorised
kernel-family evaluations from :mod:`overdamp.kernels`, so there is a single
source of truth for the family formulas.
"""

import numpy as np


def _min_image_table(pos, lengths):
    L = np.asarray(lengths)
    delta = pos[:, :, None, :] - pos[:, None, :, :]
    return delta - L * np.round(delta / L)


def pair_gamma(pos, kernels):
    nb, n, dim = pos.shape
    delta = _min_image_table(pos, kernels.box_lengths)
    flat = delta.reshape(-1, dim)
    z1 = kernels.z1_value(flat).reshape(nb, n, n, dim, dim)
    z2 = kernels.z2_value(flat).reshape(nb, n, n, dim, dim)
    idx = np.arange(n)
    z1[:, idx, idx] = 0.0
    z2[:, idx, idx] = 0.0
    gamma = np.transpose(z2, (0, 1, 3, 2, 4)).copy()
    diag = np.eye(dim) + z1.sum(axis=2)
    for i in range(n):
        gamma[:, i, :, i, :] = diag[:, i]
    return gamma.reshape(nb, n * dim, n * dim)


def pair_forces(pos, kernels, t=0.0):
    nb, n, dim = pos.shape
    forces = -kernels.v1_grad(pos.reshape(-1, dim), t).reshape(nb, n, dim)
    if kernels.v2[0] != "zero":
        delta = _min_image_table(pos, kernels.box_lengths)
        gv2 = kernels.v2_grad(delta.reshape(-1, dim)).reshape(nb, n, n, dim)
        idx = np.arange(n)
        gv2[:, idx, idx] = 0.0
        forces -= gv2.sum(axis=2)
    return forces
