"""Model library: potentials, pair correlation and pairwise friction tensors.

Shipped families are deliberately analytic conveniences.  Pair kernels are
functions of the minimum-image displacement on the periodic box and either
vanish (friction envelopes, pair potential) or become constant (pair
correlation) beyond a cutoff that must stay below half the box length, so
periodisation is exact.

The friction tensor of an N-particle configuration has the block structure

    Gamma_ii = I + sum_{l != i} Z1(r_i, r_l),      Gamma_ij = Z2(r_i, r_j),

symmetric and, for admissible parameter ranges, positive definite.  PD is
checked by sampling, never assumed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

V1_FAMILIES = {"zero": 0, "harmonic": 1, "double_well": 2, "cosine": 3}
V2_FAMILIES = {"zero": 0, "gaussian": 1}
G_FAMILIES = {"unity": 0, "step_exclusion": 1}
Z_FAMILIES = {"zero": 0, "iso_gaussian": 1, "long_gaussian": 2}

N_PACKED_PARAMS = 8


class KernelValidationError(ValueError):
    """Raised when a kernel spec fails validation; carries all messages."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


def _taper(s, r_on, rc):
    """C2 switch: 1 for s <= r_on, 0 for s >= rc, quintic in between."""
    if rc <= r_on:
        return np.where(s < rc, 1.0, 0.0)
    u = np.clip((s - r_on) / (rc - r_on), 0.0, 1.0)
    return 1.0 - u * u * u * (10.0 - 15.0 * u + 6.0 * u * u)


def _taper_ds(s, r_on, rc):
    if rc <= r_on:
        return np.zeros_like(s)
    u = np.clip((s - r_on) / (rc - r_on), 0.0, 1.0)
    return -30.0 * u * u * (1.0 - u) ** 2 / (rc - r_on)


def _gauss_env(s, amp, sigma, r_on, rc):
    return amp * np.exp(-0.5 * (s / sigma) ** 2) * _taper(s, r_on, rc)


def _gauss_env_ds(s, amp, sigma, r_on, rc):
    e = amp * np.exp(-0.5 * (s / sigma) ** 2)
    return e * (_taper_ds(s, r_on, rc) - (s / sigma**2) * _taper(s, r_on, rc))


def _resolve_center(params, box_lengths):
    c = params.get("center")
    if c is None:
        return tuple(0.5 * L for L in box_lengths)
    if np.isscalar(c):
        return (float(c),) * len(box_lengths)
    return tuple(float(x) for x in c)


@dataclass(frozen=True)
class KernelSet:
    """Resolved kernel models tied to a periodic box.

    ``v1``/``v2`` are potentials in energy units, ``g`` the dimensionless
    pair-distribution model and ``z1``/``z2`` the dimensionless symmetric
    friction tensors (scalar envelope times isotropic or longitudinal shape).
    """

    box_lengths: tuple
    v1: tuple   # (family, params dict)
    v2: tuple
    g: tuple
    z1: tuple
    z2: tuple

    # -- external potential -------------------------------------------------
    def v1_value(self, points, t=0.0):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        fam, p = self.v1
        if fam == "zero":
            return np.zeros(pts.shape[0])
        L = np.asarray(self.box_lengths)
        dc = pts - np.asarray(p["center"])
        dc -= L * np.round(dc / L)
        if fam == "harmonic":
            return 0.5 * p["k"] * np.sum(dc * dc, axis=1)
        if fam == "double_well":
            s2 = np.sum(dc * dc, axis=1)
            w2 = p["width"] ** 2
            return p["height"] * ((s2 - w2) / w2) ** 2
        if fam == "cosine":
            ang = 2.0 * np.pi * p["mode"] * dc / L
            return 0.5 * p["amp"] * np.sum(1.0 - np.cos(ang), axis=1)
        raise ValueError(fam)

    def v1_grad(self, points, t=0.0):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        fam, p = self.v1
        if fam == "zero":
            return np.zeros_like(pts)
        L = np.asarray(self.box_lengths)
        dc = pts - np.asarray(p["center"])
        dc -= L * np.round(dc / L)
        if fam == "harmonic":
            return p["k"] * dc
        if fam == "double_well":
            s2 = np.sum(dc * dc, axis=1, keepdims=True)
            w2 = p["width"] ** 2
            return p["height"] * 4.0 * (s2 - w2) / w2**2 * dc
        if fam == "cosine":
            ang = 2.0 * np.pi * p["mode"] * dc / L
            return p["amp"] * np.pi * p["mode"] / L * np.sin(ang)
        raise ValueError(fam)

    # -- pair kernels (arguments are min-image displacements, shape (m, d)) --
    def _sep(self, delta):
        d = np.atleast_2d(np.asarray(delta, dtype=float))
        return d, np.sqrt(np.sum(d * d, axis=1))

    def v2_value(self, delta):
        d, s = self._sep(delta)
        fam, p = self.v2
        if fam == "zero":
            return np.zeros_like(s)
        return _gauss_env(s, p["amp"], p["sigma"], p["r_on"], p["cutoff"])

    def v2_grad(self, delta):
        """Gradient of v2 with respect to the first argument."""
        d, s = self._sep(delta)
        fam, p = self.v2
        if fam == "zero":
            return np.zeros_like(d)
        ds = _gauss_env_ds(s, p["amp"], p["sigma"], p["r_on"], p["cutoff"])
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = np.where(s[:, None] > 0.0, d / np.where(s == 0.0, 1.0, s)[:, None], 0.0)
        return ds[:, None] * unit

    def g_value(self, delta):
        d, s = self._sep(delta)
        fam, p = self.g
        if fam == "unity":
            return np.ones_like(s)
        return np.where(s >= p["sigma_g"], 1.0, 0.0)

    def g_grad(self, delta):
        # unity is exact; the step family is differentiated a.e. (zero away
        # from the jump), which is what the comparison diagnostics use
        d, _ = self._sep(delta)
        return np.zeros_like(d)

    def _z_envelope(self, slot, s):
        fam, p = slot
        if fam == "zero":
            return np.zeros_like(s)
        env = _gauss_env(s, p["amp"], p["sigma"], p["r_on"], p["cutoff"])
        if fam == "long_gaussian":
            env = env * s * s / (s * s + p["reg"] ** 2)
        return env

    def z1_envelope(self, s):
        return self._z_envelope(self.z1, np.asarray(s, dtype=float))

    def z2_envelope(self, s):
        return self._z_envelope(self.z2, np.asarray(s, dtype=float))

    def _z_value(self, slot, delta):
        d, s = self._sep(delta)
        m, dim = d.shape
        fam, p = slot
        env = self._z_envelope(slot, s)
        out = np.zeros((m, dim, dim))
        if fam == "zero":
            return out
        if fam == "iso_gaussian":
            out[:, range(dim), range(dim)] = env[:, None]
            return out
        # longitudinal: env * unit x unit; env vanishes at s=0 so the kernel
        # extends continuously by zero there
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = np.where(s[:, None] > 0.0, d / np.where(s == 0.0, 1.0, s)[:, None], 0.0)
        return env[:, None, None] * unit[:, :, None] * unit[:, None, :]

    def z1_value(self, delta):
        return self._z_value(self.z1, delta)

    def z2_value(self, delta):
        return self._z_value(self.z2, delta)

    # -- metadata ------------------------------------------------------------
    def cutoffs(self):
        out = {}
        for name, slot in (("v2", self.v2), ("g", self.g), ("z1", self.z1), ("z2", self.z2)):
            fam, p = slot
            if fam in ("zero", "unity"):
                out[name] = 0.0
            elif name == "g":
                out[name] = p["sigma_g"]
            else:
                out[name] = p["cutoff"]
        return out

    def pack(self):
        """Numeric family codes and parameters for the compiled pair core."""
        codes = np.zeros(5, dtype=np.int32)
        params = np.zeros((5, N_PACKED_PARAMS))
        fam, p = self.v1
        codes[0] = V1_FAMILIES[fam]
        if fam == "harmonic":
            params[0, 0] = p["k"]
            params[0, 1:1 + len(p["center"])] = p["center"]
        elif fam == "double_well":
            params[0, 0] = p["height"]
            params[0, 1] = p["width"]
            params[0, 2:2 + len(p["center"])] = p["center"]
        elif fam == "cosine":
            params[0, 0] = p["amp"]
            params[0, 1] = p["mode"]
            params[0, 2:2 + len(p["center"])] = p["center"]
        fam, p = self.v2
        codes[1] = V2_FAMILIES[fam]
        if fam != "zero":
            params[1, :4] = (p["amp"], p["sigma"], p["r_on"], p["cutoff"])
        fam, p = self.g
        codes[2] = G_FAMILIES[fam]
        if fam == "step_exclusion":
            params[2, 0] = p["sigma_g"]
        for row, slot in ((3, self.z1), (4, self.z2)):
            fam, p = slot
            codes[row] = Z_FAMILIES[fam]
            if fam != "zero":
                params[row, :5] = (p["amp"], p["sigma"], p["r_on"], p["cutoff"], p.get("reg", 0.0))
        return codes, params


_DEFAULTS = {
    ("v1", "zero"): {},
    ("v1", "harmonic"): {"k": 1.0, "center": None},
    ("v1", "double_well"): {"height": 1.0, "width": 1.0, "center": None},
    ("v1", "cosine"): {"amp": 1.0, "mode": 1, "center": None},
    ("v2", "zero"): {},
    ("v2", "gaussian"): {"amp": 1.0, "sigma": 0.5, "cutoff": None, "r_on": None},
    ("g", "unity"): {},
    ("g", "step_exclusion"): {"sigma_g": 0.5},
    ("z1", "zero"): {},
    ("z1", "iso_gaussian"): {"amp": 0.2, "sigma": 0.5, "cutoff": None, "r_on": None},
    ("z1", "long_gaussian"): {"amp": 0.2, "sigma": 0.5, "cutoff": None, "r_on": None, "reg": None},
    ("z2", "zero"): {},
    ("z2", "iso_gaussian"): {"amp": 0.1, "sigma": 0.5, "cutoff": None, "r_on": None},
    ("z2", "long_gaussian"): {"amp": 0.1, "sigma": 0.5, "cutoff": None, "r_on": None, "reg": None},
}

_SLOT_FAMILIES = {
    "v1": V1_FAMILIES,
    "v2": V2_FAMILIES,
    "g": G_FAMILIES,
    "z1": Z_FAMILIES,
    "z2": Z_FAMILIES,
}

PRESETS = {
    "free": {},
}


def _resolve_slot(slot, spec, box_lengths, errors):
    spec = dict(spec or {})
    fam = spec.pop("family", None)
    if fam is None:
        fam = {"v1": "zero", "v2": "zero", "g": "unity", "z1": "zero", "z2": "zero"}[slot]
    if fam not in _SLOT_FAMILIES[slot]:
        errors.append(
            f"unknown {slot} family {fam!r}; available: "
            + ", ".join(sorted(_SLOT_FAMILIES[slot]))
        )
        return (fam, {})
    params = dict(_DEFAULTS[(slot, fam)])
    for key, val in spec.items():
        if key not in params:
            errors.append(f"unknown parameter {key!r} for {slot} family {fam!r}")
        else:
            params[key] = val
    if "center" in params:
        params["center"] = _resolve_center(params, box_lengths)
    if "sigma" in params:
        if params["cutoff"] is None:
            params["cutoff"] = 4.0 * params["sigma"]
        if params["r_on"] is None:
            params["r_on"] = 0.75 * params["cutoff"]
        if params.get("reg", 0.0) is None:
            params["reg"] = 0.5 * params["sigma"]
        if not params["sigma"] > 0:
            errors.append(f"{slot}: sigma must be positive")
        if not 0 < params["r_on"] <= params["cutoff"]:
            errors.append(f"{slot}: need 0 < r_on <= cutoff")
        cutoff = params["cutoff"]
        if cutoff >= 0.5 * min(box_lengths):
            errors.append(
                f"{slot}: cutoff {cutoff} must be < half the smallest box length "
                f"({0.5 * min(box_lengths)})"
            )
    if "sigma_g" in params and not 0 < params["sigma_g"] < 0.5 * min(box_lengths):
        errors.append(f"{slot}: sigma_g must lie in (0, L/2)")
    if "width" in params and not params["width"] > 0:
        errors.append(f"{slot}: width must be positive")
    return (fam, params)


def builtin_kernels(spec, box_lengths, *, validate_pd=True, n_check=8,
                    n_samples=32, seed=0):
    """Build a :class:`KernelSet` from a named spec.

    ``spec`` is either a preset name (``"free"``) or a mapping with optional
    ``v1``/``v2``/``g``/``z1``/``z2`` sub-mappings, each carrying ``family``
    plus numeric parameters.  Validation collects *all* problems: unknown
    families or parameters, cutoff versus box size, and (by default) a
    positive-definiteness sampling test of the assembled friction tensor.
    """
    if isinstance(spec, str):
        if spec not in PRESETS:
            raise KernelValidationError(
                [f"unknown kernel preset {spec!r}; available: " + ", ".join(sorted(PRESETS))]
            )
        spec = PRESETS[spec]
    box_lengths = tuple(float(L) for L in box_lengths)
    errors = []
    unknown = set(spec) - {"v1", "v2", "g", "z1", "z2"}
    if unknown:
        errors.append(f"unknown kernel slots: {sorted(unknown)}")
    slots = {
        s: _resolve_slot(s, spec.get(s), box_lengths, errors)
        for s in ("v1", "v2", "g", "z1", "z2")
    }
    if errors:
        raise KernelValidationError(errors)
    ks = KernelSet(box_lengths=box_lengths, **slots)
    if validate_pd and (ks.z1[0] != "zero" or ks.z2[0] != "zero"):
        rng = np.random.default_rng(seed)
        min_eig = _pd_sample(ks, n_check, n_samples, rng)
        if min_eig <= 0.0:
            raise KernelValidationError(
                [
                    "friction tensor loses positive definiteness on sampled "
                    f"configurations (min eigenvalue {min_eig:.3e}); reduce the "
                    "z1/z2 amplitudes"
                ]
            )
    return ks


def _pd_sample(kernels, n_particles, n_samples, rng):
    """Smallest Gamma eigenvalue over uniform and clustered configurations."""
    L = np.asarray(kernels.box_lengths)
    dim = len(L)
    cut = max(max(kernels.cutoffs().values()), 0.05 * min(L))
    worst = np.inf
    for k in range(n_samples):
        if k % 2 == 0:
            pos = rng.uniform(0.0, L, size=(n_particles, dim))
        else:
            center = rng.uniform(0.0, L, size=dim)
            pos = np.mod(center + rng.uniform(-cut, cut, size=(n_particles, dim)), L)
        worst = min(worst, check_positive_definite(assemble_gamma(pos, kernels)))
    return worst


# ---------------------------------------------------------------------------
# friction assembly

@dataclass
class AssembledFriction:
    """(N*d) x (N*d) symmetric friction matrix with its block layout."""

    n_particles: int
    dim: int
    matrix: np.ndarray

    def block(self, i, j):
        d = self.dim
        return self.matrix[i * d:(i + 1) * d, j * d:(j + 1) * d]


def assemble_gamma(positions, kernels: KernelSet) -> AssembledFriction:
    from ._core import pair_gamma

    pos = np.atleast_2d(np.asarray(positions, dtype=float))
    n, dim = pos.shape
    if dim != len(kernels.box_lengths):
        raise ValueError("positions dimension does not match kernel box")
    mat = pair_gamma(pos[None], kernels)[0]
    return AssembledFriction(n, dim, mat)


def check_positive_definite(gamma: AssembledFriction) -> float:
    """Smallest eigenvalue of the assembled friction matrix."""
    if not np.all(np.isfinite(gamma.matrix)):
        raise FloatingPointError("friction matrix has non-finite entries")
    return float(scipy.linalg.eigvalsh(gamma.matrix)[0])


def sample_coercivity(kernels: KernelSet, n_particles, n_samples, rng, *,
                      grid=None, rho=None):
    """Coercivity surrogate: min Gamma eigenvalue over sampled configurations.

    Configurations are drawn from ``rho`` on ``grid`` when given (categorical
    over cells plus uniform in-cell jitter), else uniformly in the box.
    Returns ``(delta_est, eigenvalues)``.
    """
    L = np.asarray(kernels.box_lengths)
    dim = len(L)
    eigs = np.empty(n_samples)
    if rho is not None:
        weights = np.clip(rho.values, 0.0, None)
        weights = weights / weights.sum()
        centers = grid.cell_centers()
        h = grid.spacings
    for k in range(n_samples):
        if rho is None:
            pos = rng.uniform(0.0, L, size=(n_particles, dim))
        else:
            idx = rng.choice(len(weights), size=n_particles, p=weights)
            pos = centers[idx] + rng.uniform(-0.5, 0.5, size=(n_particles, dim)) * h
        eigs[k] = check_positive_definite(assemble_gamma(pos, kernels))
    return float(eigs.min()), eigs


# ---------------------------------------------------------------------------
# grid tables and closures

class KernelTables:
    """Pair kernels sampled on all grid-cell pairs, with quadrature helpers.

    Memory scales as n_cells^2; intended for desk-scale grids (the
    constructor guards against accidentally huge tables).
    """

    MAX_CELLS = 4096

    def __init__(self, grid, kernels: KernelSet, t=0.0):
        if grid.size > self.MAX_CELLS:
            raise ValueError(
                f"kernel tables need n_cells <= {self.MAX_CELLS} (got {grid.size}); "
                "use a coarser grid"
            )
        if tuple(grid.lengths) != tuple(kernels.box_lengths):
            raise ValueError("grid box and kernel box differ")
        self.grid = grid
        self.kernels = kernels
        centers = grid.cell_centers()
        n, dim = centers.shape
        delta = grid.min_image(centers[:, None, :] - centers[None, :, :])
        flat = delta.reshape(n * n, dim)
        self.delta = delta
        self.G = kernels.g_value(flat).reshape(n, n)
        self.Z1 = kernels.z1_value(flat).reshape(n, n, dim, dim)
        self.Z2 = kernels.z2_value(flat).reshape(n, n, dim, dim)
        self.gradV2 = kernels.v2_grad(flat).reshape(n, n, dim)
        self.gradG = kernels.g_grad(flat).reshape(n, n, dim)
        self.V1 = kernels.v1_value(centers, t)
        self.gradV1 = kernels.v1_grad(centers, t)
        self.w = grid.cell_volume

    def mean_force(self, rho_values):
        """Convolution  C_i = sum_j w g_ij rho_j gradV2_ij  (shape (n, d))."""
        return self.w * np.einsum("ij,j,ijd->id", self.G, rho_values, self.gradV2)

    def z1_average(self, rho_values):
        """M_i = sum_j w g_ij rho_j Z1_ij : d x d matrix per cell."""
        return self.w * np.einsum("ij,j,ijab->iab", self.G, rho_values, self.Z1)

    def z2_coupling(self, rho_values):
        """Dense blocks  rho_i w g_ij Z2_ij  of the flux integral operator."""
        return self.w * np.einsum("i,ij,ijab->ijab", rho_values, self.G, self.Z2)

    def z1_scalar_average(self, rho_values, weights=None):
        """sum_j w g_ij z1env_ij rho_j with an optional extra 1/(N-1) shift."""
        env = self.kernels.z1_envelope(
            np.linalg.norm(self.delta, axis=-1).ravel()
        ).reshape(self.G.shape)
        return self.w * (self.G * env) @ rho_values


def rho2_closure(rho, tables: KernelTables):
    """Pair-density evaluator rho2(i, j) = rho_i rho_j g_ij (cell indices)."""
    vals = rho.values

    class _Rho2:
        def __call__(self, i, j):
            return vals[i] * vals[j] * tables.G[i, j]

        def matrix(self):
            return np.outer(vals, vals) * tables.G

    return _Rho2()


def rho3_closure(rho, tables: KernelTables):
    """Triplet-density evaluator using Kirkwood superposition.

    rho3(i, j, k) = rho_i rho_j rho_k g_ij g_ik g_jk.  Only used by the
    two-route comparison term; no attempt is made to materialise the full
    rank-3 tensor.
    """
    vals = rho.values
    G = tables.G

    class _Rho3:
        def __call__(self, i, j, k):
            return vals[i] * vals[j] * vals[k] * G[i, j] * G[i, k] * G[j, k]

    return _Rho3()
