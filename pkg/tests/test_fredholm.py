import numpy as np
import pytest

from overdamp import fredholm
from overdamp.kernels import KernelTables, builtin_kernels
from overdamp.model import Grid, PhysicalParams, ScalarField

from conftest import BOX, boltzmann_density, wavy_density


def test_drift_rhs_uniform_free(grid64, params):
    ks = builtin_kernels("free", BOX)
    rho = ScalarField(grid64, np.full(grid64.size, 2.0))
    out = fredholm.drift_rhs(rho, ks, params)
    assert np.all(out.values == 0.0)


def test_drift_rhs_boltzmann_cancellation(grid64, params):
    ks = builtin_kernels({"v1": {"family": "cosine", "amp": 1.5}}, BOX)
    rho = boltzmann_density(grid64, ks, params.kBT)
    out = fredholm.drift_rhs(rho, ks, params)
    assert np.abs(out.values).max() <= 1e-12 * rho.values.max()


def test_drift_rhs_convergence_to_analytic_bracket():
    # non-equilibrium profile: the stencil should converge at second order
    L, kBT = 10.0, 1.0
    params = PhysicalParams(kBT=kBT, gamma=2.0)
    errs = []
    for n in (32, 64, 128):
        g = Grid((L,), (n,))
        ks = builtin_kernels({"v1": {"family": "cosine", "amp": 1.0}}, BOX)
        x = g.cell_centers()[:, 0]
        k0 = 2.0 * np.pi / L
        rho_vals = 2.0 + np.sin(k0 * x)
        v1 = 0.5 * (1.0 - np.cos(k0 * (x - 5.0)))
        dv1 = 0.5 * k0 * np.sin(k0 * (x - 5.0))
        exact = -(k0 * np.cos(k0 * x) + rho_vals * dv1 / kBT)
        got = fredholm.drift_rhs(ScalarField(g, rho_vals), ks, params).values[:, 0]
        errs.append(np.abs(got - exact).max())
    orders = -np.diff(np.log(errs)) / np.log(2.0)
    assert np.all(orders >= 1.9)


def test_mean_force_single_cell_delta(grid64):
    # one occupied cell: the convolution reduces to a single quadrature term
    ks = builtin_kernels({"v2": {"family": "gaussian", "amp": 0.8, "sigma": 0.6}}, BOX)
    tables = KernelTables(grid64, ks)
    rho = np.zeros(grid64.size)
    j0 = 20
    rho[j0] = 3.0
    conv = tables.mean_force(rho)
    centers = grid64.cell_centers()
    for i in (15, 22, 30):
        delta = grid64.min_image(centers[i] - centers[j0])[None, :]
        hand = 3.0 * ks.g_value(delta)[0] * ks.v2_grad(delta)[0] * grid64.cell_volume
        assert np.allclose(conv[i], hand, atol=1e-15)


def test_assemble_identity_when_frictionless(grid16, params):
    ks = builtin_kernels("free", BOX)
    rho = ScalarField(grid16, np.full(grid16.size, 1.5))
    system = fredholm.assemble(rho, ks, params)
    assert np.array_equal(system.matrix, np.eye(grid16.size))


def test_assemble_diagonal_matches_naive_loop(params):
    g = Grid(BOX, (8,))
    ks = builtin_kernels({"z1": {"family": "iso_gaussian", "amp": 0.3, "sigma": 0.7}}, BOX)
    tables = KernelTables(g, ks)
    rng = np.random.default_rng(4)
    rho_vals = rng.uniform(0.5, 1.5, g.size)
    system = fredholm.assemble(ScalarField(g, rho_vals), tables, params)
    centers = g.cell_centers()
    want = np.eye(8)
    for i in range(8):
        acc = 0.0
        for j in range(8):
            d = g.min_image(centers[i] - centers[j])[None, :]
            acc += g.cell_volume * ks.g_value(d)[0] * rho_vals[j] * \
                ks.z1_envelope(np.abs(d[0]))[0]
        want[i, i] += acc
    assert np.abs(system.matrix - want).max() <= 1e-14
    assert np.abs(system.matrix - np.diag(np.diag(system.matrix))).max() == 0.0


def test_assemble_matches_direct_operator_application(params):
    g = Grid(BOX, (8,))
    ks = builtin_kernels(
        {
            "z1": {"family": "iso_gaussian", "amp": 0.3, "sigma": 0.7},
            "z2": {"family": "iso_gaussian", "amp": 0.15, "sigma": 0.7},
            "g": {"family": "step_exclusion", "sigma_g": 0.4},
        },
        BOX,
    )
    tables = KernelTables(g, ks)
    rng = np.random.default_rng(9)
    rho_vals = rng.uniform(0.5, 1.5, g.size)
    system = fredholm.assemble(ScalarField(g, rho_vals), tables, params)
    centers = g.cell_centers()
    w = g.cell_volume
    for _ in range(5):
        v = rng.standard_normal(g.size)
        # direct quadrature application of the left-hand operator
        want = np.empty(g.size)
        for i in range(g.size):
            acc = v[i]
            for j in range(g.size):
                d = g.min_image(centers[i] - centers[j])[None, :]
                gij = ks.g_value(d)[0]
                acc += w * gij * rho_vals[j] * ks.z1_value(d)[0, 0, 0] * v[i]
                acc += rho_vals[i] * w * gij * ks.z2_value(d)[0, 0, 0] * v[j]
            want[i] = acc
        assert np.abs(system.matrix @ v - want).max() <= 1e-13 * np.abs(want).max()


def test_matrix_depends_linearly_on_density(grid16, params, interacting_kernels):
    tables = KernelTables(grid16, interacting_kernels)
    rng = np.random.default_rng(1)
    r1 = rng.uniform(0.2, 1.0, grid16.size)
    r2 = rng.uniform(0.2, 1.0, grid16.size)
    eye = np.eye(grid16.size)
    m1 = fredholm.assemble(ScalarField(grid16, r1), tables, params).matrix - eye
    m2 = fredholm.assemble(ScalarField(grid16, r2), tables, params).matrix - eye
    m12 = fredholm.assemble(ScalarField(grid16, r1 + r2), tables, params).matrix - eye
    assert np.abs(m12 - (m1 + m2)).max() <= 1e-13


def test_solve_trivial_and_boltzmann(grid64, params, interacting_tables):
    ks_free = builtin_kernels({"v1": {"family": "cosine", "amp": 1.2}}, BOX)
    rho = wavy_density(grid64)
    sol = fredholm.solve_a(rho, ks_free, params)
    rhs = fredholm.drift_rhs(rho, ks_free, params)
    assert np.array_equal(sol.a.values, rhs.values)

    rho_b = boltzmann_density(grid64, interacting_tables.kernels, params.kBT)
    # U2 = 0 for the neutrality statement: rebuild tables without pair potential
    spec = {
        "v1": {"family": "cosine", "amp": 1.2},
        "z1": {"family": "iso_gaussian", "amp": 0.25, "sigma": 0.6},
        "z2": {"family": "iso_gaussian", "amp": 0.1, "sigma": 0.6},
    }
    ks = builtin_kernels(spec, BOX)
    rho_b = boltzmann_density(grid64, ks, params.kBT)
    sol_b = fredholm.solve_a(rho_b, ks, params)
    assert np.linalg.norm(sol_b.a.values) <= 1e-10 * np.linalg.norm(rho_b.values)
    assert sol_b.residual <= 1e-10


def test_solve_matches_explicit_inverse(params):
    g = Grid(BOX, (8,))
    ks = builtin_kernels(
        {
            "v1": {"family": "harmonic", "k": 0.4},
            "z1": {"family": "iso_gaussian", "amp": 0.3, "sigma": 0.7},
            "z2": {"family": "iso_gaussian", "amp": 0.1, "sigma": 0.7},
        },
        BOX,
    )
    tables = KernelTables(g, ks)
    rng = np.random.default_rng(12)
    rho = ScalarField(g, rng.uniform(0.5, 2.0, g.size))
    system = fredholm.assemble(rho, tables, params)
    oracle = np.linalg.inv(system.matrix) @ system.rhs
    sol = fredholm.solve_a(rho, tables, params)
    assert np.abs(sol.a.values.ravel() - oracle).max() <= 1e-12 * np.abs(oracle).max()
    assert sol.residual <= 1e-10


def test_solution_linear_in_rhs(grid16, params, interacting_tables):
    import scipy.linalg

    tables = KernelTables(grid16, interacting_tables.kernels)
    rng = np.random.default_rng(3)
    rho = ScalarField(grid16, rng.uniform(0.5, 1.5, grid16.size))
    system = fredholm.assemble(rho, tables, params)
    b1 = rng.standard_normal(grid16.size)
    b2 = rng.standard_normal(grid16.size)
    x1 = scipy.linalg.solve(system.matrix, b1)
    x2 = scipy.linalg.solve(system.matrix, b2)
    x12 = scipy.linalg.solve(system.matrix, b1 + 2.0 * b2)
    assert np.abs(x12 - (x1 + 2.0 * x2)).max() <= 1e-11 * np.abs(x12).max()


def test_fixed_point_agrees_with_direct(grid64, params):
    # weak kernels: the Neumann iteration is contractive
    spec = {
        "v1": {"family": "cosine", "amp": 0.8},
        "z1": {"family": "iso_gaussian", "amp": 0.05, "sigma": 0.5},
        "z2": {"family": "iso_gaussian", "amp": 0.03, "sigma": 0.5},
    }
    ks = builtin_kernels(spec, BOX)
    tables = KernelTables(grid64, ks)
    rho = wavy_density(grid64, n_particles=8.0)
    direct = fredholm.solve_a(rho, tables, params)
    fixed = fredholm.solve_a(rho, tables, params, method="fixed_point")
    assert fixed.method == "fixed_point"
    assert fixed.iterations > 0
    assert np.abs(fixed.a.values - direct.a.values).max() <= 1e-8
    assert fixed.residual <= 1e-10


def test_fixed_point_divergence_falls_back(grid64, params, interacting_tables):
    rho = wavy_density(grid64, n_particles=60.0)
    with pytest.warns(RuntimeWarning, match="non-contractive|did not converge"):
        sol = fredholm.solve_a(rho, interacting_tables, params, method="fixed_point")
    assert sol.method == "direct"
    assert sol.residual <= 1e-10


def test_conditioning_guard(params):
    g = Grid(BOX, (8,))
    ks = builtin_kernels(
        {"z1": {"family": "iso_gaussian", "amp": 1.0, "sigma": 1.0, "cutoff": 4.0}},
        BOX, validate_pd=False,
    )
    tables = KernelTables(g, ks)
    x = g.cell_centers()[:, 0]
    profile = 1.0 + 0.9 * np.sin(2.0 * np.pi * x / BOX[0])
    m1 = tables.z1_average(profile)[:, 0, 0]
    # rescale so 1 + m1 touches zero in one cell but stays O(1) elsewhere
    rho = ScalarField(g, -profile / m1.max() * (1.0 + 1e-14))
    with pytest.raises(fredholm.SolverConditioningError, match="amplitude"):
        fredholm.solve_a(rho, tables, params)


def test_diffusion_tensor_free_value(grid64, params):
    ks = builtin_kernels("free", BOX)
    rho = ScalarField(grid64, np.full(grid64.size, 2.0))
    field = fredholm.diffusion_tensor(rho, ks, params)
    assert np.allclose(field.tensors, params.D0 * np.eye(1)[None], atol=1e-15)


def test_diffusion_tensor_scalar_example(grid64, params):
    # uniform density scaled so the friction average is exactly 0.25
    ks = builtin_kernels({"z1": {"family": "iso_gaussian", "amp": 0.3, "sigma": 0.6}}, BOX)
    tables = KernelTables(grid64, ks)
    base = tables.z1_average(np.ones(grid64.size))[:, 0, 0]
    rho = ScalarField(grid64, np.full(grid64.size, 0.25) / base)
    exact = fredholm.diffusion_tensor(rho, tables, params)
    first = fredholm.diffusion_tensor(rho, tables, params, first_order=True)
    assert np.allclose(exact.tensors[:, 0, 0], params.D0 / 1.25, rtol=1e-12)
    assert np.allclose(first.tensors[:, 0, 0], params.D0 * 0.75, rtol=1e-12)
    assert np.allclose(first.tensors[:, 0, 0] - exact.tensors[:, 0, 0],
                       -0.05 * params.D0, rtol=1e-9)


def test_diffusion_tensor_positive_definite_2d(params):
    box = (8.0, 8.0)
    g = Grid(box, (16, 16))
    ks = builtin_kernels(
        {"z1": {"family": "long_gaussian", "amp": 0.3, "sigma": 0.7}}, box
    )
    rng = np.random.default_rng(2)
    rho = ScalarField(g, rng.uniform(0.2, 1.0, g.size))
    p2 = PhysicalParams(kBT=1.0, m=1.0, gamma=5.0, dim=2)
    field = fredholm.diffusion_tensor(rho, ks, p2)
    assert field.min_eigenvalue() > 0.0
    sym = np.abs(field.tensors - np.transpose(field.tensors, (0, 2, 1))).max()
    assert sym <= 1e-14


def test_diffusion_tensor_consistency_identity(grid64, params, interacting_kernels):
    spec = {"z1": {"family": "iso_gaussian", "amp": 0.25, "sigma": 0.6}}
    ks = builtin_kernels(spec, BOX)
    tables = KernelTables(grid64, ks)
    rho = wavy_density(grid64)
    field = fredholm.diffusion_tensor(rho, tables, params)
    m = tables.z1_average(rho.values)
    prod = np.einsum("iab,ibc->iac", field.tensors, np.eye(1)[None] + m)
    assert np.abs(prod - params.D0 * np.eye(1)[None]).max() <= 1e-12 * params.D0


def test_diffusion_tensor_rejects_z2(grid64, params, interacting_tables):
    rho = wavy_density(grid64)
    with pytest.raises(ValueError, match="Z2"):
        fredholm.diffusion_tensor(rho, interacting_tables, params)


def test_diffusion_tensor_singular_cell_reported(params):
    g = Grid(BOX, (8,))
    ks = builtin_kernels(
        {"z1": {"family": "iso_gaussian", "amp": 1.0, "sigma": 1.0, "cutoff": 4.0}},
        BOX, validate_pd=False,
    )
    tables = KernelTables(g, ks)
    base = tables.z1_average(np.ones(g.size))[:, 0, 0]
    rho = ScalarField(g, -np.ones(g.size) / base[0])
    with pytest.raises(np.linalg.LinAlgError, match="cell"):
        fredholm.diffusion_tensor(rho, tables, params)
