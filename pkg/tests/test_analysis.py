import json

import numpy as np
import pytest

from overdamp import analysis
from overdamp.fitting import fit_power_law, pairwise_orders
from overdamp.kernels import KernelTables, builtin_kernels
from overdamp.model import Grid, PhysicalParams, ScalarField, integrate

from conftest import BOX, INTERACTING_SPEC, boltzmann_density, wavy_density


def test_fit_power_law_recovers_exact_exponent():
    x = np.array([0.05, 0.1, 0.2, 0.4])
    y = 3.0 * x**2.0
    fit = fit_power_law(x, y)
    assert fit.exponent == pytest.approx(2.0, abs=1e-12)
    assert fit.prefactor == pytest.approx(3.0, rel=1e-10)
    assert fit.ci_high - fit.ci_low <= 1e-10


def test_fit_power_law_noisy_interval_contains_truth():
    rng = np.random.default_rng(0)
    x = np.geomspace(0.01, 1.0, 12)
    y = 2.0 * x**1.5 * np.exp(rng.normal(0, 0.05, x.size))
    fit = fit_power_law(x, y, seed=1)
    assert fit.ci_low <= 1.5 <= fit.ci_high


def test_fit_power_law_rejects_bad_input():
    with pytest.raises(ValueError):
        fit_power_law([0.1], [1.0])
    with pytest.raises(ValueError):
        fit_power_law([0.1, 0.2], [1.0, -1.0])


def test_pairwise_orders():
    x = np.array([0.1, 0.2, 0.4])
    y = x**2
    assert np.allclose(pairwise_orders(x, y), 2.0)


def test_quadratic_form_zero_vector(grid64, params, interacting_tables):
    rho = wavy_density(grid64)
    v = np.zeros((grid64.size, 1))
    form = analysis.pair_quadratic_form(v, rho.values, interacting_tables,
                                        integrate(rho))
    assert form == 0.0


def test_integral_pd_check_free_kernels(grid64, params):
    ks = builtin_kernels("free", BOX)
    rho = ScalarField(grid64, np.full(grid64.size, 5.0))
    report = analysis.integral_pd_check(rho, ks, params, n_samples=20, seed=0)
    assert report.passed
    assert report.extra["delta_est"] == pytest.approx(1.0, abs=1e-12)
    # with identity friction the ratio margin is exactly N_eff/(N_eff - 1)
    n_eff = report.extra["n_eff"]
    ratios = [r for _, r in report.metrics["ratios"]]
    assert min(ratios) == pytest.approx(n_eff / (n_eff - 1.0), rel=1e-10)


def test_integral_pd_check_interacting(grid64, params, interacting_kernels):
    rho = boltzmann_density(grid64, interacting_kernels)
    report = analysis.integral_pd_check(rho, interacting_kernels, params,
                                        n_samples=50, seed=3)
    assert report.passed
    assert report.extra["delta_est"] > 0.0
    assert min(r for _, r in report.metrics["ratios"]) >= 1.0 - 1e-8


def test_spectral_checks_free_ladder(params):
    grid = Grid(BOX, (32,))
    ks = builtin_kernels("free", BOX)
    rho = ScalarField(grid, np.full(grid.size, 1.5))
    report = analysis.spectral_checks(rho, ks, params, nmax=6, seed=1)
    assert report.passed
    mins = report.extra["per_degree_min_eigs"]
    # identity friction: the per-degree spectrum is exactly n * N/(N-1)
    n_eff = integrate(rho)
    want = np.arange(1, 7) * n_eff / (n_eff - 1.0)
    assert np.allclose(mins, want, rtol=1e-12)


def test_spectral_checks_interacting(grid64, params, interacting_kernels):
    rho = boltzmann_density(grid64, interacting_kernels)
    report = analysis.spectral_checks(rho, interacting_kernels, params,
                                      nmax=6, seed=2)
    assert report.passed
    assert report.checks["weighted_symmetry"]["value"] <= 1e-10
    assert report.extra["null_dimension"] == grid64.size


def test_epsilon_convergence_input_validation(grid64):
    with pytest.raises(ValueError, match="factor 4"):
        analysis.epsilon_convergence(grid64, "free", lambda x: np.ones(len(x)),
                                     [0.2, 0.15, 0.1], 0.1)


def test_report_json_round_trip_and_determinism(grid64, params, interacting_kernels):
    rho = boltzmann_density(grid64, interacting_kernels)
    r1 = analysis.integral_pd_check(rho, interacting_kernels, params,
                                    n_samples=10, seed=5)
    r2 = analysis.integral_pd_check(rho, interacting_kernels, params,
                                    n_samples=10, seed=5)
    assert r1.to_json() == r2.to_json()
    payload = json.loads(r1.to_json())
    assert payload["study"] == "integral_pd_check"
    assert set(payload) == {"study", "inputs_digest", "metrics", "fits",
                            "checks", "extra", "pass"}
    for chk in payload["checks"].values():
        assert {"value", "tolerance_name", "tolerance", "pass"} <= set(chk)


def test_tolerance_overrides_are_validated():
    with pytest.raises(KeyError, match="unknown tolerance"):
        analysis.merged_tolerances({"not_a_tolerance": 1.0})
    tol = analysis.merged_tolerances({"order_linear": 1.9})
    assert tol["order_linear"] == 1.9
    assert tol["order_tail"] == analysis.DEFAULT_TOLERANCES["order_tail"]


def test_formulation_comparison_study(grid64, params):
    spec = {
        "v2": {"family": "gaussian", "amp": 0.6, "sigma": 0.5},
        "z1": {"family": "iso_gaussian", "amp": 0.2, "sigma": 0.6},
    }

    def rho0_fn(points):
        d2 = np.sum((points - 5.0) ** 2, axis=1)
        vals = 0.05 + np.exp(-0.5 * d2)
        return vals * 3.0 / (vals.sum() * (10.0 / len(points)))

    report = analysis.formulation_comparison(grid64, spec, rho0_fn, params,
                                             T_final=0.02, lambdas=(0.05, 0.1, 0.2))
    assert report.passed
    assert report.fits["lambda_order"]["ci_low"] >= 1.8
