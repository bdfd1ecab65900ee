"""Log-log power-law fits with bootstrap confidence intervals."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class PowerLawFit:
    exponent: float
    prefactor: float
    ci_low: float
    ci_high: float

    def as_dict(self):
        return {
            "exponent": self.exponent,
            "prefactor": self.prefactor,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
        }


def fit_power_law(x, y, n_boot=500, seed=0) -> PowerLawFit:
    """OLS fit of log y = q log x + c with a residual bootstrap CI for q.

    Near-exact power laws give residuals close to zero, so the interval
    collapses onto the point estimate; noisy data widens it.  Pass/fail
    decisions should compare the interval's lower bound.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2 or np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("power-law fit needs >= 2 strictly positive samples")
    lx, ly = np.log(x), np.log(y)
    design = np.column_stack([lx, np.ones_like(lx)])
    coef, *_ = np.linalg.lstsq(design, ly, rcond=None)
    fitted = design @ coef
    resid = ly - fitted
    rng = np.random.default_rng(seed)
    boots = np.empty(n_boot)
    for b in range(n_boot):
        sample = fitted + rng.choice(resid, size=resid.size, replace=True)
        boots[b] = np.linalg.lstsq(design, sample, rcond=None)[0][0]
    lo, hi = np.percentile(boots, [2.5, 97.5])
    return PowerLawFit(float(coef[0]), float(np.exp(coef[1])), float(lo), float(hi))


def pairwise_orders(x, y) -> np.ndarray:
    """Observed convergence orders between consecutive samples."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return np.diff(np.log(y)) / np.diff(np.log(x))
