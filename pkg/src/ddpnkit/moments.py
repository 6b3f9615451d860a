"""Moment fidelity of the Double Poisson mean/variance approximations.

A Double Poisson with mu0 and gamma0 = mu0/var0 is advertised as having mean
close to mu0 and variance close to var0. The two deviation functions below
measure how far the true moments drift from those targets:

    eps1(mu0, var0) = |E[Z] - mu0|
    eps2(mu0, var0) = |Var[Z] - var0|

expressed through the weight series s(mu, gamma, y) = h(y) exp(r(mu, gamma, y)).
All infinite sums are replaced by n_terms-term partial sums evaluated in log
space, so very small mu0 regions show the same truncation-driven growth that
motivates treating the approximations as trustworthy only away from zero.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from ddpnkit.distributions import dp_log_weight
from ddpnkit.errors import DomainError

DEFAULT_N_TERMS = 100


def mdf_epsilon(mu0: float, var0: float, n_terms: int = DEFAULT_N_TERMS) -> tuple[float, float]:
    """Mean and variance deviations (eps1, eps2) at the target (mu0, var0).

    With gamma0 = mu0/var0 and weights s_y summed over y = 0..n_terms-1:

        eps1 = |sum(s*(y-mu0)) / sum(s)|
        eps2 = |(d*sqrt(gamma0)*sum(s) - gamma0*sum(s*(y-mu0))^2)
                / (gamma0*sum(s)^2)|

    where d*sqrt(gamma0) = sum(s*(gamma0*(y-mu0)^2 - y)) + sum(s*(y-mu0)).
    Both vanish identically on the Poisson diagonal var0 = mu0.
    """
    if not (mu0 > 0.0 and np.isfinite(mu0)):
        raise DomainError(f"mu0 must be finite and positive, got {mu0}")
    if not (var0 > 0.0 and np.isfinite(var0)):
        raise DomainError(f"var0 must be finite and positive, got {var0}")
    if n_terms < 2:
        raise DomainError(f"n_terms must be at least 2, got {n_terms}")
    gamma0 = mu0 / var0
    ys = np.arange(n_terms)
    log_s = dp_log_weight(mu0, gamma0, ys)
    # the deviations are ratios of weighted sums, invariant to rescaling s
    w = np.exp(log_s - np.max(log_s))
    s0 = float(np.sum(w))
    s1 = float(np.sum(w * (ys - mu0)))
    d_scaled = float(np.sum(w * (gamma0 * (ys - mu0) ** 2 - ys))) + s1
    eps1 = abs(s1 / s0)
    eps2 = abs((d_scaled * s0 - gamma0 * s1 * s1) / (gamma0 * s0 * s0))
    return eps1, eps2


@dataclass(frozen=True)
class MomentGrid:
    """Deviation surfaces over a (mu0, var0) grid.

    eps1 and eps2 are arrays of shape (len(mu_values), len(var_values)).
    """

    mu_values: np.ndarray
    var_values: np.ndarray
    eps1: np.ndarray
    eps2: np.ndarray
    n_terms: int


def default_grid_axis(n_points: int = 25) -> np.ndarray:
    """Logarithmic axis from 0.01 to 100, shared by both grid dimensions."""
    return np.logspace(np.log10(0.01), np.log10(100.0), n_points)


def moments_grid(
    mu_values, var_values, n_terms: int = DEFAULT_N_TERMS
) -> MomentGrid:
    """Evaluate mdf_epsilon on the cross product of the two axes."""
    mu_values = np.asarray(mu_values, dtype=float)
    var_values = np.asarray(var_values, dtype=float)
    if mu_values.size == 0 or var_values.size == 0:
        raise DomainError("grid axes must be nonempty")
    eps1 = np.zeros((mu_values.size, var_values.size))
    eps2 = np.zeros_like(eps1)
    for i, mu0 in enumerate(mu_values):
        for j, var0 in enumerate(var_values):
            eps1[i, j], eps2[i, j] = mdf_epsilon(float(mu0), float(var0), n_terms)
    return MomentGrid(mu_values, var_values, eps1, eps2, n_terms)


def write_moment_grid_csv(grid: MomentGrid, path) -> None:
    """Write rows mu0,var0,eps1,eps2 in row-major grid order."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["mu0", "var0", "eps1", "eps2"])
        for i, mu0 in enumerate(grid.mu_values):
            for j, var0 in enumerate(grid.var_values):
                writer.writerow([repr(float(mu0)), repr(float(var0)),
                                 repr(float(grid.eps1[i, j])), repr(float(grid.eps2[i, j]))])
