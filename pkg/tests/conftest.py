"""Shared fixtures and numerical helpers for the test suite."""

import math

import numpy as np
import pytest

import eigenscore as es


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20260823)


def torus_quad_1d(n=4096):
    """Midpoint nodes and weights for integration over [-pi, pi]."""
    h = 2.0 * math.pi / n
    x = -math.pi + h * (np.arange(n) + 0.5)
    return x, np.full(n, h)


def energy_distance_pvalue(X, Y, rng, n_perm=200):
    """Permutation p-value of the two-sample energy statistic."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    Z = np.vstack([X, Y])
    n = len(X)
    D = np.sqrt(((Z[:, None, :] - Z[None, :, :]) ** 2).sum(-1))

    def stat(idx):
        a, b = idx[:n], idx[n:]
        return (2.0 * D[np.ix_(a, b)].mean()
                - D[np.ix_(a, a)].mean() - D[np.ix_(b, b)].mean())

    obs = stat(np.arange(len(Z)))
    hits = sum(stat(rng.permutation(len(Z))) >= obs for _ in range(n_perm))
    return obs, (hits + 1) / (n_perm + 1)


def fit_gaussian_ou(mean, var, order=2, n_tau=200, beta0=0.1, beta1=20.0):
    """Fit a 1D Gaussian with the OU/Hermite pipeline from analytic moments."""
    basis = es.hermite_univariate_basis(1, order)
    table = es.product_table(basis)
    gm = es.GaussianMixture(weights=np.array([1.0]),
                            means=np.array([[mean]]),
                            variances=np.array([[var]]))
    moments = es.analytic_moments(gm, basis)
    schedule = es.Schedule.vp(beta0, beta1)
    model = es.presolve_grid(basis, table, moments, schedule, n_times=n_tau)
    return model, gm, schedule
