"""Eigenfunction moments of the data distribution, with modulation shrinkage.

Moments are always carried over the *extended* basis (products of basis
members land there), in the basis enumeration order. The first entry is the
constant function, pinned to (1, variance 0, gamma 1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .basis import KIND_CONSTANT, KIND_COS, KIND_SIN, OU, TRUNCATED_BM
from .errors import DomainError, InvalidInputError, UnsupportedTargetError


@dataclass(frozen=True)
class MomentVector:
    """Estimated expectations of the extended eigenfunctions under the data.

    ``theta_hat`` are sample means, ``var_hat`` the variances of those means,
    ``gamma`` the shrinkage weights in [0, 1]; the working values are
    ``theta = gamma * theta_hat``.
    """

    theta_hat: np.ndarray
    var_hat: np.ndarray
    gamma: np.ndarray
    n_samples: int
    n_basis: int = 0  # leading entries that belong to the primary basis

    def __post_init__(self):
        if np.any(self.var_hat < 0):
            raise InvalidInputError("var_hat must be nonnegative")
        if np.any((self.gamma < 0) | (self.gamma > 1)):
            raise InvalidInputError("gamma must lie in [0, 1]")

    @property
    def theta(self):
        return self.gamma * self.theta_hat

    def to_dict(self):
        return {
            "theta_hat": self.theta_hat.tolist(),
            "var_hat": self.var_hat.tolist(),
            "gamma": self.gamma.tolist(),
            "n_samples": self.n_samples,
            "n_basis": self.n_basis,
        }

    @staticmethod
    def from_dict(d):
        return MomentVector(
            theta_hat=np.asarray(d["theta_hat"], dtype=float),
            var_hat=np.asarray(d["var_hat"], dtype=float),
            gamma=np.asarray(d["gamma"], dtype=float),
            n_samples=int(d["n_samples"]),
            n_basis=int(d.get("n_basis", 0)),
        )


def sample_moments(basis, data):
    """Sample means and their variances over the extended basis.

    theta_hat_k = mean phi_k(x_m); var_hat_k = (1/N^2) sum (phi_k(x_m) - theta_hat_k)^2.
    """
    data = np.atleast_2d(np.asarray(data, dtype=float))
    n = data.shape[0]
    if n < 2:
        raise InvalidInputError("need at least 2 data points")
    if basis.process == TRUNCATED_BM:
        bad = np.nonzero(np.any(np.abs(data) > np.pi + 1e-12, axis=1))[0]
        if bad.size:
            raise DomainError(f"data row {int(bad[0])} lies outside [-pi, pi]^d")
    vals = basis.eval_values(data, extended=True)  # (N, m)
    theta_hat = vals.mean(axis=0)
    var_hat = ((vals - theta_hat) ** 2).sum(axis=0) / (n * n)
    theta_hat[0], var_hat[0] = 1.0, 0.0  # constant function has no noise
    return MomentVector(
        theta_hat=theta_hat,
        var_hat=var_hat,
        gamma=np.ones_like(theta_hat),
        n_samples=n,
        n_basis=len(basis.functions),
    )


def modulation_shrink(m, shrink_extended=True):
    """Per-coordinate minimizer of the empirical modulation risk.

    With c_k = max(theta_hat_k^2 - var_hat_k, 0) the risk
    gamma^2 var + (1-gamma)^2 c is minimized at gamma = c / (var + c)
    (zero when both vanish). The constant entry is untouched; with
    ``shrink_extended=False`` only primary-basis entries are shrunk.
    """
    c = np.maximum(m.theta_hat**2 - m.var_hat, 0.0)
    denom = m.var_hat + c
    gamma = np.divide(c, denom, out=np.zeros_like(c), where=denom > 0)
    gamma[0] = 1.0
    if not shrink_extended and m.n_basis > 0:
        gamma[m.n_basis:] = 1.0
    return replace(m, gamma=gamma)


def analytic_moments(target, basis, gh_nodes=200):
    """Closed-form eigenfunction expectations of a Gaussian mixture.

    Trig moments come from the Gaussian characteristic function (valid on the
    torus by 2 pi periodicity); Hermite moments from Gauss-Hermite quadrature
    per mixture component. Variances are zero and gamma is 1 throughout.
    """
    w, mu, var = target.weights, target.means, target.variances
    funcs = basis.extended
    theta = np.empty(len(funcs))
    if basis.process == TRUNCATED_BM:
        for h, f in enumerate(funcs):
            if f.kind == KIND_CONSTANT:
                theta[h] = 1.0
                continue
            xi = np.array(f.index, dtype=float)
            phase = mu @ xi
            decay = np.exp(-0.5 * (var @ (xi * xi)))
            osc = np.cos(phase) if f.kind == KIND_COS else np.sin(phase)
            theta[h] = math.sqrt(2.0) * float(w @ (osc * decay))
    elif basis.process == OU:
        from .basis import hermite_eval

        nodes, weights = np.polynomial.hermite_e.hermegauss(gh_nodes)
        weights = weights / math.sqrt(2.0 * math.pi)
        for h, f in enumerate(funcs):
            if f.kind == KIND_CONSTANT:
                theta[h] = 1.0
                continue
            i = int(np.nonzero(f.index)[0][0])
            k = f.index[i]
            # E[phi_k(x_i)] per component via standardized nodes
            acc = 0.0
            for j in range(len(w)):
                x = mu[j, i] + math.sqrt(var[j, i]) * nodes
                acc += w[j] * float(hermite_eval(k, x)[:, k] @ weights)
            theta[h] = acc
    else:
        raise UnsupportedTargetError(f"no analytic moments for process {basis.process!r}")
    return MomentVector(
        theta_hat=theta,
        var_hat=np.zeros_like(theta),
        gamma=np.ones_like(theta),
        n_samples=0,
        n_basis=len(basis.functions),
    )
