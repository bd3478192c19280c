"""Time-indexed quadratic score-matching systems and the presolved model.

For an energy model f = sum_k alpha_k phi_k over the active basis, the
score-matching objective at internal time t is (up to a constant)

    alpha' A_t alpha + 2 b_t' alpha,
    A_t[k,l] = sum_h ((lam_h - lam_k - lam_l)/2) e^{lam_h t} beta_h^{(k,l)} theta_h,
    b_t[k]   = lam_k e^{lam_k t} theta_k,

whose stationary point alpha = -A_t^{-1} b_t is solved with the diagonal
preconditioner Lambda = diag(-lam_k), A_t -> Lambda as t grows.
"""

from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse
from scipy.linalg import lapack

from .basis import TRUNCATED_BM, EigenBasis, basis_from_dict, basis_to_dict
from .errors import (
    CapacityError,
    IllConditionedError,
    DomainError,
    InvalidInputError,
    UnsupportedTargetError,
)
from .moments import MomentVector
from .process import Schedule, noise_at
from .targets import DomainMap

MODEL_FORMAT_VERSION = 1
CONDITION_LIMIT = 1e12
TIKHONOV_EPS = 1e-8
# Eigenvalues of the preconditioned matrix below SPECTRAL_FLOOR times the
# average standard error of the estimated moments are statistically
# indistinguishable from zero; the solver floors them instead of dividing by
# them (see solve_coefficients).
SPECTRAL_FLOOR = 3.0


@dataclass(frozen=True)
class QuadraticSystem:
    """One assembled system: matrix, linear term, active eigenvalues, time."""

    A: np.ndarray
    b: np.ndarray
    lambdas: np.ndarray  # eigenvalues of the active basis functions (< 0)
    t: float
    noise_scale: float = 0.0  # average standard error of the moments (0 = exact)


def _check_moments(basis, moments):
    if len(moments.theta_hat) != len(basis.extended):
        raise CapacityError(
            f"moments cover {len(moments.theta_hat)} functions, "
            f"extended basis has {len(basis.extended)}"
        )


def assemble_b(basis, moments, t):
    """Linear term b_t[k] = lam_k e^{lam_k t} theta_k over the active basis."""
    _check_moments(basis, moments)
    lam = basis.eigenvalues[1:]
    theta = moments.theta[basis.basis_to_extended[1:]]
    return lam * np.exp(lam * t) * theta


def assemble_A(basis, table, moments, t):
    """Closed-form quadratic matrix over the active basis, symmetrized."""
    _check_moments(basis, moments)
    n = basis.n_active
    lam = basis.eigenvalues
    lam_ext = basis.extended_eigenvalues
    theta = moments.theta
    A = np.zeros((n, n))
    for k in range(1, n + 1):
        for l in range(k, n + 1):
            if table.is_gamma_zero(k, l):
                continue
            h, beta = table.get(k, l)
            val = float(
                (((lam_ext[h] - lam[k] - lam[l]) / 2.0) * np.exp(lam_ext[h] * t) * beta)
                @ theta[h]
            )
            A[k - 1, l - 1] = val
            A[l - 1, k - 1] = val
    return (A + A.T) / 2.0


class SystemAssembler:
    """Precomputed sparse assembly: A_t flattened = S @ exp(lam_ext * t)."""

    def __init__(self, basis, table, moments):
        _check_moments(basis, moments)
        self.basis = basis
        n = basis.n_active
        lam = basis.eigenvalues
        self.lam_ext = basis.extended_eigenvalues
        theta = moments.theta
        rows, cols, data = [], [], []
        for k in range(1, n + 1):
            for l in range(k, n + 1):
                if table.is_gamma_zero(k, l):
                    continue
                h, beta = table.get(k, l)
                coef = ((self.lam_ext[h] - lam[k] - lam[l]) / 2.0) * beta * theta[h]
                keep = np.nonzero(coef)[0]
                for hk, ck in zip(h[keep], coef[keep]):
                    rows.append((k - 1) * n + (l - 1))
                    cols.append(hk)
                    data.append(ck)
                    if k != l:
                        rows.append((l - 1) * n + (k - 1))
                        cols.append(hk)
                        data.append(ck)
        self.S = scipy.sparse.csr_matrix(
            (data, (rows, cols)), shape=(n * n, len(self.lam_ext))
        )
        self.n = n
        self.lam_active = lam[1:]
        self.theta_active = theta[basis.basis_to_extended[1:]]
        self.noise_scale = float(np.sqrt(np.mean(moments.var_hat)))

    def system(self, t):
        A = (self.S @ np.exp(self.lam_ext * t)).reshape(self.n, self.n)
        A = (A + A.T) / 2.0
        b = self.lam_active * np.exp(self.lam_active * t) * self.theta_active
        return QuadraticSystem(A=A, b=b, lambdas=self.lam_active, t=float(t),
                               noise_scale=self.noise_scale)


def _preconditioned_solve(A, b, lambdas):
    scale = -lambdas  # Lambda diagonal, positive
    P = A / scale[:, None]
    rhs = -b / scale
    with warnings.catch_warnings():
        # singular factors are expected here and handled by the caller's
        # condition-number check and Tikhonov fallback
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(P, check_finite=False)
    anorm = np.linalg.norm(P, 1)
    rcond, _ = lapack.dgecon(lu, anorm, norm="1")
    cond = np.inf if rcond == 0 else 1.0 / rcond
    alpha = scipy.linalg.lu_solve((lu, piv), rhs, check_finite=False)
    return alpha, cond


def _spectral_solve(A, b, lambdas, delta):
    """Solve via the symmetric preconditioning Lambda^{-1/2} A Lambda^{-1/2}.

    Eigenvalues of the preconditioned matrix with magnitude below ``delta``
    carry no statistically significant signal: dividing by them amplifies
    moment noise without bound. They are floored at ``delta`` (negative ones
    are first reflected to their magnitude), which leaves well-determined
    directions untouched and suppresses the noise-dominated ones.
    """
    scale = np.sqrt(-lambdas)
    P = A / np.outer(scale, scale)
    P = (P + P.T) / 2.0
    w, V = scipy.linalg.eigh(P, check_finite=False)
    w_eff = np.maximum(np.abs(w), delta)
    floored = bool(np.any(w < delta))
    rhs = V.T @ (-b / scale)
    alpha = (V @ (rhs / w_eff)) / scale
    cond = float(w_eff.max() / w_eff.min())
    A_eff = (V * w_eff) @ V.T * np.outer(scale, scale)
    return alpha, cond, floored, A_eff


@dataclass(frozen=True)
class NodeSolve:
    """Result of solving one node: coefficients plus solve diagnostics."""

    alpha: np.ndarray
    condition: float
    regularized: bool
    residual: float


def solve_coefficients(system):
    """Minimizer of alpha'A alpha + 2 b'alpha via the preconditioned system.

    Returns ``(alpha, condition_estimate)``. For systems assembled from
    estimated moments (``noise_scale > 0``) the eigenvalues of the
    preconditioned matrix are floored at ``SPECTRAL_FLOOR * noise_scale``, so
    directions the data cannot resolve are damped instead of amplified; exact
    (analytic-moment) systems are solved exactly. If an exact solve has a
    condition estimate above 1e12 a Tikhonov fallback ``A + eps Lambda`` is
    attempted; if that is also singular an IllConditionedError is raised.
    """
    node = solve_node(system)
    return node.alpha, node.condition


def solve_coefficients_detailed(system):
    node = solve_node(system)
    return node.alpha, node.condition, node.regularized


def solve_node(system):
    if not np.allclose(system.A, system.A.T, atol=1e-10):
        raise InvalidInputError("system matrix must be symmetric")
    if system.noise_scale > 0.0:
        delta = SPECTRAL_FLOOR * system.noise_scale
        alpha, cond, floored, A_eff = _spectral_solve(
            system.A, system.b, system.lambdas, delta
        )
        residual = float(np.max(np.abs(
            (A_eff @ alpha + system.b) / (-system.lambdas))))
        return NodeSolve(alpha, cond, floored, residual)
    alpha, cond = _preconditioned_solve(system.A, system.b, system.lambdas)
    regularized = False
    A_solved = system.A
    if not np.isfinite(cond) or cond > CONDITION_LIMIT or not np.all(np.isfinite(alpha)):
        A_solved = system.A + TIKHONOV_EPS * np.diag(-system.lambdas)
        alpha, cond = _preconditioned_solve(A_solved, system.b, system.lambdas)
        regularized = True
        if not np.isfinite(cond) or cond > CONDITION_LIMIT or not np.all(np.isfinite(alpha)):
            raise IllConditionedError(
                f"preconditioned system is singular (condition ~ {cond:.3e})", cond
            )
    residual = float(np.max(np.abs(
        (A_solved @ alpha + system.b) / (-system.lambdas))))
    return NodeSolve(alpha, cond, regularized, residual)


def system_residual(system, alpha):
    """Preconditioned residual max-norm |Lambda^{-1}(A alpha + b)|_inf."""
    return float(np.max(np.abs((system.A @ alpha + system.b) / (-system.lambdas))))


# ---------------------------------------------------------------------------
# Presolved score model
# ---------------------------------------------------------------------------

@dataclass
class ScoreModel:
    """Basis + time grid of solved coefficients; evaluates score/energy/Laplacian."""

    basis: EigenBasis
    schedule: Schedule
    grid: np.ndarray
    alphas: np.ndarray  # (len(grid), n_active)
    domain_map: DomainMap
    diagnostics: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    @property
    def process(self):
        return self.basis.process

    def internal_time(self, tau):
        return noise_at(self.schedule, tau)[2]


def presolve_grid(basis, table, moments, schedule, n_times=1000,
                  domain_map=None, provenance=None):
    """Solve the system on an even tau grid covering [0, 1].

    Stores per-node condition estimates, preconditioned residuals and
    Tikhonov flags in the model diagnostics.
    """
    if n_times < 2:
        raise InvalidInputError("n_times must be >= 2")
    assembler = SystemAssembler(basis, table, moments)
    grid = np.linspace(0.0, 1.0, n_times)
    alphas = np.empty((n_times, basis.n_active))
    conds = np.empty(n_times)
    residuals = np.empty(n_times)
    regs = np.zeros(n_times, dtype=bool)
    for g, tau in enumerate(grid):
        t = noise_at(schedule, tau)[2]
        system = assembler.system(t)
        try:
            node = solve_node(system)
        except IllConditionedError as exc:
            raise IllConditionedError(
                f"solve failed at tau={tau:.6f}: {exc}", exc.condition_estimate
            ) from exc
        alphas[g] = node.alpha
        conds[g] = node.condition
        residuals[g] = node.residual
        regs[g] = node.regularized
    if domain_map is None:
        domain_map = DomainMap.identity(basis.dimension)
    return ScoreModel(
        basis=basis,
        schedule=schedule,
        grid=grid,
        alphas=alphas,
        domain_map=domain_map,
        diagnostics={
            "condition": conds,
            "residual": residuals,
            "regularized": regs,
        },
        provenance=dict(provenance or {}),
    )


def alpha_at(model, tau):
    """Coefficients at tau by linear interpolation between grid nodes."""
    grid = model.grid
    tau = float(tau)
    if tau < grid[0] - 1e-12 or tau > grid[-1] + 1e-12:
        raise InvalidInputError(f"tau={tau} outside the presolved range "
                                f"[{grid[0]}, {grid[-1]}]")
    tau = min(max(tau, grid[0]), grid[-1])
    j = int(np.searchsorted(grid, tau, side="right")) - 1
    if j >= len(grid) - 1:
        return model.alphas[-1].copy()
    w = (tau - grid[j]) / (grid[j + 1] - grid[j])
    return (1.0 - w) * model.alphas[j] + w * model.alphas[j + 1]


def _check_domain(model, X):
    if model.process == TRUNCATED_BM and np.any(np.abs(X) > math.pi + 1e-9):
        raise DomainError("point outside the torus [-pi, pi]^d")


def model_eval_batch(model, X, tau, check_domain=True, dtype=None):
    """Energy, score and Laplacian of the fitted model at points X (N, d)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if check_domain:
        _check_domain(model, X)
    alpha = alpha_at(model, tau)
    return model.basis.weighted_eval(X, alpha, dtype=dtype)


def score_eval(model, x, tau):
    return model_eval_batch(model, x, tau)[1][0]


def energy_eval(model, x, tau):
    return float(model_eval_batch(model, x, tau)[0][0])


def laplacian_eval(model, x, tau):
    return float(model_eval_batch(model, x, tau)[2][0])


# ---------------------------------------------------------------------------
# Score-matching loss against a ground-truth reference
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadratureSpec:
    """How to evaluate the weighted L2 loss: tensor trapezoid or Monte Carlo."""

    kind: str = "trapezoid"
    n_nodes: int = 4096  # per dimension
    lower: float = -math.pi
    upper: float = math.pi
    n_samples: int = 1_000_000
    seed: int = 0


def trapezoid_grid(spec, dimension):
    """Nodes (N, d) and weights (N,) of the tensor trapezoid rule."""
    x = np.linspace(spec.lower, spec.upper, spec.n_nodes)
    w = np.full(spec.n_nodes, x[1] - x[0])
    w[0] *= 0.5
    w[-1] *= 0.5
    if dimension == 1:
        return x[:, None], w
    grids = np.meshgrid(*([x] * dimension), indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=1)
    W = w
    for _ in range(dimension - 1):
        W = np.multiply.outer(W, w)
    return nodes, W.ravel()


def sm_loss(model, tau, reference, quadrature=QuadratureSpec()):
    """Weighted L2 distance between the model score and the true relative score.

    Computes integral of |s_model - grad log(rho_t/pi)|^2 rho_t, either on a
    trapezoid grid or by Monte Carlo against rho_t.
    """
    if reference is None or not hasattr(reference, "relative_score"):
        raise UnsupportedTargetError("no ground-truth score reference available")
    d = model.basis.dimension
    if quadrature.kind == "trapezoid":
        nodes, weights = trapezoid_grid(quadrature, d)
        diff = model_eval_batch(model, nodes, tau, check_domain=False)[1]
        diff = diff - reference.relative_score(nodes, tau)
        dens = reference.pdf(nodes, tau)
        return float(weights @ (dens * (diff * diff).sum(axis=1)))
    if quadrature.kind == "mc":
        if not hasattr(reference, "sample_marginal"):
            raise UnsupportedTargetError("reference cannot sample its marginal")
        rng = np.random.default_rng(quadrature.seed)
        X = reference.sample_marginal(quadrature.n_samples, tau, rng)
        diff = model_eval_batch(model, X, tau, check_domain=False)[1]
        diff = diff - reference.relative_score(X, tau)
        return float(np.mean((diff * diff).sum(axis=1)))
    raise InvalidInputError(f"unknown quadrature kind {quadrature.kind!r}")


# ---------------------------------------------------------------------------
# Model serialization
# ---------------------------------------------------------------------------

def model_to_dict(model):
    return {
        "version": MODEL_FORMAT_VERSION,
        "basis": basis_to_dict(model.basis),
        "schedule": model.schedule.to_dict(),
        "domain_map": model.domain_map.to_dict(),
        "grid": model.grid.tolist(),
        "alphas": model.alphas.tolist(),
        "diagnostics": {
            "condition": model.diagnostics["condition"].tolist(),
            "residual": model.diagnostics["residual"].tolist(),
            "regularized": model.diagnostics["regularized"].astype(int).tolist(),
        },
        "provenance": model.provenance,
    }


def model_from_dict(d):
    if d.get("version") != MODEL_FORMAT_VERSION:
        raise InvalidInputError(f"unsupported model version {d.get('version')!r}")
    return ScoreModel(
        basis=basis_from_dict(d["basis"]),
        schedule=Schedule.from_dict(d["schedule"]),
        grid=np.asarray(d["grid"], dtype=float),
        alphas=np.asarray(d["alphas"], dtype=float),
        domain_map=DomainMap.from_dict(d["domain_map"]),
        diagnostics={
            "condition": np.asarray(d["diagnostics"]["condition"], dtype=float),
            "residual": np.asarray(d["diagnostics"]["residual"], dtype=float),
            "regularized": np.asarray(d["diagnostics"]["regularized"], dtype=bool),
        },
        provenance=dict(d.get("provenance", {})),
    )


def save_model(model, path):
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh)


def load_model(path):
    with open(path) as fh:
        return model_from_dict(json.load(fh))


def dataset_hash(points):
    return hashlib.sha256(np.ascontiguousarray(points, dtype=float).tobytes()).hexdigest()[:16]
