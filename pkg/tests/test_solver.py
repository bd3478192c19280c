"""Quadratic system assembly, preconditioned solves, and the presolved model."""

import math

import numpy as np
import pytest

import eigenscore as es
from eigenscore.solver import (
    QuadratureSpec,
    dataset_hash,
    solve_coefficients_detailed,
    solve_node,
    system_residual,
    trapezoid_grid,
)
from conftest import fit_gaussian_ou


def _uniform_moments(basis):
    """Moments of the invariant measure: only the constant is nonzero."""
    theta = np.zeros(len(basis.extended))
    theta[0] = 1.0
    return es.MomentVector(theta_hat=theta, var_hat=np.zeros_like(theta),
                           gamma=np.ones_like(theta), n_samples=0,
                           n_basis=len(basis.functions))


# ---------------------------------------------------------------------------
# Assembly
# ---------------------------------------------------------------------------

def test_invariant_measure_gives_diagonal_system():
    """With data distributed as the invariant measure, A_t = Lambda, b_t = 0."""
    basis = es.trig_basis_1d(3)
    table = es.product_table(basis)
    m = _uniform_moments(basis)
    for t in (0.0, 0.3, 2.0):
        A = es.assemble_A(basis, table, m, t)
        b = es.assemble_b(basis, m, t)
        np.testing.assert_allclose(A, np.diag(-basis.eigenvalues[1:]), atol=1e-14)
        np.testing.assert_allclose(b, 0.0, atol=1e-14)


def test_assembly_matches_monte_carlo_oracle():
    """A and b match forward-simulated expectations of the carre-du-champ.

    A_t[k,l] = E_{rho_0}[P_t <grad phi_k, grad phi_l>] and
    b_t[k] = lam_k E[phi_k(X_t)], estimated by exact forward simulation.
    """
    basis = es.trig_basis_1d(3)  # 6 active functions
    table = es.product_table(basis)
    gm = es.GaussianMixture(weights=np.array([1.0]),
                            means=np.array([[0.7]]),
                            variances=np.array([[0.16]]))
    moments = es.analytic_moments(gm, basis)
    sched = es.Schedule.ve(0.1, 2.0)
    tau = 0.6
    t = es.noise_at(sched, tau)[2]
    A = es.assemble_A(basis, table, moments, t)
    b = es.assemble_b(basis, moments, t)

    rng = np.random.default_rng(11)
    n_mc = 300_000
    state = es.ProcessState(process=es.TRUNCATED_BM, dimension=1)
    x0 = es.wrap_torus(es.sample_gaussian_mixture(gm, n_mc, rng))
    xt = es.sample_forward(state, sched, x0, tau, rng)
    _, grads, _ = basis.eval_batch(xt)
    G = grads[:, 0, 1:]  # (N, n_active) gradients on the 1D torus
    vals = basis.eval_values(xt)[:, 1:]
    lam = basis.eigenvalues[1:]
    n = basis.n_active
    for k in range(n):
        for l in range(n):
            prod = G[:, k] * G[:, l]
            se = prod.std() / math.sqrt(n_mc)
            assert abs(A[k, l] - prod.mean()) < 4 * se + 1e-12
    for k in range(n):
        se = abs(lam[k]) * vals[:, k].std() / math.sqrt(n_mc)
        assert abs(b[k] - lam[k] * vals[:, k].mean()) < 4 * se + 1e-12


def test_system_assembler_matches_direct_assembly():
    basis = es.trig_basis_1d(5)
    table = es.product_table(basis)
    rng = np.random.default_rng(12)
    data = es.wrap_torus(0.5 + 0.4 * rng.standard_normal((300, 1)))
    m = es.modulation_shrink(es.sample_moments(basis, data))
    assembler = es.SystemAssembler(basis, table, m)
    for t in (0.0, 0.05, 0.7, 3.0):
        sys_t = assembler.system(t)
        np.testing.assert_allclose(sys_t.A, es.assemble_A(basis, table, m, t), atol=1e-12)
        np.testing.assert_allclose(sys_t.b, es.assemble_b(basis, m, t), atol=1e-12)
        np.testing.assert_allclose(sys_t.A, sys_t.A.T, atol=1e-14)


def test_hermite_assembler_matches_direct_assembly():
    basis = es.hermite_univariate_basis(2, 3)
    table = es.product_table(basis)
    gm = es.GaussianMixture(weights=np.array([1.0]),
                            means=np.array([[0.2, -0.4]]),
                            variances=np.array([[0.5, 0.8]]))
    m = es.analytic_moments(gm, basis)
    assembler = es.SystemAssembler(basis, table, m)
    for t in (0.0, 0.4, 2.0):
        sys_t = assembler.system(t)
        np.testing.assert_allclose(sys_t.A, es.assemble_A(basis, table, m, t), atol=1e-12)
        np.testing.assert_allclose(sys_t.b, es.assemble_b(basis, m, t), atol=1e-12)


def test_large_time_limit_recovers_preconditioner():
    basis = es.trig_basis_1d(4)
    table = es.product_table(basis)
    rng = np.random.default_rng(13)
    data = es.wrap_torus(rng.standard_normal((200, 1)))
    m = es.sample_moments(basis, data)
    A = es.assemble_A(basis, table, m, 50.0)
    np.testing.assert_allclose(A, np.diag(-basis.eigenvalues[1:]), atol=1e-10)


# ---------------------------------------------------------------------------
# Solving
# ---------------------------------------------------------------------------

def test_solve_matches_numpy_solve_for_exact_moments():
    basis = es.trig_basis_1d(4)
    table = es.product_table(basis)
    gm = es.GaussianMixture(weights=np.array([1.0]), means=np.array([[0.3]]),
                            variances=np.array([[0.25]]))
    m = es.analytic_moments(gm, basis)
    system = es.SystemAssembler(basis, table, m).system(0.1)
    assert system.noise_scale == 0.0
    alpha, cond = es.solve_coefficients(system)
    oracle = np.linalg.solve(system.A, -system.b)
    np.testing.assert_allclose(alpha, oracle, rtol=1e-9, atol=1e-12)
    assert cond >= 1.0
    assert system_residual(system, alpha) < 1e-10


def test_noise_floor_inactive_when_spectrum_is_healthy():
    # large t: the preconditioned matrix approaches the identity, all
    # eigenvalues sit far above the noise floor, so the floored solve
    # coincides with the exact one
    basis = es.trig_basis_1d(4)
    table = es.product_table(basis)
    rng = np.random.default_rng(14)
    data = es.wrap_torus(0.3 + 0.5 * rng.standard_normal((500, 1)))
    m = es.modulation_shrink(es.sample_moments(basis, data))
    system = es.SystemAssembler(basis, table, m).system(1.5)
    assert system.noise_scale > 0.0
    node = solve_node(system)
    assert not node.regularized
    oracle = np.linalg.solve(system.A, -system.b)
    np.testing.assert_allclose(node.alpha, oracle, rtol=1e-8, atol=1e-12)
    assert node.residual < 1e-10


def test_noise_floor_damps_unresolved_directions():
    # an estimated system whose preconditioned matrix has eigenvalues inside
    # the noise band: the floored solve is flagged and strictly tamer than
    # dividing by the raw near-zero eigenvalues
    basis = es.trig_basis_1d(8)
    table = es.product_table(basis)
    gm = es.bart_simpson()
    rng = np.random.default_rng(21)
    data = es.wrap_torus(es.sample_gaussian_mixture(gm, 400, rng))
    m = es.modulation_shrink(es.sample_moments(basis, data))
    system = es.SystemAssembler(basis, table, m).system(5e-5)
    node = solve_node(system)
    assert node.regularized
    assert node.residual < 1e-10
    exact = np.linalg.solve(system.A, -system.b)
    assert np.linalg.norm(node.alpha) < np.linalg.norm(exact)


def test_solve_rejects_asymmetric_matrix():
    system = es.QuadraticSystem(A=np.array([[1.0, 2.0], [0.0, 1.0]]),
                                b=np.zeros(2), lambdas=-np.ones(2), t=0.0)
    with pytest.raises(es.InvalidInputError):
        es.solve_coefficients(system)


def test_singular_system_raises_ill_conditioned():
    # so badly scaled that even the Tikhonov fallback stays singular
    system = es.QuadraticSystem(A=np.diag([1e20, 0.0]), b=np.ones(2),
                                lambdas=-np.ones(2), t=0.0)
    with pytest.raises(es.IllConditionedError):
        es.solve_coefficients(system)


def test_zero_matrix_recovered_by_tikhonov():
    system = es.QuadraticSystem(A=np.zeros((2, 2)), b=np.ones(2),
                                lambdas=-np.ones(2), t=0.0)
    alpha, cond, regularized = solve_coefficients_detailed(system)
    assert regularized and np.all(np.isfinite(alpha))


def test_tikhonov_fallback_flags_regularization():
    # rank-1 matrix: singular, but solvable once eps*Lambda is added
    A = np.outer(np.ones(2), np.ones(2))
    system = es.QuadraticSystem(A=A, b=np.array([1.0, 1.0]),
                                lambdas=-np.ones(2), t=0.0)
    alpha, cond, regularized = solve_coefficients_detailed(system)
    assert regularized
    assert np.all(np.isfinite(alpha))


# ---------------------------------------------------------------------------
# Gaussian closed form (OU, Hermite order 2)
# ---------------------------------------------------------------------------

def test_gaussian_closed_form_coefficients():
    mean, var = 0.7, 0.36
    model, _, schedule = fit_gaussian_ou(mean, var, n_tau=41)
    for tau in np.linspace(0, 1, 41):
        t = es.noise_at(schedule, tau)[2]
        m_t = math.exp(-t) * mean
        v_t = math.exp(-2 * t) * var + (1 - math.exp(-2 * t))
        alpha = es.alpha_at(model, tau)
        assert abs(alpha[0] - m_t / v_t) < 1e-10
        assert abs(alpha[1] - (v_t - 1) / (math.sqrt(2) * v_t)) < 1e-10


def test_gaussian_relative_score_pointwise():
    mean, var = -0.4, 2.25
    model, gm, schedule = fit_gaussian_ou(mean, var, n_tau=11)
    tau = 0.3
    t = es.noise_at(schedule, tau)[2]
    m_t = math.exp(-t) * mean
    v_t = math.exp(-2 * t) * var + (1 - math.exp(-2 * t))
    x = np.linspace(-3, 3, 13)[:, None]
    score = es.model_eval_batch(model, x, tau)[1][:, 0]
    truth = -(x[:, 0] - m_t) / v_t + x[:, 0]  # grad log(rho_t/pi)
    np.testing.assert_allclose(score, truth, atol=1e-9)


# ---------------------------------------------------------------------------
# Presolved model, interpolation, serialization
# ---------------------------------------------------------------------------

def _small_torus_model(n_times=50):
    basis = es.trig_basis_1d(5)
    table = es.product_table(basis)
    rng = np.random.default_rng(15)
    data = es.wrap_torus(0.6 * rng.standard_normal((400, 1)))
    m = es.modulation_shrink(es.sample_moments(basis, data))
    sched = es.Schedule.ve(0.01, 50.0)
    return es.presolve_grid(basis, table, m, sched, n_times=n_times)


def test_presolve_grid_diagnostics():
    model = _small_torus_model()
    assert model.grid[0] == 0.0 and model.grid[-1] == 1.0
    assert model.alphas.shape == (50, model.basis.n_active)
    assert np.all(model.diagnostics["residual"] < 1e-8)
    assert np.all(model.diagnostics["condition"] >= 1.0)
    # the noise floor may engage at small tau where the system is stiff, but
    # never once the forward process has smoothed the marginal
    regs = model.diagnostics["regularized"]
    assert regs.dtype == bool
    assert not np.any(regs[3 * len(regs) // 4:])


def test_alpha_at_interpolates_linearly():
    model = _small_torus_model()
    g = model.grid
    mid = 0.5 * (g[3] + g[4])
    np.testing.assert_allclose(es.alpha_at(model, mid),
                               0.5 * (model.alphas[3] + model.alphas[4]), atol=1e-12)
    np.testing.assert_allclose(es.alpha_at(model, g[7]), model.alphas[7], atol=1e-12)
    np.testing.assert_allclose(es.alpha_at(model, 1.0), model.alphas[-1], atol=1e-12)
    with pytest.raises(es.InvalidInputError):
        es.alpha_at(model, 1.5)


def test_presolve_requires_two_nodes():
    basis = es.trig_basis_1d(2)
    table = es.product_table(basis)
    m = _uniform_moments(basis)
    with pytest.raises(es.InvalidInputError):
        es.presolve_grid(basis, table, m, es.Schedule.ve(0.01, 50.0), n_times=1)


def test_model_eval_domain_check():
    model = _small_torus_model()
    with pytest.raises(es.DomainError):
        es.model_eval_batch(model, np.array([[4.0]]), 0.0)
    # score/energy/laplacian single-point wrappers agree with the batch path
    x = np.array([0.37])
    e, s, l = es.model_eval_batch(model, x[None, :], 0.2)
    assert es.energy_eval(model, x, 0.2) == pytest.approx(e[0])
    assert es.score_eval(model, x, 0.2)[0] == pytest.approx(s[0, 0])
    assert es.laplacian_eval(model, x, 0.2) == pytest.approx(l[0])


def test_model_serialization_roundtrip(tmp_path):
    model = _small_torus_model()
    path = tmp_path / "model.json"
    es.save_model(model, path)
    again = es.load_model(path)
    np.testing.assert_allclose(again.alphas, model.alphas, atol=1e-15)
    np.testing.assert_allclose(again.grid, model.grid, atol=1e-15)
    assert again.basis.functions == model.basis.functions
    assert again.schedule == model.schedule
    np.testing.assert_allclose(again.diagnostics["condition"],
                               model.diagnostics["condition"])


def test_model_version_check(tmp_path):
    model = _small_torus_model()
    d = es.model_to_dict(model)
    d["version"] = 999
    with pytest.raises(es.InvalidInputError):
        es.model_from_dict(d)


# ---------------------------------------------------------------------------
# Quadrature and loss
# ---------------------------------------------------------------------------

def test_trapezoid_grid_integrates_polynomial():
    spec = QuadratureSpec(n_nodes=2001, lower=0.0, upper=1.0)
    nodes, w = trapezoid_grid(spec, 1)
    assert w @ nodes[:, 0] ** 2 == pytest.approx(1 / 3, abs=1e-6)
    nodes2, w2 = trapezoid_grid(QuadratureSpec(n_nodes=101, lower=0.0, upper=1.0), 2)
    f = nodes2[:, 0] * nodes2[:, 1]
    assert w2 @ f == pytest.approx(1 / 4, abs=1e-4)
    assert w2.sum() == pytest.approx(1.0, abs=1e-12)


def test_sm_loss_gaussian_is_tiny():
    model, gm, schedule = fit_gaussian_ou(0.5, 0.25, n_tau=21)
    ref = es.AnalyticReference(gm, schedule, es.OU)
    spec = QuadratureSpec(n_nodes=2001, lower=-8.0, upper=8.0)
    for tau in (0.0, 0.5, 1.0):
        assert es.sm_loss(model, tau, ref, spec) < 1e-12


def test_sm_loss_monte_carlo_close_to_quadrature():
    basis = es.trig_basis_1d(8)
    table = es.product_table(basis)
    gm = es.GaussianMixture(weights=np.array([1.0]),
                            means=np.array([[0.4]]),
                            variances=np.array([[0.2]]))
    m = es.analytic_moments(gm, basis)
    sched = es.Schedule.ve(0.1, 5.0)
    model = es.presolve_grid(basis, table, m, sched, n_times=100)
    ref = es.AnalyticReference(gm, sched, es.TRUNCATED_BM)
    lq = es.sm_loss(model, 0.5, ref, QuadratureSpec(n_nodes=4096))
    lmc = es.sm_loss(model, 0.5, ref,
                     QuadratureSpec(kind="mc", n_samples=400_000, seed=3))
    assert lmc == pytest.approx(lq, rel=0.1, abs=1e-4)


def test_sm_loss_requires_reference():
    model = _small_torus_model()
    with pytest.raises(es.UnsupportedTargetError):
        es.sm_loss(model, 0.0, None)


def test_dataset_hash_deterministic():
    x = np.random.default_rng(0).normal(size=(10, 2))
    assert dataset_hash(x) == dataset_hash(x.copy())
    assert dataset_hash(x) != dataset_hash(x + 1e-9)
