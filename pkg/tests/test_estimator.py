import math

import numpy as np
import pytest

from pflsim.estimator import (
    OptimizerConfig,
    ProfileFit,
    ProfileProblem,
    RegressionData,
    TildeData,
    bic,
    fit,
    init_linear_fit,
    minimize_profile,
    normal_equation_residual,
    objective,
    predict,
    profile_coeffs,
    second_stage_link,
    select_K_star,
    select_m_tilde,
    slope_estimate,
    smoother_matrix,
    tilde_transform,
)
from pflsim.curves import FunctionalSample, Grid, center
from pflsim.errors import ConfigurationError, PreconditionError, RankError
from pflsim.splines import SplineBasis

from . import oracles
from .builders import BETA0, exact_instance, random_instance

# ---------------------------------------------------------------- smoother / tilde


def test_smoother_zero_m():
    xi = np.random.default_rng(0).standard_normal((5, 3))
    assert np.all(smoother_matrix(xi, [3, 2, 1], 0).matrix == 0)


def test_smoother_scalar_example():
    assert smoother_matrix(np.array([[2.0]]), [4.0], 1).matrix[0, 0] == 1.0


@pytest.mark.parametrize("seed", range(20))
def test_smoother_matches_loop_oracle(seed):
    rng = np.random.default_rng(seed)
    xi = rng.standard_normal((5, 3))
    lam = np.sort(rng.uniform(0.1, 2, 3))[::-1]
    got = smoother_matrix(xi, lam, 3).matrix
    np.testing.assert_allclose(got, oracles.smoother(xi, lam, 3), atol=1e-12)
    assert np.max(np.abs(got - got.T)) <= 1e-10


def test_smoother_rejects_nonpositive_eigenvalue():
    with pytest.raises(RankError, match="smaller m"):
        smoother_matrix(np.ones((4, 2)), [1.0, 0.0], 2)


def test_tilde_identity_and_linearity():
    data, _ = random_instance(1, n=12)
    zero = smoother_matrix(data.scores, data.eigenvalues, 0)
    B = np.random.default_rng(2).standard_normal((12, 4))
    t0 = tilde_transform(data, B, zero)
    assert np.array_equal(t0.y, data.y) and np.array_equal(t0.b, B)
    sm = smoother_matrix(data.scores, data.eigenvalues, 3)
    doubled = RegressionData(2 * data.y, data.w, data.z, data.scores, data.sample)
    np.testing.assert_allclose(tilde_transform(doubled, B, sm).y, 2 * tilde_transform(data, B, sm).y, rtol=1e-14)
    np.testing.assert_allclose(tilde_transform(data, B, sm).b, oracles.tilde(B, sm.matrix), atol=1e-12)


def test_tilde_hand_instance():
    g = Grid.uniform(3)
    sample = center(FunctionalSample(g, [[1.0, 0, -1], [-1.0, 0, 1]]))
    data = RegressionData.build(sample, [3.0, -5.0], np.zeros((2, 0)), [[0, 1.0], [1.0, 0]])
    from pflsim.estimator import SmootherMatrix

    t = tilde_transform(data, np.eye(2), SmootherMatrix(np.eye(2), 2))
    np.testing.assert_allclose(t.y, [1.5, -2.5])


# ---------------------------------------------------------------- inner solve


def _tilde(B, y, w=None):
    n = B.shape[0]
    return TildeData(np.asarray(y, float), np.zeros((n, 0)) if w is None else w, B)


def test_profile_coeffs_exact_and_zero():
    rng = np.random.default_rng(5)
    B = rng.standard_normal((30, 6))
    b = rng.standard_normal(6)
    np.testing.assert_allclose(profile_coeffs(_tilde(B, B @ b), []), b, atol=1e-8)
    assert np.allclose(profile_coeffs(_tilde(B, np.zeros(30)), []), 0)


@pytest.mark.parametrize("seed", range(20))
def test_profile_coeffs_matches_dense_oracle(seed):
    rng = np.random.default_rng(100 + seed)
    B = rng.standard_normal((30, 6))
    w = rng.standard_normal((30, 2))
    y = rng.standard_normal(30)
    alpha = rng.standard_normal(2)
    got = profile_coeffs(_tilde(B, y, w), alpha)
    np.testing.assert_allclose(got, oracles.normal_solve(B, y - w @ alpha), atol=1e-8)
    assert normal_equation_residual(B, y - w @ alpha, got) <= 1e-8


def test_singular_design_raises_rank_error():
    B = np.zeros((10, 3))
    with pytest.raises(RankError, match="condition"):
        profile_coeffs(_tilde(B, np.ones(10)), [], ridge=0.0)


def test_ridge_matches_min_norm_on_rank_deficient_design():
    rng = np.random.default_rng(8)
    B = rng.standard_normal((40, 4))
    B = np.column_stack([B, B[:, 0] + B[:, 1]])
    y = B @ rng.standard_normal(5) + rng.standard_normal(40)
    coef = profile_coeffs(_tilde(B, y), [])
    mn, *_ = np.linalg.lstsq(B, y, rcond=None)
    r1, r2 = y - B @ coef, y - B @ mn
    assert abs(r1 @ r1 - r2 @ r2) / 40 <= 1e-8


# ---------------------------------------------------------------- objective


def test_objective_zero_on_exact_data():
    data, truth = exact_instance(0)
    val = objective(data, OptimizerConfig(), truth["alpha"], truth["beta"])
    assert 0 <= val <= 1e-14


def test_objective_precondition():
    data, _ = random_instance(0)
    with pytest.raises(PreconditionError):
        objective(data, OptimizerConfig(), [0.0], np.array([1.0, 0, 0]))


@pytest.mark.parametrize("seed", range(20))
def test_objective_matches_oracle(seed):
    data, rng = random_instance(seed)
    cfg = OptimizerConfig(m=3)
    beta = np.abs(rng.standard_normal(3)) + 0.1
    beta /= np.linalg.norm(beta)
    alpha = rng.standard_normal(1)
    k = int(rng.integers(1, 5))
    got = objective(data, cfg, alpha, beta, knot_count=k)
    ref = oracles.objective(data.y, data.w, data.z, data.xi, data.eigenvalues, 3, alpha, beta, k)
    assert got >= 0
    assert abs(got - ref) <= 1e-8 * max(1.0, ref)


@pytest.mark.parametrize("seed", range(20))
def test_gradient_matches_finite_differences(seed):
    data, rng = random_instance(seed, n=60)
    cfg = OptimizerConfig(m=3)
    prob = ProfileProblem(data, cfg, 3)
    beta = rng.standard_normal(3)
    beta = np.abs(beta) / np.linalg.norm(beta)
    beta[-1] = max(beta[-1], 0.3)
    beta /= np.linalg.norm(beta)
    theta = prob.pack(rng.standard_normal(1), beta)
    _, grad = prob.value_and_grad(theta)
    h = 1e-6
    fd = np.array(
        [(prob.value(theta + h * e) - prob.value(theta - h * e)) / (2 * h) for e in np.eye(theta.size)]
    )
    assert np.max(np.abs(fd - grad)) <= 1e-5 * max(1.0, np.max(np.abs(grad)))


# ---------------------------------------------------------------- initial fit / optimiser


def _linear_data(sign=1.0, seed=3):
    rng = np.random.default_rng(seed)
    sample = center(FunctionalSample(Grid.uniform(21), rng.standard_normal((50, 21))))
    w = rng.standard_normal((50, 1))
    z = rng.uniform(0, 1, (50, 3))
    y = 0.3 * w[:, 0] + sign * z @ BETA0
    return RegressionData.build(sample, y, w, z)


def test_init_recovers_linear_model():
    a0, b0 = init_linear_fit(_linear_data(), OptimizerConfig())
    np.testing.assert_allclose(a0, [0.3], atol=1e-6)
    np.testing.assert_allclose(b0, BETA0, atol=1e-6)


def test_init_negates_to_positive_last_entry():
    a0, b0 = init_linear_fit(_linear_data(-1.0), OptimizerConfig())
    np.testing.assert_allclose(b0, BETA0, atol=1e-6)
    assert abs(np.linalg.norm(b0) - 1) <= 1e-12 and b0[-1] > 0


@pytest.mark.parametrize("seed", range(5))
def test_exact_recovery(seed):
    data, truth = exact_instance(seed)
    f = fit(data, OptimizerConfig())
    assert np.linalg.norm(f.beta - truth["beta"]) <= 1e-3
    assert np.max(np.abs(f.alpha - truth["alpha"])) <= 1e-3
    u = np.linspace(f.basis_second.lo, f.basis_second.hi, 201)
    assert np.max(np.abs(f.g_hat(u) - truth["g"](u))) <= 1e-3


@pytest.mark.parametrize("seed", range(10))
def test_fit_contract(seed):
    data, _ = random_instance(seed, n=80)
    f = fit(data, OptimizerConfig())
    assert abs(np.linalg.norm(f.beta) - 1) <= 1e-10
    assert f.beta[-1] >= 0.01
    assert 0 <= f.objective_value <= f.initial_objective + 1e-15


def test_max_iter_returns_nonconverged_fit():
    data, _ = random_instance(4, n=80)
    cfg = OptimizerConfig(max_iter=1, n_starts=0)
    _, _, diag = minimize_profile(data, cfg)
    assert not diag.converged


def test_permutation_invariance():
    data, _ = random_instance(11, n=80)
    perm = np.random.default_rng(0).permutation(80)
    sample = FunctionalSample(data.sample.grid, data.sample.values[perm], True, data.sample.mean_curve)
    shuffled = RegressionData.build(sample, data.y[perm], data.w[perm], data.z[perm])
    f1, f2 = fit(data), fit(shuffled)
    np.testing.assert_allclose(f1.alpha, f2.alpha, atol=1e-8)
    np.testing.assert_allclose(f1.beta, f2.beta, atol=1e-8)
    np.testing.assert_allclose(f1.b_first, f2.b_first, atol=1e-8)
    np.testing.assert_allclose(f1.a_curve, f2.a_curve, atol=1e-8)


# ---------------------------------------------------------------- BIC, slope, second stage


def test_bic_values():
    assert bic(1.0, 100, 2) == pytest.approx(0.092103, abs=1e-6)
    assert bic(1.0, 100, 6) == pytest.approx(0.276310, abs=1e-6)


def test_single_candidate_grids():
    data, truth = exact_instance(2, noise=0.1)
    g = truth["g"](data.z @ truth["beta"])
    assert select_m_tilde(data, truth["alpha"], truth["beta"], g, [4])[0] == 4
    assert select_K_star(data, OptimizerConfig(), truth["alpha"], truth["beta"], [6])[0] == 6
    with pytest.raises(ConfigurationError):
        select_m_tilde(data, truth["alpha"], truth["beta"], g, [])


def test_slope_recovers_single_component():
    data, _ = exact_instance(4, alpha=0.0, link=lambda u: 0 * u, slope=(0.3,))
    coeffs, curve = slope_estimate(data, [0.0], BETA0, np.zeros(data.n), 4)
    np.testing.assert_allclose(coeffs, [0.3, 0, 0, 0], atol=1e-6)
    np.testing.assert_allclose(curve, 0.3 * data.eigen.eigenfunctions[0], atol=1e-6)


def test_slope_zero_for_orthogonal_residual():
    data, _ = random_instance(6, n=30)
    xi = data.xi[:, :3]
    r = np.random.default_rng(0).standard_normal(30)
    r -= xi @ np.linalg.lstsq(xi, r, rcond=None)[0]
    coeffs, _ = slope_estimate(data, np.zeros(1), BETA0, data.y - data.w[:, 0] * 0 - r, 3)
    np.testing.assert_allclose(coeffs, 0, atol=1e-12)


@pytest.mark.parametrize("seed", range(20))
def test_second_stage_matches_oracle(seed):
    data, rng = random_instance(seed)
    cfg = OptimizerConfig(m=3)
    beta = np.abs(rng.standard_normal(3)) + 0.1
    beta /= np.linalg.norm(beta)
    alpha = rng.standard_normal(1)
    K = int(rng.integers(4, 8))
    coef, basis = second_stage_link(data, cfg, alpha, beta, K)
    ref = oracles.second_stage(data.y, data.w, data.z, data.xi, data.eigenvalues, 3, alpha, beta, K)
    assert basis.K == K
    np.testing.assert_allclose(coef, ref, atol=1e-8 * max(1.0, np.max(np.abs(ref))))


def test_second_stage_reproduces_spline_link():
    data, truth = exact_instance(7)
    coef, basis = second_stage_link(data, OptimizerConfig(), truth["alpha"], truth["beta"], 6)
    u = np.linspace(basis.lo, basis.hi, 301)
    assert np.max(np.abs(basis.evaluate(coef, u) - truth["g"](u))) <= 1e-6


def _three_direction_data(seed, n=200):
    rng = np.random.default_rng(seed)
    grid = Grid.uniform(51)
    basis = np.vstack([np.ones(51)] + [np.sqrt(2) * np.cos(j * np.pi * grid.points) for j in range(1, 10)])
    xi = rng.standard_normal((n, 10)) * np.arange(1, 11) ** -0.75
    sample = center(FunctionalSample(grid, xi @ basis))
    w = rng.standard_normal((n, 1))
    z = rng.uniform(0, 1, (n, 3))
    y = xi[:, :3] @ [2.0, 2.0, 2.0] + 0.3 * w[:, 0] + np.sin(2 * np.pi * z @ BETA0) + 0.1 * rng.standard_normal(n)
    return RegressionData.build(sample, y, w, z)


def test_bic_selection_sanity():
    hits_m = hits_k = 0
    for seed in range(50):
        f = fit(_three_direction_data(seed))
        hits_m += f.m_tilde >= 3
        hits_k += f.K_star > 4
    assert hits_m >= 45
    assert hits_k >= 45


# ---------------------------------------------------------------- prediction


def _constant_fit(c, q=1):
    grid = Grid.uniform(11)
    basis = SplineBasis.equispaced(0, 1, 3)
    return ProfileFit(
        alpha=np.ones(q),
        beta=BETA0,
        b_first=np.full(basis.K, c),
        basis_first=basis,
        a_coeffs=np.ones(1),
        a_curve=np.sin(grid.points),
        b_second=np.full(basis.K, c),
        basis_second=basis,
        grid=grid,
        mean_curve=np.linspace(0, 1, 11),
        m=1,
        m_tilde=1,
        K_star=basis.K,
        objective_value=0.0,
        iterations=0,
        converged=True,
    )


def test_predict_constant_link():
    f = _constant_fit(2.5)
    got = predict(f, f.mean_curve[None, :], np.zeros((1, 1)), [[0.2, 0.3, 0.1]])
    np.testing.assert_allclose(got, [2.5], atol=1e-14)


def test_predict_functional_term_is_linear():
    f = _constant_fit(0.0)
    x = np.random.default_rng(1).standard_normal((3, 11))
    z = np.full((3, 3), 0.5)
    base = predict(f, x, np.zeros((3, 1)), z)
    doubled = ProfileFit(**{**f.__dict__, "a_curve": 2 * f.a_curve})
    np.testing.assert_allclose(predict(doubled, x, np.zeros((3, 1)), z), 2 * base, rtol=1e-14)


def test_predict_clamps_index():
    f = _constant_fit(1.0)
    assert math.isfinite(predict(f, f.mean_curve[None, :], [[0.0]], [[50.0, 50.0, 50.0]])[0])
