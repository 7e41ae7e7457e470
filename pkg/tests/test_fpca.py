import numpy as np
import pytest

from pflsim.curves import FunctionalSample, Grid, center, inner_product
from pflsim.errors import DimensionError, PreconditionError
from pflsim.fpca import default_j_max, eigensystem, empirical_covariance, fpca, scores
from pflsim.simgen import generate

from .conftest import random_sample


def _unit(f, grid):
    return f / np.sqrt(inner_product(f, f, grid))


def test_covariance_requires_centering():
    s = FunctionalSample(Grid.uniform(5), np.ones((3, 5)))
    with pytest.raises(PreconditionError):
        empirical_covariance(s)


def test_covariance_zero_curve():
    s = center(FunctionalSample(Grid.uniform(5), np.zeros((1, 5))))
    assert np.all(empirical_covariance(s) == 0)


def test_covariance_rank_one():
    g = Grid.uniform(21)
    phi = _unit(np.sqrt(2) * np.cos(np.pi * g.points), g)
    c = 1.7
    s = center(FunctionalSample(g, np.vstack([c * phi, -c * phi, c * phi, -c * phi])))
    np.testing.assert_allclose(empirical_covariance(s), c**2 * np.outer(phi, phi), atol=1e-14)


def test_covariance_hand_instance():
    # (1,0), (0,1) and their negatives: (1/4) * 2 * I
    g = Grid.from_points([0.0, 1.0])
    s = center(FunctionalSample(g, [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]]))
    np.testing.assert_allclose(empirical_covariance(s), 0.5 * np.eye(2), atol=1e-15)


def test_eigensystem_rank_one():
    g = Grid.uniform(101)
    phi = _unit(np.sqrt(2) * np.cos(np.pi * g.points), g)
    eig = eigensystem(np.outer(phi, phi), g, 5)
    assert abs(eig.eigenvalues[0] - 1) <= 1e-8
    assert np.all(np.abs(eig.eigenvalues[1:]) <= 1e-8)


def test_eigensystem_two_components():
    g = Grid.from_points(np.sort(np.r_[0, 1, np.random.default_rng(3).uniform(0, 1, 60)]))
    psi1 = _unit(np.ones(g.size), g)
    raw = np.sin(np.pi * g.points)
    psi2 = _unit(raw - inner_product(raw, psi1, g) * psi1, g)
    cov = 2 * np.outer(psi1, psi1) + np.outer(psi2, psi2)
    eig = eigensystem(cov, g, 2)
    np.testing.assert_allclose(eig.eigenvalues, [2, 1], atol=1e-8)
    for est, ref in zip(eig.eigenfunctions, (psi1, psi2)):
        s = np.sign(inner_product(est, ref, g))
        assert np.max(np.abs(s * est - ref)) <= 1e-8


def test_eigensystem_rejects_asymmetric():
    g = Grid.uniform(3)
    with pytest.raises(PreconditionError):
        eigensystem(np.array([[1.0, 2, 0], [0, 1, 0], [0, 0, 1]]), g, 2)


def test_eigensystem_sign_convention(centered_sample):
    eig, _ = fpca(centered_sample)
    for phi in eig.eigenfunctions:
        assert phi[np.argmax(np.abs(phi))] > 0


def test_leading_eigenvalue_model41_large_sample():
    d = generate("m41", 2000, 1.5, seed=99)
    eig, _ = fpca(center(d.curves))
    assert 0.9 <= eig.eigenvalues[0] <= 1.1


def test_scores_of_eigenfunctions(centered_sample):
    eig, _ = fpca(centered_sample)
    g = centered_sample.grid
    x = FunctionalSample(g, np.vstack([eig.eigenfunctions[0], 2 * eig.eigenfunctions[0] - 3 * eig.eigenfunctions[1]]))
    xi = scores(x, eig, 4).scores
    np.testing.assert_allclose(xi[0], [1, 0, 0, 0], atol=1e-8)
    np.testing.assert_allclose(xi[1], [2, -3, 0, 0], atol=1e-8)


def test_scores_grid_mismatch(centered_sample):
    eig, _ = fpca(centered_sample)
    other = FunctionalSample(Grid.uniform(7), np.zeros((1, 7)))
    with pytest.raises(DimensionError):
        scores(other, eig)


def test_parseval_full_decomposition(centered_sample):
    g = centered_sample.grid
    eig = eigensystem(empirical_covariance(centered_sample), g, g.size)
    xi = scores(centered_sample, eig).scores
    norms = np.array([inner_product(x, x, g) for x in centered_sample.values])
    np.testing.assert_allclose((xi**2).sum(axis=1), norms, rtol=1e-10)


def test_default_j_max():
    assert default_j_max(200, 101) == 50
    assert default_j_max(20, 101) == 19
    assert default_j_max(200, 11) == 11


@pytest.mark.parametrize("seed", range(100))
def test_decomposition_invariants(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(5, 60))
    G = int(rng.integers(8, 60))
    s = center(random_sample(rng, n=n, G=G, n_terms=int(rng.integers(2, 12))))
    g = s.grid
    eig = eigensystem(empirical_covariance(s), g, G)
    lam = eig.eigenvalues
    assert np.all(np.diff(lam) <= 1e-12 * lam[0])
    assert np.all(lam >= 0)
    gram = (eig.eigenfunctions * g.weights) @ eig.eigenfunctions.T
    assert np.max(np.abs(gram - np.eye(G))) <= 1e-8
    total = np.mean([inner_product(x, x, g) for x in s.values])
    assert abs(lam.sum() - total) <= 1e-8 * total
    xi = scores(s, eig).scores
    recon = xi @ eig.eigenfunctions
    err = max(np.sqrt(inner_product(r, r, g)) for r in s.values - recon)
    assert err <= 1e-6 * max(np.sqrt(inner_product(x, x, g)) for x in s.values)
    # score variances equal eigenvalues; distinct columns uncorrelated
    np.testing.assert_allclose((xi**2).mean(axis=0), lam, atol=1e-10 * lam[0])
    keep = lam > 1e-8 * lam[0]
    c = np.corrcoef(xi[:, keep].T) if keep.sum() > 1 else np.ones((1, 1))
    assert np.max(np.abs(c - np.diag(np.diag(c)))) <= 1e-6
