"""Empirical covariance, quadrature-weighted eigendecomposition and scores."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .curves import FunctionalSample, Grid, gram
from .errors import DimensionError, PreconditionError


@dataclass(frozen=True)
class EigenSystem:
    """Eigenpairs of the empirical covariance operator.

    ``eigenfunctions`` holds one function per row, orthonormal under the
    grid's trapezoidal weights.
    """

    eigenvalues: np.ndarray
    eigenfunctions: np.ndarray
    grid: Grid

    @property
    def J(self) -> int:
        return self.eigenvalues.size


@dataclass(frozen=True)
class ScoreMatrix:
    scores: np.ndarray
    eigen: EigenSystem

    @property
    def J(self) -> int:
        return self.scores.shape[1]


def default_j_max(n: int, grid_size: int) -> int:
    return max(1, min(n - 1, grid_size, 50))


def empirical_covariance(sample: FunctionalSample) -> np.ndarray:
    """Pointwise covariance ``(1/n) sum_i X_i(s) X_i(t)`` of a centered sample."""
    if not sample.mean_removed:
        raise PreconditionError("sample must be centered before forming the covariance; call center() first")
    x = sample.values
    cov = x.T @ x / x.shape[0]
    return (cov + cov.T) / 2


def _fix_signs(phi: np.ndarray) -> np.ndarray:
    # largest |value| positive; argmax returns the earliest index on ties
    idx = np.argmax(np.abs(phi), axis=1)
    signs = np.sign(phi[np.arange(phi.shape[0]), idx])
    signs[signs == 0] = 1.0
    return phi * signs[:, None]


def eigensystem(cov: np.ndarray, grid: Grid, j_max: int) -> EigenSystem:
    """Solve the covariance eigenproblem in the grid's quadrature metric.

    The symmetric matrix ``W^{1/2} C W^{1/2}`` is diagonalised and the
    eigenvectors are mapped back with ``W^{-1/2}``, so the returned
    eigenfunctions satisfy ``sum_g w_g phi_j phi_k = delta_jk``.
    """
    cov = np.asarray(cov, dtype=float)
    G = grid.size
    if cov.shape != (G, G):
        raise DimensionError(f"covariance is {cov.shape}, grid has {G} points")
    if j_max < 1:
        raise PreconditionError("j_max must be at least 1")
    scale = max(1.0, float(np.max(np.abs(cov))))
    if np.max(np.abs(cov - cov.T)) > 1e-10 * scale:
        raise PreconditionError("covariance matrix is not symmetric")
    sw = np.sqrt(grid.weights)
    op = sw[:, None] * cov * sw[None, :]
    vals, vecs = np.linalg.eigh((op + op.T) / 2)
    order = np.argsort(vals)[::-1][: min(j_max, G)]
    vals = np.clip(vals[order], 0.0, None)
    phi = _fix_signs((vecs[:, order] / sw[:, None]).T)
    vals.setflags(write=False)
    phi.setflags(write=False)
    return EigenSystem(vals, phi, grid)


def scores(sample: FunctionalSample, eig: EigenSystem, J: int | None = None) -> ScoreMatrix:
    """Scores ``<X_i, phi_j>`` of each curve on the first ``J`` eigenfunctions."""
    J = eig.J if J is None else J
    if J > eig.J:
        raise DimensionError(f"requested {J} components, eigensystem has {eig.J}")
    if not sample.grid.same_as(eig.grid):
        raise DimensionError("sample and eigensystem live on different grids")
    xi = gram(sample.values, eig.eigenfunctions[:J], sample.grid)
    return ScoreMatrix(xi, eig)


def fpca(sample: FunctionalSample, j_max: int | None = None) -> tuple[EigenSystem, ScoreMatrix]:
    """Covariance, eigendecomposition and full score matrix in one call."""
    if j_max is None:
        j_max = default_j_max(sample.n, sample.grid.size)
    eig = eigensystem(empirical_covariance(sample), sample.grid, j_max)
    return eig, scores(sample, eig)
