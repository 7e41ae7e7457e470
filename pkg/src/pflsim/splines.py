"""Clamped, equispaced B-spline bases for the single-index link."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ConfigurationError, DegenerateIndexError, PreconditionError


@dataclass(frozen=True)
class SplineBasis:
    """Clamped B-spline basis of a given degree over ``[lo, hi]``.

    ``n_intervals`` is the number of knot subintervals; the basis dimension
    is ``n_intervals + degree``.
    """

    degree: int
    knots: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.knots, dtype=float)
        t.setflags(write=False)
        object.__setattr__(self, "knots", t)
        if self.degree < 0:
            raise ConfigurationError("degree must be non-negative")
        if t.size < 2 * (self.degree + 1) or np.any(np.diff(t) < 0):
            raise ConfigurationError("knot vector must be non-decreasing with clamped ends")
        if not self.hi > self.lo:
            raise DegenerateIndexError("basis range has zero width")

    @classmethod
    def equispaced(cls, lo: float, hi: float, n_intervals: int, degree: int = 3) -> "SplineBasis":
        if n_intervals < 1:
            raise ConfigurationError(f"need at least one knot interval, got {n_intervals}")
        if not hi > lo:
            raise DegenerateIndexError(f"index range [{lo}, {hi}] has zero width")
        interior = lo + (hi - lo) * np.arange(1, n_intervals) / n_intervals
        knots = np.concatenate([np.full(degree + 1, lo), interior, np.full(degree + 1, hi)])
        return cls(degree, knots)

    @property
    def lo(self) -> float:
        return float(self.knots[0])

    @property
    def hi(self) -> float:
        return float(self.knots[-1])

    @property
    def K(self) -> int:
        return self.knots.size - self.degree - 1

    @property
    def n_intervals(self) -> int:
        return self.K - self.degree

    @property
    def interior_knots(self) -> np.ndarray:
        return self.knots[self.degree + 1 : self.knots.size - self.degree - 1]

    @property
    def h0(self) -> float:
        return float(np.max(np.diff(self.knots[self.degree : self.K + 1])))

    def clamp(self, u) -> np.ndarray:
        return np.clip(np.asarray(u, dtype=float), self.lo, self.hi)

    def design(self, u, nder: int = 0) -> np.ndarray:
        """Basis values (and derivatives) at ``u``; shape ``(nder + 1, len(u), K)``."""
        u = np.atleast_1d(self.clamp(u))
        return _kernels.basis_ders(self.knots, self.degree, u, nder)

    def __call__(self, u) -> np.ndarray:
        return self.design(u)[0]

    def evaluate(self, coef, u) -> np.ndarray:
        """Spline function ``sum_k coef_k B_k(u)``."""
        return self(u) @ np.asarray(coef, dtype=float)


def build_index_knots(
    index_values,
    degree: int = 3,
    h0: float | None = None,
    knot_count: int | None = None,
) -> SplineBasis:
    """Equispaced basis spanning the observed range of the index values.

    Exactly one of ``h0`` (target spacing, giving ``ceil(range / h0)``
    intervals) and ``knot_count`` (number of intervals) must be given.
    """
    u = np.asarray(index_values, dtype=float)
    if (h0 is None) == (knot_count is None):
        raise ConfigurationError("supply exactly one of h0 and knot_count")
    if u.size < degree + 2:
        raise PreconditionError(f"need at least {degree + 2} index values, got {u.size}")
    lo, hi = float(u.min()), float(u.max())
    if not hi > lo:
        raise DegenerateIndexError("index values are all equal; the single index is degenerate")
    if h0 is not None:
        if h0 <= 0:
            raise ConfigurationError("h0 must be positive")
        # guard against ceil(4.000000000001) from round-off
        knot_count = max(1, math.ceil((hi - lo) / h0 - 1e-9))
    if knot_count < 1:
        raise ConfigurationError(f"knot_count must be at least 1, got {knot_count}")
    return SplineBasis.equispaced(lo, hi, int(knot_count), degree)


def eval_basis(basis: SplineBasis, u: float) -> np.ndarray:
    """Vector ``(B_1(u), ..., B_K(u))`` with ``u`` clamped into range."""
    return basis.design([u])[0, 0]


def eval_basis_deriv(basis: SplineBasis, u: float, order: int = 1) -> np.ndarray:
    """Derivative of the given order of every basis function at ``u``."""
    if order < 1 or order > basis.degree:
        raise ConfigurationError(f"derivative order must be in 1..{basis.degree}, got {order}")
    return basis.design([u], nder=order)[order, 0]
