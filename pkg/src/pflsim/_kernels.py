"""Hot numeric kernels with a numba path and a pure-numpy path.

The numba path is used when numba imports cleanly and the environment
variable ``PFLSIM_DISABLE_NUMBA`` is unset or ``0``. Both paths return
identical arrays up to round-off; tests exercise them side by side.
"""

from __future__ import annotations

import os

import numpy as np

_DISABLE = os.environ.get("PFLSIM_DISABLE_NUMBA", "0").strip().lower() not in ("", "0", "false", "no")

try:
    if _DISABLE:
        raise ImportError("numba disabled by PFLSIM_DISABLE_NUMBA")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f


def find_spans(knots: np.ndarray, degree: int, u: np.ndarray) -> np.ndarray:
    """Knot-span index of each ``u`` (right-continuous, last span closed)."""
    n_basis = knots.size - degree - 1
    span = np.searchsorted(knots, u, side="right") - 1
    return np.clip(span, degree, n_basis - 1)


# ---------------------------------------------------------------------------
# numpy path
# ---------------------------------------------------------------------------


def _levels_numpy(knots, degree, u, span):
    # levels[q][:, i] = B_{span-q+i, q}(u), i = 0..q
    n = u.size
    levels = [np.ones((n, 1))]
    for q in range(1, degree + 1):
        prev = levels[-1]
        cur = np.zeros((n, q + 1))
        for i in range(q + 1):
            j = span - q + i
            # left term: B_{j,q-1} with local index i-1 at level q-1
            if i >= 1:
                t0 = knots[j]
                t1 = knots[j + q]
                den = t1 - t0
                with np.errstate(divide="ignore", invalid="ignore"):
                    cur[:, i] += np.where(den > 0, (u - t0) / np.where(den > 0, den, 1.0), 0.0) * prev[:, i - 1]
            if i <= q - 1:
                t0 = knots[j + 1]
                t1 = knots[j + q + 1]
                den = t1 - t0
                with np.errstate(divide="ignore", invalid="ignore"):
                    cur[:, i] += np.where(den > 0, (t1 - u) / np.where(den > 0, den, 1.0), 0.0) * prev[:, i]
        levels.append(cur)
    return levels


def _deriv_numpy(levels, knots, span, q, r):
    """r-th derivative of the nonzero degree-q functions, shape (n, q+1)."""
    if r == 0:
        return levels[q]
    lower = _deriv_numpy(levels, knots, span, q - 1, r - 1)
    n = span.size
    out = np.zeros((n, q + 1))
    for i in range(q + 1):
        j = span - q + i
        if i >= 1:
            den = knots[j + q] - knots[j]
            safe = np.where(den > 0, den, 1.0)
            out[:, i] += np.where(den > 0, lower[:, i - 1] / safe, 0.0)
        if i <= q - 1:
            den = knots[j + q + 1] - knots[j + 1]
            safe = np.where(den > 0, den, 1.0)
            out[:, i] -= np.where(den > 0, lower[:, i] / safe, 0.0)
    return q * out


def basis_ders_numpy(knots: np.ndarray, degree: int, u: np.ndarray, nder: int) -> np.ndarray:
    """Dense basis values and derivatives, shape ``(nder + 1, len(u), K)``."""
    knots = np.asarray(knots, dtype=float)
    u = np.asarray(u, dtype=float)
    n_basis = knots.size - degree - 1
    span = find_spans(knots, degree, u)
    levels = _levels_numpy(knots, degree, u, span)
    out = np.zeros((nder + 1, u.size, n_basis))
    rows = np.arange(u.size)
    for r in range(nder + 1):
        vals = _deriv_numpy(levels, knots, span, degree, r) if r <= degree else np.zeros((u.size, degree + 1))
        for i in range(degree + 1):
            out[r, rows, span - degree + i] = vals[:, i]
    return out


# ---------------------------------------------------------------------------
# numba path
# ---------------------------------------------------------------------------


@njit(cache=True)
def _ders_one(knots, p, span, u, nder, ndu, a, ders):
    left = np.zeros(p + 1)
    right = np.zeros(p + 1)
    ndu[0, 0] = 1.0
    for j in range(1, p + 1):
        left[j] = u - knots[span + 1 - j]
        right[j] = knots[span + j] - u
        saved = 0.0
        for r in range(j):
            ndu[j, r] = right[r + 1] + left[j - r]
            temp = ndu[r, j - 1] / ndu[j, r]
            ndu[r, j] = saved + right[r + 1] * temp
            saved = left[j - r] * temp
        ndu[j, j] = saved
    for j in range(p + 1):
        ders[0, j] = ndu[j, p]
    for k in range(1, nder + 1):
        for j in range(p + 1):
            ders[k, j] = 0.0
    top = min(nder, p)
    for r in range(p + 1):
        s1 = 0
        s2 = 1
        a[0, 0] = 1.0
        for k in range(1, top + 1):
            d = 0.0
            rk = r - k
            pk = p - k
            if r >= k:
                a[s2, 0] = a[s1, 0] / ndu[pk + 1, rk]
                d = a[s2, 0] * ndu[rk, pk]
            j1 = 1 if rk >= -1 else -rk
            j2 = k - 1 if r - 1 <= pk else p - r
            for j in range(j1, j2 + 1):
                a[s2, j] = (a[s1, j] - a[s1, j - 1]) / ndu[pk + 1, rk + j]
                d += a[s2, j] * ndu[rk + j, pk]
            if r <= pk:
                a[s2, k] = -a[s1, k - 1] / ndu[pk + 1, r]
                d += a[s2, k] * ndu[r, pk]
            ders[k, r] = d
            s1, s2 = s2, s1
    fac = float(p)
    for k in range(1, top + 1):
        for j in range(p + 1):
            ders[k, j] *= fac
        fac *= p - k


@njit(cache=True)
def _basis_ders_jit(knots, p, u, span, nder):
    n = u.shape[0]
    n_basis = knots.shape[0] - p - 1
    out = np.zeros((nder + 1, n, n_basis))
    ndu = np.zeros((p + 1, p + 1))
    a = np.zeros((2, p + 1))
    ders = np.zeros((nder + 1, p + 1))
    for i in range(n):
        _ders_one(knots, p, span[i], u[i], nder, ndu, a, ders)
        base = span[i] - p
        for k in range(nder + 1):
            for j in range(p + 1):
                out[k, i, base + j] = ders[k, j]
    return out


def basis_ders_numba(knots: np.ndarray, degree: int, u: np.ndarray, nder: int) -> np.ndarray:
    """Same contract as :func:`basis_ders_numpy`, evaluated point by point."""
    knots = np.ascontiguousarray(knots, dtype=np.float64)
    u = np.ascontiguousarray(u, dtype=np.float64)
    span = find_spans(knots, degree, u).astype(np.int64)
    return _basis_ders_jit(knots, int(degree), u, span, int(nder))


basis_ders = basis_ders_numba if HAVE_NUMBA else basis_ders_numpy
