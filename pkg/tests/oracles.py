"""Slow, independent reference implementations used only by the tests.

Nothing here calls into the package's numeric code; designs come from
scipy's B-spline class and products are formed by explicit loops or dense
inverses.
"""

import numpy as np
from scipy.interpolate import BSpline


def smoother(xi, lam, m):
    n = xi.shape[0]
    out = np.zeros((n, n))
    for i in range(n):
        for l in range(n):
            for j in range(m):
                out[i, l] += xi[i, j] * xi[l, j] / lam[j]
    return out


def tilde(v, smooth):
    v = np.asarray(v, dtype=float)
    n = smooth.shape[0]
    out = v.copy()
    for i in range(n):
        for l in range(n):
            out[i] -= smooth[i, l] * v[l] / n
    return out


def design(u, lo, hi, n_intervals, degree):
    """Clamped equispaced B-spline design built with scipy."""
    inner = lo + (hi - lo) * np.arange(1, n_intervals) / n_intervals
    knots = np.r_[[lo] * (degree + 1), inner, [hi] * (degree + 1)]
    K = n_intervals + degree
    uc = np.clip(u, lo, hi)
    out = np.empty((u.size, K))
    for k in range(K):
        out[:, k] = BSpline(knots, np.eye(K)[k], degree, extrapolate=True)(uc)
    # scipy leaves the right endpoint on the last polynomial piece; that already gives the indicator
    return out


def normal_solve(B, target):
    return np.linalg.inv(B.T @ B) @ (B.T @ target)


def objective(y, w, z, xi, lam, m, alpha, beta, n_intervals, degree=3):
    """Mean squared residual of Y~ - W~ alpha - B~ b minimised over b."""
    smooth = smoother(xi, lam, m)
    u = z @ beta
    B = design(u, u.min(), u.max(), n_intervals, degree)
    yt = tilde(y, smooth)
    wt = np.column_stack([tilde(c, smooth) for c in w.T]) if w.shape[1] else np.zeros((y.size, 0))
    Bt = np.column_stack([tilde(c, smooth) for c in B.T])
    target = yt - wt @ alpha
    b = normal_solve(Bt, target)
    r = target - Bt @ b
    return float(r @ r) / y.size


def second_stage(y, w, z, xi, lam, m, alpha, beta, K_star, degree=3):
    smooth = smoother(xi, lam, m)
    u = z @ beta
    B = design(u, u.min(), u.max(), K_star - degree, degree)
    yt = tilde(y, smooth)
    wt = np.column_stack([tilde(c, smooth) for c in w.T]) if w.shape[1] else np.zeros((y.size, 0))
    Bt = np.column_stack([tilde(c, smooth) for c in B.T])
    return normal_solve(Bt, yt - wt @ alpha)
