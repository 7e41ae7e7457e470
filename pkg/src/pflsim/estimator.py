"""Profile B-spline estimation of the partial functional partially linear
single-index model

    Y = int a(t) X(t) dt + W'alpha + g(Z'beta) + eps,   |beta| = 1, beta_d > 0.

The functional part is profiled out through the first ``m`` principal
component scores (the "tilde" projection), the link through a clamped
cubic B-spline whose range follows the current index values, and the
remaining finite-dimensional parameters ``(alpha, beta_{-d})`` are found by
BFGS on the profiled least-squares criterion.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize

from .curves import FunctionalSample, Grid, interpolate
from .errors import (
    ConfigurationError,
    DegenerateIndexError,
    DimensionError,
    PreconditionError,
    RankError,
)
from .fpca import EigenSystem, ScoreMatrix, fpca
from .splines import SplineBasis, build_index_knots

log = logging.getLogger(__name__)

_COND_LIMIT = 1e15
_POLISH_STEPS = 20


# ---------------------------------------------------------------------------
# data containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OptimizerConfig:
    rho0: float = 0.01
    tol_obj: float = 1e-10
    tol_step: float = 1e-8
    max_iter: int = 200
    ridge: float = 1e-10
    m: int = 5
    c0: float = 1.0
    h0: float | None = None
    knot_count: int | None = None
    degree: int = 3
    m_tilde_grid: tuple[int, ...] | None = None
    k_star_grid: tuple[int, ...] | None = None
    seed: int = 0
    n_screen: int = 200
    n_starts: int = 3

    def __post_init__(self):
        if not 0 < self.rho0 < 1:
            raise ConfigurationError("rho0 must lie in (0, 1)")
        if self.tol_obj <= 0 or self.tol_step <= 0:
            raise ConfigurationError("tolerances must be positive")
        if self.max_iter < 1:
            raise ConfigurationError("max_iter must be at least 1")
        if self.ridge < 0:
            raise ConfigurationError("ridge must be non-negative")
        if self.m < 0:
            raise ConfigurationError("m must be non-negative")
        if self.degree < 1:
            raise ConfigurationError("degree must be at least 1")
        if self.h0 is not None and self.knot_count is not None:
            raise ConfigurationError("give at most one of h0 and knot_count")
        if self.h0 is not None and self.h0 <= 0:
            raise ConfigurationError("h0 must be positive")
        if self.c0 <= 0:
            raise ConfigurationError("c0 must be positive")
        if self.n_screen < 0 or self.n_starts < 0:
            raise ConfigurationError("n_screen and n_starts must be non-negative")
        for name in ("m_tilde_grid", "k_star_grid"):
            val = getattr(self, name)
            if val is not None:
                object.__setattr__(self, name, tuple(int(v) for v in val))

    def spacing(self, n: int) -> float:
        """Target knot spacing ``h0``; defaults to ``c0 * n^(-1/5)``."""
        return self.h0 if self.h0 is not None else self.c0 * n ** (-1 / 5)

    def m_tilde_candidates(self, n: int, j_pos: int) -> tuple[int, ...]:
        if self.m_tilde_grid is not None:
            return self.m_tilde_grid
        top = min(20, n // 4, j_pos)
        return tuple(range(1, top + 1)) if top >= 1 else (0,)

    def k_star_candidates(self, n: int) -> tuple[int, ...]:
        if self.k_star_grid is not None:
            return self.k_star_grid
        lo = self.degree + 1
        top = max(lo, min(20, n // 4))
        return tuple(range(lo, top + 1))


@dataclass(frozen=True)
class RegressionData:
    """Responses, scalar and index covariates plus the FPCA of the curves."""

    y: np.ndarray
    w: np.ndarray
    z: np.ndarray
    scores: ScoreMatrix
    sample: FunctionalSample

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).ravel()
        n = y.size
        w = np.asarray(self.w, dtype=float).reshape(n, -1) if np.size(self.w) else np.zeros((n, 0))
        z = np.asarray(self.z, dtype=float).reshape(n, -1)
        if z.shape[1] < 2:
            raise DimensionError(f"need at least 2 index covariates, got {z.shape[1]}")
        if self.scores.scores.shape[0] != n or self.sample.n != n:
            raise DimensionError("responses, covariates and curves disagree on the sample size")
        for name, arr in (("y", y), ("w", w), ("z", z)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def build(cls, sample: FunctionalSample, y, w, z, j_max: int | None = None) -> "RegressionData":
        """Run FPCA on a centered sample and bundle it with the covariates."""
        eig, xi = fpca(sample, j_max)
        return cls(y, w, z, xi, sample)

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def q(self) -> int:
        return self.w.shape[1]

    @property
    def d(self) -> int:
        return self.z.shape[1]

    @property
    def eigen(self) -> EigenSystem:
        return self.scores.eigen

    @property
    def eigenvalues(self) -> np.ndarray:
        return self.scores.eigen.eigenvalues

    @property
    def xi(self) -> np.ndarray:
        return self.scores.scores


@dataclass(frozen=True)
class SmootherMatrix:
    matrix: np.ndarray
    m: int


@dataclass(frozen=True)
class TildeData:
    y: np.ndarray
    w: np.ndarray
    b: np.ndarray
    b_raw: np.ndarray | None = None


@dataclass
class OptimDiagnostics:
    iterations: int = 0
    converged: bool = False
    message: str = ""
    initial_objective: float = math.nan
    objective_trace: list[float] = field(default_factory=list)
    failed_line_searches: int = 0
    used_fallback: bool = False
    knot_count: int = 0


@dataclass(frozen=True)
class ProfileFit:
    alpha: np.ndarray
    beta: np.ndarray
    b_first: np.ndarray
    basis_first: SplineBasis
    a_coeffs: np.ndarray
    a_curve: np.ndarray
    b_second: np.ndarray
    basis_second: SplineBasis
    grid: Grid
    mean_curve: np.ndarray
    m: int
    m_tilde: int
    K_star: int
    objective_value: float
    iterations: int
    converged: bool
    initial_objective: float = math.nan
    alpha_init: np.ndarray | None = None
    beta_init: np.ndarray | None = None
    bic_m_tilde: dict[int, float] = field(default_factory=dict)
    bic_k_star: dict[int, float] = field(default_factory=dict)
    objective_trace: tuple[float, ...] = ()
    message: str = ""

    def g_hat(self, u) -> np.ndarray:
        """Second-stage link estimate; ``u`` is clamped into the basis range."""
        return self.basis_second.evaluate(self.b_second, u)

    def g_tilde(self, u) -> np.ndarray:
        """First-stage link estimate."""
        return self.basis_first.evaluate(self.b_first, u)


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------


def _check_positive_eigs(lam: np.ndarray, m: int) -> None:
    if m > lam.size:
        raise RankError(f"m = {m} exceeds the {lam.size} available components; use a smaller m")
    if m and not lam[m - 1] > 0:
        raise RankError(f"eigenvalue {m} is {lam[m - 1]:.3g} <= 0; use a smaller m")


def smoother_matrix(scores: ScoreMatrix | np.ndarray, eigenvalues, m: int) -> SmootherMatrix:
    """``xi_il = sum_{j<=m} xi_ij xi_lj / lambda_j`` as an ``n x n`` matrix."""
    xi = scores.scores if isinstance(scores, ScoreMatrix) else np.asarray(scores, dtype=float)
    lam = np.asarray(eigenvalues, dtype=float)
    if m > xi.shape[1]:
        raise DimensionError(f"m = {m} exceeds the {xi.shape[1]} score columns")
    _check_positive_eigs(lam, m)
    xm = xi[:, :m]
    mat = (xm / lam[:m]) @ xm.T
    return SmootherMatrix((mat + mat.T) / 2, m)


def _tilde_cols(v: np.ndarray, smoother: SmootherMatrix) -> np.ndarray:
    n = smoother.matrix.shape[0]
    return v - smoother.matrix @ v / n


def tilde_transform(data: RegressionData, basis_design: np.ndarray, smoother: SmootherMatrix) -> TildeData:
    """Apply ``v -> v - (1/n) xi~ v`` to Y, every W column and every basis column."""
    n = data.n
    bd = np.asarray(basis_design, dtype=float)
    if bd.ndim != 2 or bd.shape[0] != n or smoother.matrix.shape != (n, n):
        raise DimensionError("basis design and smoother must have n rows")
    out = TildeData(
        _tilde_cols(data.y, smoother),
        _tilde_cols(data.w, smoother),
        _tilde_cols(bd, smoother),
        bd,
    )
    check = bd - smoother.matrix @ bd / n
    if not np.allclose(out.b, check, rtol=0, atol=1e-10 * max(1.0, float(np.max(np.abs(bd), initial=0.0)))):
        raise ArithmeticError("tilde transform failed its self-check")
    return out


def _solve_normal(design: np.ndarray, target: np.ndarray, ridge_floor: float) -> np.ndarray:
    """Least squares through ridge-floored normal equations (Cholesky)."""
    K = design.shape[1]
    gram_ = design.T @ design
    rhs = design.T @ target
    ridge = max(ridge_floor, 1e-12 * float(np.trace(gram_)) / max(K, 1))
    mat = gram_ + ridge * np.eye(K)
    try:
        cf = linalg.cho_factor(mat, lower=True, check_finite=False)
    except linalg.LinAlgError:
        cond = np.linalg.cond(mat)
        raise RankError(f"normal equations are singular (condition estimate {cond:.3g})") from None
    diag = np.diag(cf[0]) ** 2
    cond_est = float(diag.max() / diag.min()) if diag.min() > 0 else math.inf
    if cond_est > _COND_LIMIT:
        raise RankError(f"normal equations are singular (condition estimate {cond_est:.3g})")
    return linalg.cho_solve(cf, rhs, check_finite=False)


def profile_coeffs(tilde: TildeData, alpha, ridge: float = 1e-10) -> np.ndarray:
    """Closed-form spline coefficients for the residual target ``Y~ - W~ alpha``."""
    alpha = np.asarray(alpha, dtype=float).reshape(-1)
    target = tilde.y - tilde.w @ alpha if alpha.size else tilde.y
    return _solve_normal(tilde.b, target, ridge)


def normal_equation_residual(design: np.ndarray, target: np.ndarray, coef: np.ndarray) -> float:
    """Relative max-norm residual of ``B'B b = B'y``."""
    lhs = design.T @ (design @ coef)
    rhs = design.T @ target
    scale = np.max(np.abs(rhs)) + np.max(np.abs(design.T @ design)) * np.max(np.abs(coef))
    return float(np.max(np.abs(lhs - rhs)) / max(scale, 1e-300))


def beta_from_free(beta_free: np.ndarray) -> np.ndarray:
    bf = np.asarray(beta_free, dtype=float)
    last = math.sqrt(max(0.0, 1.0 - float(bf @ bf)))
    return np.append(bf, last)


def bic(mean_sq: float, n: int, n_params: int) -> float:
    """``log(mean squared residual) + log(n) * n_params / n``."""
    return math.log(max(mean_sq, 1e-300)) + math.log(n) * n_params / n


class ProfileProblem:
    """Profiled criterion ``G_n(alpha, beta)`` with its analytic gradient.

    The interior knot count is fixed at construction; the basis endpoints
    follow the index range of each trial ``beta``.
    """

    def __init__(self, data: RegressionData, config: OptimizerConfig, knot_count: int):
        self.data = data
        self.config = config
        self.knot_count = int(knot_count)
        self.n = data.n
        self.q = data.q
        self.d = data.d
        m = config.m
        lam = data.eigenvalues
        _check_positive_eigs(lam, m)
        self._xm = data.xi[:, :m]
        self._lam = lam[:m]
        self.y_t = self.tilde(data.y)
        self.w_t = self.tilde(data.w)

    def tilde(self, v: np.ndarray) -> np.ndarray:
        if self._xm.shape[1] == 0:
            return np.array(v, dtype=float)
        proj = self._xm.T @ v
        proj = proj / (self._lam[:, None] if proj.ndim == 2 else self._lam)
        return v - self._xm @ proj / self.n

    def split(self, theta) -> tuple[np.ndarray, np.ndarray]:
        theta = np.asarray(theta, dtype=float)
        return theta[: self.q], beta_from_free(theta[self.q :])

    def pack(self, alpha, beta) -> np.ndarray:
        return np.concatenate([np.asarray(alpha, dtype=float).reshape(-1), np.asarray(beta, dtype=float)[:-1]])

    def feasible(self, theta) -> bool:
        bf = np.asarray(theta, dtype=float)[self.q :]
        return float(bf @ bf) <= 1.0 - self.config.rho0**2

    def basis_for(self, beta) -> tuple[SplineBasis, np.ndarray]:
        u = self.data.z @ beta
        lo, hi = float(u.min()), float(u.max())
        if not hi > lo:
            raise DegenerateIndexError("index values collapse to a point for this beta")
        return SplineBasis.equispaced(lo, hi, self.knot_count, self.config.degree), u

    def solve(self, alpha, beta, nder: int = 0):
        basis, u = self.basis_for(beta)
        des = basis.design(u, nder=nder)
        b_t = self.tilde(des[0])
        target = self.y_t - self.w_t @ alpha if self.q else self.y_t
        coef = _solve_normal(b_t, target, self.config.ridge)
        resid = target - b_t @ coef
        return basis, u, des, b_t, target, coef, resid

    def profile_alpha(self, beta) -> tuple[np.ndarray, float]:
        """Joint least squares in ``(alpha, b)`` at fixed ``beta``."""
        basis, u = self.basis_for(beta)
        design = np.column_stack([self.w_t, self.tilde(basis(u))])
        coef = _solve_normal(design, self.y_t, self.config.ridge)
        resid = self.y_t - design @ coef
        return coef[: self.q], float(resid @ resid) / self.n

    def value(self, theta) -> float:
        alpha, beta = self.split(theta)
        *_, resid = self.solve(alpha, beta)
        return float(resid @ resid) / self.n

    def value_and_grad(self, theta) -> tuple[float, np.ndarray]:
        """Objective and gradient by the envelope property of the inner solve.

        The index basis depends on beta through the evaluation points and
        through the endpoints ``min_i Z_i'beta`` and ``max_i Z_i'beta``;
        both dependencies are differentiated.
        """
        alpha, beta = self.split(theta)
        basis, u, des, b_t, target, coef, resid = self.solve(alpha, beta, nder=1)
        n = self.n
        val = float(resid @ resid) / n
        grad = np.empty(self.q + self.d - 1)
        if self.q:
            grad[: self.q] = -2.0 / n * (self.w_t.T @ resid)
        z = self.data.z
        # du_i / dbeta_r with beta_d = sqrt(1 - |beta_{-d}|^2)
        du = z[:, :-1] - np.outer(z[:, -1], beta[:-1] / beta[-1])
        imin, imax = int(np.argmin(u)), int(np.argmax(u))
        v = (u - u[imin]) / (u[imax] - u[imin])
        du_eff = du - np.outer(1.0 - v, du[imin]) - np.outer(v, du[imax])
        slope = des[1] @ coef
        dgb = self.tilde(slope[:, None] * du_eff)
        grad[self.q :] = -2.0 / n * (dgb.T @ resid)
        return val, grad


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------


def _knot_count_for(data: RegressionData, config: OptimizerConfig, beta) -> int:
    if config.knot_count is not None:
        return config.knot_count
    basis = build_index_knots(data.z @ beta, config.degree, h0=config.spacing(data.n))
    return basis.n_intervals


def objective(data: RegressionData, config: OptimizerConfig, alpha, beta, knot_count: int | None = None) -> float:
    """Mean squared profiled residual ``G_n(alpha, beta)``."""
    beta = np.asarray(beta, dtype=float)
    if abs(np.linalg.norm(beta) - 1) > 1e-8 or beta[-1] < config.rho0 - 1e-12:
        raise PreconditionError("beta must have unit norm and last entry >= rho0")
    k = _knot_count_for(data, config, beta) if knot_count is None else knot_count
    prob = ProfileProblem(data, config, k)
    return prob.value(prob.pack(alpha, beta))


def init_linear_fit(data: RegressionData, config: OptimizerConfig) -> tuple[np.ndarray, np.ndarray]:
    """Starting values from the model with the link replaced by ``c0 + c1 u``."""
    prob = ProfileProblem(data, config, 1)
    n = data.n
    design = np.column_stack([prob.tilde(np.ones(n)), prob.w_t, prob.tilde(data.z)])
    coef, _, rank, _ = np.linalg.lstsq(design, prob.y_t, rcond=None)
    if rank < design.shape[1]:
        raise RankError("linear initial design (1, W~, Z~) is rank deficient")
    alpha0 = coef[1 : 1 + data.q]
    b1 = coef[1 + data.q :]
    norm = np.linalg.norm(b1)
    if norm == 0:
        raise RankError("linear fit gives a zero index direction")
    beta0 = b1 / norm
    if beta0[-1] < 0:
        beta0 = -beta0
    if beta0[-1] < config.rho0:
        # lift onto the boundary beta_d = rho0, keeping the direction of beta_{-d}
        head = beta0[:-1]
        hn = np.linalg.norm(head)
        lim = math.sqrt(1.0 - config.rho0**2)
        beta0 = np.append(head * (lim / hn) if hn > 0 else head, config.rho0)
        beta0 /= np.linalg.norm(beta0)
    return alpha0, beta0


def _project_feasible(prob: ProfileProblem, theta: np.ndarray) -> np.ndarray:
    bf = theta[prob.q :]
    lim = math.sqrt(1.0 - prob.config.rho0**2)
    nrm = np.linalg.norm(bf)
    if nrm > lim:
        theta = theta.copy()
        theta[prob.q :] = bf * (lim * (1 - 1e-12) / nrm)
    return theta


def _safe_eval(prob: ProfileProblem, theta, grad: bool):
    try:
        return prob.value_and_grad(theta) if grad else (prob.value(theta), None)
    except (RankError, DegenerateIndexError):
        return math.inf, None


def _bfgs(prob: ProfileProblem, theta0: np.ndarray, diag: OptimDiagnostics) -> np.ndarray:
    cfg = prob.config
    theta = _project_feasible(prob, np.asarray(theta0, dtype=float))
    f, g = _safe_eval(prob, theta, True)
    if not np.isfinite(f):
        raise RankError("profiled objective is undefined at the starting point")
    diag.initial_objective = f
    diag.objective_trace.append(f)
    dim = theta.size
    hinv = np.eye(dim)
    fresh = True
    fails = 0
    polish = None
    for it in range(1, cfg.max_iter + _POLISH_STEPS + 1):
        if it > cfg.max_iter and polish is None:
            diag.message = "maximum iterations reached"
            break
        diag.iterations = it
        if f == 0.0 or not np.any(g):
            if polish is None:
                diag.converged, diag.message = True, "zero gradient"
            break
        p = -hinv @ g
        slope = float(g @ p)
        if slope >= 0:
            hinv, fresh = np.eye(dim), True
            p, slope = -g, -float(g @ g)
        t = 1.0
        accepted = False
        for _ in range(60):
            trial = theta + t * p
            if prob.feasible(trial):
                f_new, g_new = _safe_eval(prob, trial, True)
                if np.isfinite(f_new) and f_new <= f + 1e-4 * t * slope:
                    accepted = True
                    break
                if (
                    polish is not None
                    and np.isfinite(f_new)
                    and f_new <= f + 1e-14 * abs(f)
                    and np.linalg.norm(g_new) < np.linalg.norm(g)
                ):
                    # objective changes are below round-off; the gradient still decides
                    accepted = True
                    break
            t *= 0.5
        if not accepted:
            if polish is not None:
                break
            fails += 1
            diag.failed_line_searches += 1
            if t * np.linalg.norm(p) < cfg.tol_step * 1e-3 and np.linalg.norm(g) < 1e-6 * max(1.0, f):
                diag.converged, diag.message = True, "no further descent at working precision"
                break
            if fails >= 3:
                diag.message = "line search failed repeatedly"
                break
            hinv, fresh = np.eye(dim), True
            continue
        fails = 0
        step = trial - theta
        y = g_new - g
        sy = float(step @ y)
        rel_dec = (f - f_new) / max(abs(f), 1e-300)
        theta, f, g = trial, f_new, g_new
        diag.objective_trace.append(f)
        if sy > 1e-12 * np.linalg.norm(step) * np.linalg.norm(y):
            if fresh:
                hinv = np.eye(dim) * (sy / float(y @ y))
            rho = 1.0 / sy
            v = np.eye(dim) - rho * np.outer(step, y)
            hinv = v @ hinv @ v.T + rho * np.outer(step, step)
            fresh = False
        if polish is not None:
            polish -= 1
            if polish <= 0 or np.linalg.norm(g) <= 1e-10 * max(1.0, f):
                break
        elif np.linalg.norm(step) < cfg.tol_step:
            diag.converged, diag.message = True, "step below tolerance"
            break
        if polish is None and rel_dec < cfg.tol_obj:
            # the objective is flat to second order near the minimum, so keep
            # refining the parameters until the gradient is negligible
            diag.converged, diag.message = True, "relative objective decrease below tolerance"
            polish = _POLISH_STEPS
    if diag.message == "line search failed repeatedly":
        theta = _simplex_fallback(prob, theta, f, diag)
    return theta


def _simplex_fallback(prob: ProfileProblem, theta: np.ndarray, f: float, diag: OptimDiagnostics) -> np.ndarray:
    diag.used_fallback = True

    def fun(th):
        if not prob.feasible(th):
            return math.inf
        return _safe_eval(prob, th, False)[0]

    # infeasible vertices evaluate to inf, which scipy's spread test turns into nan
    with np.errstate(invalid="ignore"):
        res = optimize.minimize(
            fun,
            theta,
            method="Nelder-Mead",
            options={"xatol": prob.config.tol_step, "fatol": prob.config.tol_obj * max(f, 1e-300), "maxiter": 200 * theta.size},
        )
    if np.isfinite(res.fun) and res.fun <= f:
        theta = res.x
        diag.objective_trace.append(float(res.fun))
        diag.converged = bool(res.success)
        diag.message = "simplex fallback: " + str(res.message)
    return theta


def screen_directions(prob: ProfileProblem, count: int, seed: int) -> list[tuple[float, np.ndarray, np.ndarray]]:
    """Profiled criterion on ``count`` seeded unit directions, best first."""
    rng = np.random.default_rng(seed)
    out = []
    rho0 = prob.config.rho0
    while len(out) < count:
        beta = rng.standard_normal(prob.d)
        beta /= np.linalg.norm(beta)
        if beta[-1] < 0:
            beta = -beta
        if beta[-1] < rho0:
            continue
        try:
            alpha, val = prob.profile_alpha(beta)
        except (RankError, DegenerateIndexError):
            continue
        out.append((val, alpha, beta))
    out.sort(key=lambda item: item[0])
    return out


def minimize_profile(
    data: RegressionData,
    config: OptimizerConfig,
    alpha0=None,
    beta0=None,
) -> tuple[np.ndarray, np.ndarray, OptimDiagnostics]:
    """Minimise ``G_n`` over ``(alpha, beta_{-d})`` with ``beta_d >= rho0``.

    Starting values default to :func:`init_linear_fit`. A non-converged run
    is reported through the diagnostics, not raised.
    """
    if alpha0 is None or beta0 is None:
        a_init, b_init = init_linear_fit(data, config)
        alpha0 = a_init if alpha0 is None else alpha0
        beta0 = b_init if beta0 is None else beta0
    beta0 = np.asarray(beta0, dtype=float)
    beta0 = beta0 / np.linalg.norm(beta0)
    if beta0[-1] < config.rho0:
        raise PreconditionError("starting beta must have last entry >= rho0")
    k = _knot_count_for(data, config, beta0)
    prob = ProfileProblem(data, config, k)
    starts = [(alpha0, beta0)]
    if config.n_starts and config.n_screen:
        starts += [(a, b) for _, a, b in screen_directions(prob, config.n_screen, config.seed)[: config.n_starts]]
    best = None
    for a_s, b_s in starts:
        diag = OptimDiagnostics(knot_count=k)
        try:
            theta = _bfgs(prob, prob.pack(a_s, b_s), diag)
        except RankError:
            continue
        final = diag.objective_trace[-1]
        if best is None or final < best[0]:
            best = (final, theta, diag)
    if best is None:
        raise RankError("profiled objective is undefined at every starting point")
    _, theta, diag = best
    diag.initial_objective = prob.value(prob.pack(alpha0, beta0))
    alpha, beta = prob.split(theta)
    beta = beta / np.linalg.norm(beta)
    return alpha, beta, diag


def _link_residual(data: RegressionData, alpha, beta, g_values) -> np.ndarray:
    r = data.y - np.asarray(g_values, dtype=float)
    return r - data.w @ alpha if data.q else r


def slope_estimate(data: RegressionData, alpha, beta, g_values, m_tilde: int) -> tuple[np.ndarray, np.ndarray]:
    """Slope scores ``a_j = sum_i r_i xi_ij / (n lambda_j)`` and the curve ``a(t)``.

    ``g_values`` are the first-stage link values at the fitted index.
    """
    lam = data.eigenvalues
    _check_positive_eigs(lam, m_tilde)
    resid = _link_residual(data, alpha, beta, g_values)
    coeffs = data.xi[:, :m_tilde].T @ resid / (data.n * lam[:m_tilde])
    curve = coeffs @ data.eigen.eigenfunctions[:m_tilde]
    return coeffs, curve


def select_m_tilde(data: RegressionData, alpha, beta, g_values, grid) -> tuple[int, dict[int, float]]:
    """Slope cut-off minimising BIC over ``grid`` (ties to the smaller value)."""
    grid = sorted(int(v) for v in grid)
    if not grid:
        raise ConfigurationError("m_tilde grid is empty")
    if grid[-1] > data.scores.J:
        raise ConfigurationError(f"m_tilde grid exceeds the {data.scores.J} available components")
    resid = _link_residual(data, alpha, beta, g_values)
    top = grid[-1]
    coeffs, _ = slope_estimate(data, alpha, beta, g_values, top) if top else (np.zeros(0), None)
    crit = {}
    for mt in grid:
        r = resid - data.xi[:, :mt] @ coeffs[:mt]
        crit[mt] = bic(float(r @ r) / data.n, data.n, mt)
    best = min(grid, key=lambda v: (crit[v], v))
    return best, crit


def _second_stage(prob: ProfileProblem, alpha, beta, K_star: int) -> tuple[np.ndarray, SplineBasis, np.ndarray]:
    cfg = prob.config
    if K_star < cfg.degree + 1:
        raise ConfigurationError(f"K_star must be at least {cfg.degree + 1}")
    basis = build_index_knots(prob.data.z @ beta, cfg.degree, knot_count=K_star - cfg.degree)
    b_t = prob.tilde(basis(prob.data.z @ beta))
    target = prob.y_t - prob.w_t @ alpha if prob.q else prob.y_t
    coef = _solve_normal(b_t, target, cfg.ridge)
    return coef, basis, target - b_t @ coef


def second_stage_link(
    data: RegressionData, config: OptimizerConfig, alpha, beta, K_star: int
) -> tuple[np.ndarray, SplineBasis]:
    """Refit the link on a fresh basis of dimension ``K_star`` at the fitted index."""
    prob = ProfileProblem(data, config, 1)
    coef, basis, _ = _second_stage(prob, np.asarray(alpha, dtype=float), np.asarray(beta, dtype=float), K_star)
    return coef, basis


def select_K_star(data: RegressionData, config: OptimizerConfig, alpha, beta, grid) -> tuple[int, dict[int, float]]:
    """Second-stage basis dimension minimising BIC (ties to the smaller value)."""
    grid = sorted(int(v) for v in grid)
    if not grid:
        raise ConfigurationError("K_star grid is empty")
    prob = ProfileProblem(data, config, 1)
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    crit = {}
    for ks in grid:
        try:
            _, _, resid = _second_stage(prob, alpha, beta, ks)
        except RankError:
            crit[ks] = math.inf
            continue
        crit[ks] = bic(float(resid @ resid) / data.n, data.n, ks)
    best = min(grid, key=lambda v: (crit[v], v))
    if not np.isfinite(crit[best]):
        raise RankError("every K_star candidate gave a singular second-stage fit")
    return best, crit


def fit(data: RegressionData, config: OptimizerConfig | None = None) -> ProfileFit:
    """Full two-stage estimate: profile (alpha, beta), slope, then link."""
    config = config or OptimizerConfig()
    alpha0, beta0 = init_linear_fit(data, config)
    alpha, beta, diag = minimize_profile(data, config, alpha0, beta0)
    if not diag.converged:
        log.warning("profile optimisation did not converge: %s", diag.message)

    prob = ProfileProblem(data, config, diag.knot_count)
    basis1, u, _, b_t, target, b_first, resid = prob.solve(alpha, beta)
    g_vals = basis1.evaluate(b_first, u)

    j_pos = int(np.sum(data.eigenvalues > 0))
    mt_grid = config.m_tilde_candidates(data.n, min(j_pos, data.scores.J))
    m_tilde, bic_m = select_m_tilde(data, alpha, beta, g_vals, mt_grid)
    a_coeffs, a_curve = slope_estimate(data, alpha, beta, g_vals, m_tilde)

    k_star, bic_k = select_K_star(data, config, alpha, beta, config.k_star_candidates(data.n))
    b_second, basis2, _ = _second_stage(prob, alpha, beta, k_star)

    return ProfileFit(
        alpha=alpha,
        beta=beta,
        b_first=b_first,
        basis_first=basis1,
        a_coeffs=a_coeffs,
        a_curve=a_curve,
        b_second=b_second,
        basis_second=basis2,
        grid=data.sample.grid,
        mean_curve=np.array(data.sample.mean_curve),
        m=config.m,
        m_tilde=m_tilde,
        K_star=k_star,
        objective_value=float(resid @ resid) / data.n,
        iterations=diag.iterations,
        converged=diag.converged,
        initial_objective=diag.initial_objective,
        alpha_init=np.asarray(alpha0, dtype=float),
        beta_init=np.asarray(beta0, dtype=float),
        bic_m_tilde=bic_m,
        bic_k_star=bic_k,
        objective_trace=tuple(diag.objective_trace),
        message=diag.message,
    )


def _as_curves(fit_: ProfileFit, x_new) -> np.ndarray:
    if isinstance(x_new, FunctionalSample):
        if not x_new.grid.same_as(fit_.grid):
            x_new = interpolate(x_new, fit_.grid)
        raw = x_new.values + (x_new.mean_curve if x_new.mean_removed else 0.0)
        return np.atleast_2d(raw)
    x = np.atleast_2d(np.asarray(x_new, dtype=float))
    if x.shape[1] != fit_.grid.size:
        raise DimensionError(f"new curves have {x.shape[1]} points, the fit grid has {fit_.grid.size}")
    return x


def predict(fit_: ProfileFit, x_new, w_new, z_new) -> np.ndarray:
    """``int a(t) (X(t) - mean(t)) dt + W'alpha + g(Z'beta)`` per row.

    ``x_new`` holds raw (uncentered) curves on the fit grid, or a
    :class:`FunctionalSample` that is interpolated onto it.
    """
    x = _as_curves(fit_, x_new)
    n = x.shape[0]
    z = np.asarray(z_new, dtype=float).reshape(n, -1)
    if z.shape[1] != fit_.beta.size:
        raise DimensionError(f"expected {fit_.beta.size} index covariates, got {z.shape[1]}")
    q = fit_.alpha.size
    w = np.asarray(w_new, dtype=float).reshape(n, -1) if q else np.zeros((n, 0))
    if w.shape[1] != q:
        raise DimensionError(f"expected {q} scalar covariates, got {w.shape[1]}")
    if n == 0:
        return np.zeros(0)
    func = ((x - fit_.mean_curve) * fit_.grid.weights) @ fit_.a_curve
    return func + (w @ fit_.alpha if q else 0.0) + fit_.g_hat(z @ fit_.beta)


def fitted_values(fit_: ProfileFit, data: RegressionData) -> np.ndarray:
    raw = data.sample.values + data.sample.mean_curve
    return predict(fit_, raw, data.w, data.z)


def linear_baseline(data: RegressionData, config: OptimizerConfig | None = None) -> dict:
    """Least-squares partial functional linear fit with an identity link.

    Returned as a plain estimate bundle so it can be compared to
    :func:`fit` in Monte Carlo studies.
    """
    config = config or OptimizerConfig()
    alpha0, beta0 = init_linear_fit(data, config)
    return {"alpha": alpha0, "beta": beta0}
