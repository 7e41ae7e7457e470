"""Seeded data generators for the two simulation designs, error metrics and
a replication harness.

Randomness comes from Philox (a counter-based generator) keyed through
``SeedSequence(master_seed, spawn_key=(replication, stream))``, so every
replication and every stream inside it is reproducible on its own and
independent of execution order.
"""

from __future__ import annotations

import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Literal

import numpy as np

from .curves import FunctionalSample, Grid, center
from .errors import ConfigurationError, DimensionError, HarnessError, PflsimError
from .estimator import OptimizerConfig, ProfileFit, RegressionData, fit, linear_baseline, predict

log = logging.getLogger(__name__)

N_TERMS = 50
STREAMS = {"train": 0, "test": 1}


def rng_for(seed: int, replication: int, stream: str) -> np.random.Generator:
    """Independent Philox stream for ``(seed, replication, stream)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(replication), STREAMS[stream]))
    return np.random.Generator(np.random.Philox(ss))


def cosine_basis(t: np.ndarray, n_terms: int = N_TERMS) -> np.ndarray:
    """``phi_1 = 1``, ``phi_j = sqrt(2) cos((j-1) pi t)``; one function per row."""
    j = np.arange(n_terms)[:, None]
    phi = np.sqrt(2.0) * np.cos(j * np.pi * np.asarray(t)[None, :])
    phi[0] = 1.0
    return phi


def slope_coefficients(n_terms: int = N_TERMS) -> np.ndarray:
    j = np.arange(1, n_terms + 1, dtype=float)
    a = 4.0 * (-1.0) ** (j + 1) * j**-2
    a[0] = 0.3
    return a


def eigenvalues_m41(delta: float, n_terms: int = N_TERMS) -> np.ndarray:
    return np.arange(1, n_terms + 1, dtype=float) ** -delta


def eigenvalues_m42(delta: float, n_terms: int = N_TERMS) -> np.ndarray:
    lam = np.empty(n_terms)
    lam[0] = 1.0
    for j in range(2, n_terms + 1):
        if j <= 4:
            lam[j - 1] = 0.22**2 * (1 - 0.0001 * j) ** 2
        else:
            blk, k = divmod(j, 5)
            lam[j - 1] = 0.22**2 * ((5 * blk) ** (-delta / 2) - 0.0001 * k) ** 2
    return lam


@dataclass(frozen=True)
class Truth:
    """Population quantities of a simulation design."""

    model: str
    alpha: np.ndarray
    beta: np.ndarray
    a_coeffs: np.ndarray
    eigenvalues: np.ndarray
    grid: Grid
    sigma: float
    E: float = math.nan
    F: float = math.nan

    def g(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if self.model == "m41":
            return np.sin(np.pi * (u - self.E) / (self.F - self.E))
        return -2.0 * u + 5.0

    def a_curve(self, t=None) -> np.ndarray:
        t = self.grid.points if t is None else t
        return self.a_coeffs @ cosine_basis(t, self.a_coeffs.size)


@dataclass(frozen=True)
class Draw:
    """One generated sample: raw curves, scores, covariates and responses."""

    curves: FunctionalSample
    xi: np.ndarray
    w: np.ndarray
    z: np.ndarray
    eps: np.ndarray
    y: np.ndarray
    truth: Truth

    @property
    def signal(self) -> np.ndarray:
        """Noiseless regression value for each row."""
        return self.y - self.eps


def _truth_m41(delta: float, grid: Grid, sigma: float) -> Truth:
    s3 = math.sqrt(3.0)
    return Truth(
        "m41",
        alpha=np.array([0.3]),
        beta=np.ones(3) / s3,
        a_coeffs=slope_coefficients(),
        eigenvalues=eigenvalues_m41(delta),
        grid=grid,
        sigma=sigma,
        E=s3 / 2 - 1.645 / math.sqrt(12.0),
        F=s3 / 2 + 1.645 / math.sqrt(12.0),
    )


def _truth_m42(delta: float, grid: Grid, sigma: float) -> Truth:
    return Truth(
        "m42",
        alpha=np.array([-2.0, 1.5]),
        beta=np.array([1.0, 2.0, 2.0]) / 3.0,
        a_coeffs=slope_coefficients(),
        eigenvalues=eigenvalues_m42(delta),
        grid=grid,
        sigma=sigma,
    )


def _draw(truth: Truth, n: int, rng: np.random.Generator, start_index: int = 0) -> Draw:
    lam = truth.eigenvalues
    xi = rng.standard_normal((n, lam.size)) * np.sqrt(lam)
    curves = xi @ cosine_basis(truth.grid.points, lam.size)
    z = rng.uniform(0.0, 1.0, size=(n, 3))
    if truth.model == "m41":
        idx = np.arange(start_index + 1, start_index + n + 1)
        w = (idx % 2 == 0).astype(float)[:, None]
    else:
        j = np.arange(1, lam.size + 1, dtype=float)
        v = np.column_stack([rng.normal(-1.0, 2.0, n), rng.normal(2.0, 3.0, n)])
        w = np.column_stack([xi @ (k * j**-2) for k in (1, 2)]) + v
    eps = rng.normal(0.0, truth.sigma, n)
    signal = xi @ truth.a_coeffs + w @ truth.alpha + truth.g(z @ truth.beta)
    return Draw(FunctionalSample(truth.grid, curves), xi, w, z, eps, signal + eps, truth)


def generate(
    model: Literal["m41", "m42"],
    n: int,
    delta: float,
    seed: int,
    replication: int = 0,
    stream: str = "train",
    grid_size: int = 101,
    sigma: float | None = None,
    start_index: int = 0,
) -> Draw:
    """One seeded draw from either design."""
    grid = Grid.uniform(grid_size)
    if model == "m41":
        truth = _truth_m41(delta, grid, 0.5 if sigma is None else sigma)
    elif model == "m42":
        truth = _truth_m42(delta, grid, 1.0 if sigma is None else sigma)
    else:
        raise ConfigurationError(f"unknown model {model!r}")
    return _draw(truth, n, rng_for(seed, replication, stream), start_index)


def to_regression_data(draw: Draw, j_max: int | None = None) -> RegressionData:
    return RegressionData.build(center(draw.curves), draw.y, draw.w, draw.z, j_max)


def generate_model41(n: int, delta: float, seed: int, **kw) -> tuple[RegressionData, Truth]:
    d = generate("m41", n, delta, seed, **kw)
    return to_regression_data(d), d.truth


def generate_model42(n: int, delta: float, seed: int, **kw) -> tuple[RegressionData, Truth]:
    d = generate("m42", n, delta, seed, **kw)
    return to_regression_data(d), d.truth


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def mise(estimate, truth, grid: Grid) -> float:
    """Integrated squared difference by trapezoid on ``grid``."""
    est = np.asarray(estimate, dtype=float)
    tru = np.asarray(truth, dtype=float)
    if est.shape != (grid.size,) or tru.shape != (grid.size,):
        raise DimensionError("estimate and truth must be evaluated on the grid")
    return float(np.sum(grid.weights * (est - tru) ** 2))


def link_mise(fit_: ProfileFit, truth: Truth, size: int = 201) -> float:
    """MISE of the second-stage link over the fitted index range."""
    b = fit_.basis_second
    grid = Grid.uniform(size, b.lo, b.hi)
    return mise(fit_.g_hat(grid.points), truth.g(grid.points), grid)


def slope_mise(fit_: ProfileFit, truth: Truth) -> float:
    return mise(fit_.a_curve, truth.a_curve(fit_.grid.points), fit_.grid)


def mae_prediction(predictions, truth_values) -> float:
    """Mean absolute difference between predictions and noiseless truth."""
    p = np.asarray(predictions, dtype=float)
    t = np.asarray(truth_values, dtype=float)
    if p.size == 0:
        raise ValueError("need at least one test row")
    return float(np.mean(np.abs(p - t)))


# ---------------------------------------------------------------------------
# Monte Carlo harness
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SimSpec:
    model: str = "m41"
    n: int = 200
    delta: float = 1.5
    replications: int = 100
    seed: int = 20240601
    test_size: int = 300
    grid_size: int = 101
    sigma: float | None = None
    config: OptimizerConfig = field(default_factory=OptimizerConfig)
    baseline: bool = False

    def __post_init__(self):
        if self.model not in ("m41", "m42"):
            raise ConfigurationError(f"unknown model {self.model!r}")
        if self.n < 30:
            raise ConfigurationError("n must be at least 30")
        if not self.delta > 1:
            raise ConfigurationError("delta must exceed 1")
        if self.replications < 1:
            raise ConfigurationError("replications must be at least 1")
        if self.test_size < 1:
            raise ConfigurationError("test_size must be at least 1")


@dataclass
class ReplicationRecord:
    replication: int
    seed: int
    ok: bool
    alpha: list[float] = field(default_factory=list)
    beta: list[float] = field(default_factory=list)
    mise_g: float = math.nan
    mise_a: float = math.nan
    mae: float = math.nan
    m_tilde: int = 0
    K_star: int = 0
    iterations: int = 0
    converged: bool = False
    baseline_alpha: list[float] = field(default_factory=list)
    baseline_beta: list[float] = field(default_factory=list)
    error: str = ""
    runtime: float = field(default=0.0, compare=False)


def run_replication(spec: SimSpec, r: int) -> ReplicationRecord:
    """Generate, fit and score replication ``r`` of ``spec``."""
    t0 = time.perf_counter()
    rec = ReplicationRecord(replication=r, seed=spec.seed, ok=False)
    try:
        train = generate(spec.model, spec.n, spec.delta, spec.seed, r, "train", spec.grid_size, spec.sigma)
        data = to_regression_data(train)
        fit_ = fit(data, spec.config)
        test = generate(
            spec.model, spec.test_size, spec.delta, spec.seed, r, "test", spec.grid_size, spec.sigma, start_index=spec.n
        )
        pred = predict(fit_, test.curves.values, test.w, test.z)
        rec.alpha = [float(v) for v in fit_.alpha]
        rec.beta = [float(v) for v in fit_.beta]
        rec.mise_g = link_mise(fit_, train.truth)
        rec.mise_a = slope_mise(fit_, train.truth)
        rec.mae = mae_prediction(pred, test.signal)
        rec.m_tilde = fit_.m_tilde
        rec.K_star = fit_.K_star
        rec.iterations = fit_.iterations
        rec.converged = fit_.converged
        if spec.baseline:
            base = linear_baseline(data, spec.config)
            rec.baseline_alpha = [float(v) for v in base["alpha"]]
            rec.baseline_beta = [float(v) for v in base["beta"]]
        rec.ok = True
    except (PflsimError, ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
        rec.error = f"{type(exc).__name__}: {exc}"
        log.warning("replication %d failed: %s", r, rec.error)
    rec.runtime = time.perf_counter() - t0
    return rec


def _truth_params(spec: SimSpec) -> tuple[np.ndarray, np.ndarray]:
    t = _truth_m41(spec.delta, Grid.uniform(2), 0.5) if spec.model == "m41" else _truth_m42(spec.delta, Grid.uniform(2), 1.0)
    return t.alpha, t.beta


def _summ(values: np.ndarray, truth: float) -> dict:
    mean = float(np.mean(values))
    return {"truth": float(truth), "mean": mean, "bias": mean - float(truth), "sd": float(np.std(values))}


def aggregate(spec: SimSpec, records: list[ReplicationRecord]) -> dict:
    """Summaries computed only from the per-replication records."""
    good = [r for r in records if r.ok]
    alpha0, beta0 = _truth_params(spec)
    out: dict = {"replications": len(records), "failures": len(records) - len(good), "parameters": {}}
    if not good:
        return out
    alpha = np.array([r.alpha for r in good]).reshape(len(good), -1)
    beta = np.array([r.beta for r in good])
    for k in range(alpha0.size):
        out["parameters"][f"alpha{k + 1}"] = _summ(alpha[:, k], alpha0[k])
    for k in range(beta0.size):
        out["parameters"][f"beta{k + 1}"] = _summ(beta[:, k], beta0[k])
    if spec.baseline:
        out["baseline"] = {}
        ba = np.array([r.baseline_alpha for r in good]).reshape(len(good), -1)
        bb = np.array([r.baseline_beta for r in good])
        for k in range(alpha0.size):
            out["baseline"][f"alpha{k + 1}"] = _summ(ba[:, k], alpha0[k])
        for k in range(beta0.size):
            out["baseline"][f"beta{k + 1}"] = _summ(bb[:, k], beta0[k])
    for key in ("mise_g", "mise_a", "mae"):
        v = np.array([getattr(r, key) for r in good])
        out[key] = {
            "mean": float(np.mean(v)),
            "median": float(np.median(v)),
            "q25": float(np.quantile(v, 0.25)),
            "q75": float(np.quantile(v, 0.75)),
        }
    out["converged"] = int(sum(r.converged for r in good))
    return out


@dataclass
class McReport:
    spec: SimSpec
    records: list[ReplicationRecord]
    aggregates: dict

    @property
    def failures(self) -> int:
        return self.aggregates["failures"]

    def to_dict(self) -> dict:
        spec = asdict(self.spec)
        recs = []
        for r in self.records:
            d = asdict(r)
            d.pop("runtime")
            recs.append(d)
        return {"spec": spec, "aggregates": self.aggregates, "records": recs}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=True)

    def table_rows(self) -> tuple[list[str], list[list]]:
        q = len(self.aggregates["parameters"]) - 3
        header = ["replication", "ok"] + [f"alpha{k + 1}" for k in range(max(q, 0))] + [
            "beta1", "beta2", "beta3", "mise_g", "mise_a", "mae", "m_tilde", "K_star", "converged",
        ]
        rows = []
        for r in self.records:
            alpha = r.alpha if r.ok else [math.nan] * max(q, 0)
            beta = r.beta if r.ok else [math.nan] * 3
            rows.append([r.replication, int(r.ok), *alpha, *beta, r.mise_g, r.mise_a, r.mae, r.m_tilde, r.K_star, int(r.converged)])
        return header, rows

    def summary(self) -> str:
        a = self.aggregates
        lines = [
            f"model {self.spec.model}  n={self.spec.n}  delta={self.spec.delta}  reps={a['replications']}  failures={a['failures']}",
            f"{'param':<8}{'truth':>10}{'bias':>12}{'sd':>12}",
        ]
        for name, s in a.get("parameters", {}).items():
            lines.append(f"{name:<8}{s['truth']:>10.4f}{s['bias']:>12.4f}{s['sd']:>12.4f}")
        for key, label in (("mise_g", "MISE(g)"), ("mise_a", "MISE(a)"), ("mae", "MAE")):
            if key in a:
                lines.append(f"{label:<8}  mean {a[key]['mean']:.4f}  median {a[key]['median']:.4f}")
        return "\n".join(lines)


def _run_chunk(args):
    spec, reps = args
    return [run_replication(spec, r) for r in reps]


def monte_carlo(spec: SimSpec, jobs: int = 1, progress: Callable[[int], None] | None = None) -> McReport:
    """Run all replications, optionally across ``jobs`` worker processes.

    Records are ordered by replication index before aggregation, so the
    report does not depend on scheduling.
    """
    reps = list(range(1, spec.replications + 1))
    if jobs <= 1:
        records = []
        for r in reps:
            records.append(run_replication(spec, r))
            if progress:
                progress(r)
    else:
        chunks = [reps[i::jobs] for i in range(jobs)]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            records = [rec for part in pool.map(_run_chunk, [(spec, c) for c in chunks]) for rec in part]
    records.sort(key=lambda rec: rec.replication)
    report = McReport(spec, records, aggregate(spec, records))
    if report.failures > 0.2 * spec.replications:
        raise HarnessError(f"{report.failures} of {spec.replications} replications failed")
    return report


def default_jobs() -> int:
    return max(1, os.cpu_count() or 1)
