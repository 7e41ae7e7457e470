"""JSON serialisation of a fitted model, sufficient for prediction."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ._io import atomic_write_text
from .curves import Grid
from .errors import FormatError
from .estimator import ProfileFit
from .splines import SplineBasis

FORMAT = "pflsim-fit"
VERSION = 1


def _floats(a) -> list[float]:
    return [float(v) for v in np.ravel(a)]


def fit_to_dict(fit: ProfileFit) -> dict:
    return {
        "format": FORMAT,
        "version": VERSION,
        "grid": _floats(fit.grid.points),
        "mean_curve": _floats(fit.mean_curve),
        "alpha": _floats(fit.alpha),
        "beta": _floats(fit.beta),
        "first_stage": {
            "degree": fit.basis_first.degree,
            "knots": _floats(fit.basis_first.knots),
            "coef": _floats(fit.b_first),
        },
        "second_stage": {
            "degree": fit.basis_second.degree,
            "knots": _floats(fit.basis_second.knots),
            "coef": _floats(fit.b_second),
        },
        "a_coeffs": _floats(fit.a_coeffs),
        "a_curve": _floats(fit.a_curve),
        "m": fit.m,
        "m_tilde": fit.m_tilde,
        "K_star": fit.K_star,
        "diagnostics": {
            "objective_value": fit.objective_value,
            "initial_objective": fit.initial_objective,
            "iterations": fit.iterations,
            "converged": fit.converged,
            "message": fit.message,
            "alpha_init": _floats(fit.alpha_init) if fit.alpha_init is not None else None,
            "beta_init": _floats(fit.beta_init) if fit.beta_init is not None else None,
            "bic_m_tilde": {str(k): v for k, v in fit.bic_m_tilde.items()},
            "bic_k_star": {str(k): v for k, v in fit.bic_k_star.items()},
        },
    }


def fit_from_dict(doc: dict) -> ProfileFit:
    if doc.get("format") != FORMAT:
        raise FormatError(f"not a {FORMAT} document")
    if doc.get("version") != VERSION:
        raise FormatError(f"unsupported artifact version {doc.get('version')!r}")
    try:
        diag = doc["diagnostics"]
        first, second = doc["first_stage"], doc["second_stage"]
        arr = lambda key: np.asarray(doc[key], dtype=float)  # noqa: E731
        return ProfileFit(
            alpha=arr("alpha"),
            beta=arr("beta"),
            b_first=np.asarray(first["coef"], dtype=float),
            basis_first=SplineBasis(int(first["degree"]), np.asarray(first["knots"], dtype=float)),
            a_coeffs=arr("a_coeffs"),
            a_curve=arr("a_curve"),
            b_second=np.asarray(second["coef"], dtype=float),
            basis_second=SplineBasis(int(second["degree"]), np.asarray(second["knots"], dtype=float)),
            grid=Grid.from_points(doc["grid"]),
            mean_curve=arr("mean_curve"),
            m=int(doc["m"]),
            m_tilde=int(doc["m_tilde"]),
            K_star=int(doc["K_star"]),
            objective_value=float(diag["objective_value"]),
            iterations=int(diag["iterations"]),
            converged=bool(diag["converged"]),
            initial_objective=float(diag.get("initial_objective", float("nan"))),
            alpha_init=None if diag.get("alpha_init") is None else np.asarray(diag["alpha_init"]),
            beta_init=None if diag.get("beta_init") is None else np.asarray(diag["beta_init"]),
            bic_m_tilde={int(k): float(v) for k, v in diag.get("bic_m_tilde", {}).items()},
            bic_k_star={int(k): float(v) for k, v in diag.get("bic_k_star", {}).items()},
            message=str(diag.get("message", "")),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed fit artifact: {exc}") from None


def save_fit(fit: ProfileFit, path: str | Path) -> None:
    atomic_write_text(path, json.dumps(fit_to_dict(fit), indent=2) + "\n")


def load_fit(path: str | Path) -> ProfileFit:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return fit_from_dict(doc)
