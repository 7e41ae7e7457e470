"""Discretely observed curves on a shared grid.

Curves live as rows of an ``n x G`` matrix over one ordered grid. Inner
products use trapezoidal weights, which are exact for the piecewise-linear
curves produced by linear interpolation.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from ._io import atomic_write_text
from .errors import DimensionError, ExtrapolationError, FormatError, ParseError


def trapezoid_weights(points: np.ndarray) -> np.ndarray:
    """Trapezoidal quadrature weights for an ordered grid."""
    points = np.asarray(points, dtype=float)
    dt = np.diff(points)
    w = np.zeros_like(points)
    w[:-1] += dt / 2
    w[1:] += dt / 2
    return w


@dataclass(frozen=True)
class Grid:
    """Ordered evaluation points with trapezoidal weights."""

    points: np.ndarray
    weights: np.ndarray = field(repr=False)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 1 or pts.size < 2:
            raise DimensionError("a grid needs at least 2 points")
        if not np.all(np.isfinite(pts)) or np.any(np.diff(pts) <= 0):
            raise DimensionError("grid points must be finite and strictly increasing")
        pts.setflags(write=False)
        w = np.asarray(self.weights, dtype=float)
        w.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_points(cls, points: Sequence[float]) -> "Grid":
        pts = np.asarray(points, dtype=float)
        if pts.ndim != 1 or pts.size < 2:
            raise DimensionError("a grid needs at least 2 points")
        return cls(pts, trapezoid_weights(pts))

    @classmethod
    def uniform(cls, size: int = 101, lo: float = 0.0, hi: float = 1.0) -> "Grid":
        return cls.from_points(np.linspace(lo, hi, size))

    @property
    def size(self) -> int:
        return self.points.size

    @property
    def lo(self) -> float:
        return float(self.points[0])

    @property
    def hi(self) -> float:
        return float(self.points[-1])

    def same_as(self, other: "Grid") -> bool:
        return self.size == other.size and np.array_equal(self.points, other.points)


@dataclass(frozen=True)
class FunctionalSample:
    """``n`` curves evaluated on a common grid."""

    grid: Grid
    values: np.ndarray
    mean_removed: bool = False
    mean_curve: np.ndarray | None = None

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.ndim == 1:
            vals = vals[None, :]
        if vals.ndim != 2 or vals.shape[1] != self.grid.size:
            raise DimensionError(f"values have shape {vals.shape}, grid has {self.grid.size} points")
        if not np.all(np.isfinite(vals)):
            raise DimensionError("curve values must be finite")
        vals.setflags(write=False)
        mean = np.zeros(self.grid.size) if self.mean_curve is None else np.array(self.mean_curve, dtype=float)
        if mean.shape != (self.grid.size,):
            raise DimensionError("mean_curve length must match the grid")
        if self.mean_removed and vals.size:
            tol = 1e-10 * max(float(np.max(np.abs(vals))), np.finfo(float).tiny)
            if np.max(np.abs(vals.mean(axis=0))) > tol:
                raise DimensionError("sample is flagged as centered but its column means are not zero")
        mean.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "mean_curve", mean)

    @property
    def n(self) -> int:
        return self.values.shape[0]



def inner_product(f, g, grid: Grid) -> float:
    """Trapezoidal approximation of the L2 inner product on ``grid``."""
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    if f.shape != (grid.size,) or g.shape != (grid.size,):
        raise DimensionError(f"expected length-{grid.size} vectors, got {f.shape} and {g.shape}")
    return float(np.sum(grid.weights * (f * g)))


def gram(values: np.ndarray, other: np.ndarray, grid: Grid) -> np.ndarray:
    """All pairwise inner products between rows of two curve matrices."""
    return (np.asarray(values) * grid.weights) @ np.asarray(other).T


def center(sample: FunctionalSample) -> FunctionalSample:
    """Subtract the pointwise sample mean; the removed mean is kept."""
    mean = sample.values.mean(axis=0)
    total = mean + sample.mean_curve if sample.mean_removed else mean
    return FunctionalSample(sample.grid, sample.values - mean, mean_removed=True, mean_curve=total)


def interpolate(
    sample: FunctionalSample,
    target: Grid,
    method: Literal["linear", "cubic"] = "linear",
) -> FunctionalSample:
    """Re-evaluate every curve on ``target``.

    ``linear`` is piecewise-linear interpolation between grid points,
    ``cubic`` a natural interpolating cubic spline.
    """
    src = sample.grid
    if target.same_as(src):
        return FunctionalSample(target, sample.values, sample.mean_removed, sample.mean_curve)
    tol = 1e-12 * max(1.0, abs(src.lo), abs(src.hi))
    if target.lo < src.lo - tol or target.hi > src.hi + tol:
        raise ExtrapolationError(
            f"target range [{target.lo}, {target.hi}] exceeds source range [{src.lo}, {src.hi}]"
        )
    t = np.clip(target.points, src.lo, src.hi)
    if method == "linear":
        vals = np.vstack([np.interp(t, src.points, row) for row in sample.values])
        mean = np.interp(t, src.points, sample.mean_curve)
    elif method in ("cubic", "cubic-spline"):
        vals = CubicSpline(src.points, sample.values, axis=1, bc_type="natural")(t)
        mean = CubicSpline(src.points, sample.mean_curve, bc_type="natural")(t)
    else:
        raise ValueError(f"unknown interpolation method {method!r}")
    # interpolated curves of a centered sample stay centered (linear map)
    return FunctionalSample(target, vals, sample.mean_removed, mean)


def common_grid(grids: Sequence[Grid], size: int = 101) -> Grid:
    """Equispaced grid over the intersection of the given observation ranges."""
    lo = max(g.lo for g in grids)
    hi = min(g.hi for g in grids)
    if not hi > lo:
        raise DimensionError("observation ranges do not overlap")
    return Grid.uniform(size, lo, hi)


def _sniff_delimiter(first_line: str) -> str:
    return "\t" if "\t" in first_line else ","


def read_table(path: str | Path) -> tuple[list[list[str]], str]:
    """Raw cells of a comma- or tab-delimited file, blank lines skipped."""
    text = Path(path).read_text()
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        return [], ","
    delim = _sniff_delimiter(lines[0])
    rows = [[c.strip() for c in row] for row in csv.reader(lines, delimiter=delim)]
    return rows, delim


def _parse_row(cells: list[str], lineno: int, path) -> list[float]:
    out = []
    for col, cell in enumerate(cells, start=1):
        try:
            out.append(float(cell))
        except ValueError:
            raise ParseError(f"{path}: row {lineno}, column {col}: cannot parse {cell!r} as a number") from None
    return out


def load_curves(path: str | Path, grid_header: bool = False) -> FunctionalSample:
    """Read one curve per row from a delimited text file.

    A first row starting with ``#`` is always read as the grid; otherwise
    ``grid_header=True`` treats the first row as grid points. Without a
    header the grid is equispaced on [0, 1].
    """
    rows, _ = read_table(path)
    if not rows:
        raise FormatError(f"{path}: no data rows")
    header = None
    first = rows[0]
    if first and first[0].startswith("#"):
        first = [first[0].lstrip("#").strip(), *first[1:]]
        header = _parse_row([c for c in first if c != ""], 1, path)
        body = rows[1:]
        offset = 2
    elif grid_header:
        header = _parse_row(first, 1, path)
        body = rows[1:]
        offset = 2
    else:
        body = rows
        offset = 1
    width = len(header) if header is not None else (len(body[0]) if body else 0)
    if width < 2:
        raise DimensionError(f"{path}: need at least 2 columns per curve, found {width}")
    values = []
    for i, cells in enumerate(body):
        if len(cells) != width:
            raise FormatError(f"{path}: ragged row {i + offset}: expected {width} columns, found {len(cells)}")
        values.append(_parse_row(cells, i + offset, path))
    grid = Grid.from_points(header) if header is not None else Grid.uniform(width)
    vals = np.asarray(values, dtype=float).reshape(len(values), width)
    return FunctionalSample(grid, vals)


def save_curves(path: str | Path, sample: FunctionalSample, delimiter: str = ",") -> None:
    """Write curves with a ``#``-prefixed grid header row."""
    fmt = "%.17g"
    lines = ["# " + delimiter.join(fmt % t for t in sample.grid.points)]
    lines += [delimiter.join(fmt % v for v in row) for row in sample.values]
    atomic_write_text(path, "\n".join(lines) + "\n")
