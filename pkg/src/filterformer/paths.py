"""Sampled continuous paths on a uniform time grid.

Every path in the package lives on a shared uniform grid ``0 = t_0 < ... < t_N = T``.
Restricting evaluation and query times to grid points makes the discrete sup norm exact
for piecewise-linear paths whose knots sit on the grid.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidPathError

GRID_TOL = 1e-12


def uniform_grid(T: float, steps: int) -> np.ndarray:
    if steps < 1 or not T > 0:
        raise InvalidPathError(f"need T > 0 and steps >= 1, got T={T}, steps={steps}")
    return np.linspace(0.0, T, steps + 1)


@dataclass(frozen=True, eq=False)
class SampledPath:
    """A continuous path ``y: [0, T] -> R^d`` sampled on a uniform grid.

    Attributes
    ----------
    grid : ndarray, shape (n,)
        Strictly increasing times with ``grid[0] = 0`` and ``grid[-1] = T``.
    values : ndarray, shape (n, d)
        Row ``i`` is ``y(grid[i])``.
    """

    grid: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if grid.ndim != 1 or grid.size < 2:
            raise InvalidPathError("grid must be a 1-D array with at least two points")
        if values.shape[0] != grid.size:
            raise InvalidPathError(
                f"values has {values.shape[0]} rows but grid has {grid.size} points")
        T = grid[-1]
        if grid[0] != 0.0 or not T > 0:
            raise InvalidPathError("grid must start at 0 and end at T > 0")
        dt = np.diff(grid)
        if np.max(np.abs(dt - T / (grid.size - 1))) > GRID_TOL * T:
            raise InvalidPathError("grid spacing is not uniform")
        if not np.all(np.isfinite(values)):
            raise InvalidPathError("path values must be finite")
        grid.flags.writeable = False
        values.flags.writeable = False
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)

    @property
    def T(self) -> float:
        return float(self.grid[-1])

    @property
    def dt(self) -> float:
        return self.T / (self.grid.size - 1)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def steps(self) -> int:
        return self.grid.size - 1

    def __len__(self) -> int:
        return self.grid.size

    def __sub__(self, other: SampledPath) -> SampledPath:
        check_same_grid(self, other)
        return SampledPath(self.grid, self.values - other.values)

    def __add__(self, other: SampledPath) -> SampledPath:
        check_same_grid(self, other)
        return SampledPath(self.grid, self.values + other.values)

    def index_of(self, t: float) -> int:
        """Grid index of ``t``; raises if ``t`` is not a grid point."""
        k = int(round(t / self.dt))
        if k < 0 or k > self.steps or abs(self.grid[k] - t) > 1e-9 * max(1.0, self.T):
            raise InvalidPathError(f"time {t} is not on the grid")
        return k

    def at(self, t: float) -> np.ndarray:
        """Value at an arbitrary time by linear interpolation (reporting only)."""
        if t < 0 or t > self.T * (1 + GRID_TOL):
            raise InvalidPathError(f"time {t} outside [0, {self.T}]")
        return np.array([np.interp(t, self.grid, self.values[:, j]) for j in range(self.dim)])

    def prefix(self, k: int) -> np.ndarray:
        """Rows ``0..k`` of the sampled values (the observed history up to ``t_k``)."""
        return self.values[: k + 1]


def check_same_grid(p: SampledPath, q: SampledPath) -> None:
    if p.grid.shape != q.grid.shape or not np.allclose(p.grid, q.grid, rtol=0, atol=GRID_TOL * p.T):
        raise InvalidPathError("paths live on different grids")
    if p.dim != q.dim:
        raise InvalidPathError(f"path dimensions differ: {p.dim} vs {q.dim}")


def sup_norm(p: SampledPath) -> float:
    """Largest Euclidean row norm, i.e. ``max_s |y_s|_2`` over the grid."""
    return float(np.max(np.linalg.norm(p.values, axis=1)))


def sup_distance(p: SampledPath, q: SampledPath) -> float:
    check_same_grid(p, q)
    return float(np.max(np.linalg.norm(p.values - q.values, axis=1)))


def restrict(p: SampledPath, t: float) -> np.ndarray:
    """Samples of ``p`` on ``[0, t]`` as an array of rows."""
    return p.values[: p.index_of(t) + 1]


def horizontal_extension(p: SampledPath, t: float, T: float | None = None) -> SampledPath:
    """Freeze ``p`` after time ``t``: equal to ``p`` on ``[0, t]`` and ``p(t)`` afterwards.

    ``T`` defaults to the horizon of ``p``; if given it must match it.
    """
    T = p.T if T is None else T
    if t > T or t < 0:
        raise InvalidPathError(f"invalid mask time t={t} for horizon T={T}")
    if abs(T - p.T) > GRID_TOL * p.T:
        raise InvalidPathError(f"extension horizon {T} differs from path horizon {p.T}")
    k = p.index_of(t)
    values = p.values.copy()
    values[k + 1:] = values[k]
    return SampledPath(p.grid, values)


def frozen_values(values: np.ndarray, k: int) -> np.ndarray:
    """Array form of the horizontal extension at grid index ``k``."""
    out = values.copy()
    out[k + 1:] = out[k]
    return out


@dataclass(frozen=True)
class PLDomainSpec:
    """Piecewise-linear path domain: knots ``0 = t_0 < ... < t_P = T`` and a ball radius."""

    knots: tuple[float, ...]
    bound: float
    dim: int = 1

    def __post_init__(self):
        knots = tuple(float(k) for k in self.knots)
        if len(knots) < 2 or knots[0] != 0.0 or any(b <= a for a, b in zip(knots, knots[1:])):
            raise InvalidPathError("knots must start at 0 and be strictly increasing")
        if self.bound < 0:
            raise InvalidPathError("bound must be nonnegative")
        object.__setattr__(self, "knots", knots)

    @property
    def T(self) -> float:
        return self.knots[-1]

    @property
    def pieces(self) -> int:
        return len(self.knots) - 1


def sample_ball(rng: np.random.Generator, radius: float, dim: int, n: int) -> np.ndarray:
    """``n`` points drawn uniformly from the closed Euclidean ``radius``-ball in ``R^dim``."""
    direction = rng.standard_normal((n, dim))
    direction /= np.maximum(np.linalg.norm(direction, axis=1, keepdims=True), 1e-300)
    r = radius * rng.random(n) ** (1.0 / dim)
    return direction * r[:, None]


def pl_path(grid: np.ndarray, knots, knot_values: np.ndarray) -> SampledPath:
    """Linear interpolation of ``knot_values`` (one row per knot) onto ``grid``."""
    knot_values = np.atleast_2d(np.asarray(knot_values, dtype=float))
    values = np.column_stack([np.interp(grid, knots, knot_values[:, j])
                              for j in range(knot_values.shape[1])])
    return SampledPath(grid, values)


def sample_pl_path(spec: PLDomainSpec, rng: np.random.Generator, steps: int) -> SampledPath:
    """Draw a path from the piecewise-linear domain on a grid of ``steps`` intervals.

    The path starts at 0 and each later knot value is uniform in the ``bound``-ball.
    Every knot must fall on the grid.
    """
    grid = uniform_grid(spec.T, steps)
    dt = spec.T / steps
    for k in spec.knots:
        if abs(round(k / dt) * dt - k) > 1e-9 * spec.T:
            raise InvalidPathError(f"knot {k} is not on the grid with {steps} steps")
    knot_values = np.zeros((spec.pieces + 1, spec.dim))
    knot_values[1:] = sample_ball(rng, spec.bound, spec.dim, spec.pieces)
    return pl_path(grid, spec.knots, knot_values)


def write_path_csv(p: SampledPath, path: str | Path) -> None:
    header = ["t"] + [f"y{j + 1}" for j in range(p.dim)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for t, row in zip(p.grid, p.values):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in row])


def read_path_csv(path: str | Path) -> SampledPath:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0].strip() != "t":
        raise InvalidPathError(f"{path}: missing 't, y1, ...' header")
    width = len(rows[0])
    data = np.empty((len(rows) - 1, width))
    for i, r in enumerate(rows[1:]):
        try:
            if len(r) != width:
                raise ValueError(f"expected {width} fields, got {len(r)}")
            data[i] = [float(x) for x in r]
        except ValueError as exc:
            raise InvalidPathError(f"{path}, line {i + 2}: {exc}") from None
    return SampledPath(data[:, 0], data[:, 1:])


def grid_steps_for(T: float, dt: float) -> int:
    steps = int(round(T / dt))
    if not math.isclose(steps * dt, T, rel_tol=1e-9):
        raise InvalidPathError(f"T={T} is not a multiple of dt={dt}")
    return steps
