"""Evaluation grids, trapezoid quadrature, and sparse-observation bookkeeping."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "EvaluationGrid",
    "ObservationSet",
    "trapezoid_weights",
    "incidence",
    "quad_apply",
]


def trapezoid_weights(points: np.ndarray) -> np.ndarray:
    """Trapezoid quadrature weights for a sorted one-dimensional grid.

    Parameters
    ----------
    points : array_like, shape (M,)
        Strictly increasing evaluation points, M >= 2.

    Returns
    -------
    ndarray, shape (M,)
        Weights w such that w @ f approximates the integral of f over
        [points[0], points[-1]]. Exact whenever f is linear between
        neighboring grid points.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 1 or pts.size < 2:
        raise ValueError("need at least two grid points")
    if np.any(np.diff(pts) <= 0.0):
        raise ValueError("grid points must be strictly increasing")
    w = np.empty_like(pts)
    w[0] = (pts[1] - pts[0]) / 2.0
    w[-1] = (pts[-1] - pts[-2]) / 2.0
    w[1:-1] = (pts[2:] - pts[:-2]) / 2.0
    return w


def incidence(obs_points, grid_points, tol: float = 1e-9) -> np.ndarray:
    """Binary matrix selecting grid values at the observation points.

    Each observation point must coincide with a grid point (within tol);
    row i has a single 1 in the column of the matching grid point.
    """
    obs = np.atleast_1d(np.asarray(obs_points, dtype=float))
    grid = np.asarray(grid_points, dtype=float)
    Z = np.zeros((obs.size, grid.size))
    for i, p in enumerate(obs):
        j = int(np.argmin(np.abs(grid - p)))
        if abs(grid[j] - p) > tol:
            raise ValueError(f"observation point {p} is not on the grid")
        Z[i, j] = 1.0
    return Z


def grid_indices(obs_points, grid_points, tol: float = 1e-9) -> np.ndarray:
    """Column indices of the observation points on the grid (same matching
    rule as `incidence`, cheaper to apply)."""
    obs = np.atleast_1d(np.asarray(obs_points, dtype=float))
    grid = np.asarray(grid_points, dtype=float)
    idx = np.empty(obs.size, dtype=np.intp)
    for i, p in enumerate(obs):
        j = int(np.argmin(np.abs(grid - p)))
        if abs(grid[j] - p) > tol:
            raise ValueError(f"observation point {p} is not on the grid")
        idx[i] = j
    return idx


def quad_apply(kernel_values, weights, f):
    """Apply a discretized integral operator.

    Rows of `kernel_values` hold a kernel slice psi(tau_i, .) evaluated on
    the grid; the result approximates int psi(tau_i, u) f(u) du with the
    quadrature `weights`. `f` may be a vector or a (M, k) stack of columns.
    """
    K = np.asarray(kernel_values, dtype=float)
    w = np.asarray(weights, dtype=float)
    f = np.asarray(f, dtype=float)
    if f.ndim == 2:
        return K @ (w[:, None] * f)
    return K @ (w * f)


@dataclass
class EvaluationGrid:
    """Common evaluation grid with its trapezoid quadrature.

    weights defaults to the trapezoid rule of `points`, so integrals of
    grid-valued functions are w @ f and the operator form uses Q = diag(w).
    """

    points: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        if self.weights is None:
            self.weights = trapezoid_weights(self.points)
        else:
            self.weights = np.asarray(self.weights, dtype=float)
            if self.weights.shape != self.points.shape:
                raise ValueError("weights must align with points")

    @classmethod
    def regular(cls, size: int, lo: float = 0.0, hi: float = 1.0) -> "EvaluationGrid":
        return cls(np.linspace(lo, hi, size))

    @property
    def size(self) -> int:
        return self.points.size

    @property
    def Q(self) -> np.ndarray:
        return np.diag(self.weights)


@dataclass
class ObservationSet:
    """Sparsely observed curves: per-time observation points and values.

    Points must lie on the grid; incidence matrices and index arrays are
    built once at construction. Empty per-time arrays (no observations at
    that time) are allowed.
    """

    grid: EvaluationGrid
    points: list
    values: list
    indices: list = field(init=False, repr=False)

    def __post_init__(self):
        if len(self.points) != len(self.values):
            raise ValueError("points and values must align")
        self.points = [np.atleast_1d(np.asarray(p, dtype=float)) for p in self.points]
        self.values = [np.atleast_1d(np.asarray(v, dtype=float)) for v in self.values]
        for p, v in zip(self.points, self.values):
            if p.shape != v.shape:
                raise ValueError("points and values must align")
        self.indices = [grid_indices(p, self.grid.points) for p in self.points]

    @property
    def n_times(self) -> int:
        return len(self.values)

    @property
    def counts(self) -> np.ndarray:
        return np.array([v.size for v in self.values])

    def incidence_at(self, t: int) -> np.ndarray:
        Z = np.zeros((self.values[t].size, self.grid.size))
        Z[np.arange(self.values[t].size), self.indices[t]] = 1.0
        return Z

    @classmethod
    def from_matrix(cls, grid: EvaluationGrid, y) -> "ObservationSet":
        """Fully observed curves: y has shape (T, M) on the grid."""
        y = np.asarray(y, dtype=float)
        if y.ndim != 2 or y.shape[1] != grid.size:
            raise ValueError("y must be (T, M) on the grid")
        return cls(grid, [grid.points] * y.shape[0], [row for row in y])
