"""Spline bases and exact penalty matrices for mean, kernel, and loading
curve priors: clamped cubic B-splines, tensor-product kernel surfaces, and
the low-rank radial (thin plate) design with its diagonalized penalty."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import BSpline

__all__ = [
    "BsplineBasis",
    "TensorKernelBasis",
    "PenaltyPair",
    "ThinPlateBasis",
    "eval_bspline",
    "gram_matrix",
    "stationarity_gram",
    "roughness_penalty",
    "kernel_penalties",
    "thinplate_design",
]


@dataclass
class BsplineBasis:
    """Clamped cubic B-spline basis on an interval.

    knots is the full clamped vector (boundary knots repeated degree+1
    times); dim = number of interior knots + degree + 1.
    """

    knots: np.ndarray
    degree: int = 3

    def __post_init__(self):
        self.knots = np.asarray(self.knots, dtype=float)

    @classmethod
    def cubic(cls, n_interior: int, lo: float = 0.0, hi: float = 1.0) -> "BsplineBasis":
        if hi <= lo:
            raise ValueError("empty domain")
        if n_interior < 0:
            raise ValueError("negative interior knot count")
        interior = np.linspace(lo, hi, n_interior + 2)[1:-1]
        knots = np.r_[[lo] * 4, interior, [hi] * 4]
        return cls(knots, 3)

    @classmethod
    def for_observation_points(cls, points, max_interior: int = 35) -> "BsplineBasis":
        """Basis sized to the distinct observation points: interior knot
        count is half the number of distinct points, capped at max_interior."""
        pts = np.unique(np.asarray(points, dtype=float))
        if pts.size < 2:
            raise ValueError("need at least two distinct observation points")
        n_interior = min(pts.size // 2, max_interior)
        return cls.cubic(n_interior, pts[0], pts[-1])

    @property
    def dim(self) -> int:
        return self.knots.size - self.degree - 1

    @property
    def domain(self) -> tuple[float, float]:
        return float(self.knots[0]), float(self.knots[-1])

    def design(self, x, deriv: int = 0) -> np.ndarray:
        """(len(x), dim) matrix of basis values or derivatives at x."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        spl = BSpline(self.knots, np.eye(self.dim), self.degree)
        if deriv > 0:
            spl = spl.derivative(deriv)
        return spl(x)

    def greville(self) -> np.ndarray:
        """Knot averages: coefficients reproducing the identity function."""
        k = self.degree
        t = self.knots
        return np.array([t[i + 1 : i + k + 1].mean() for i in range(self.dim)])

    def spans(self) -> np.ndarray:
        """Distinct knot values (integration breakpoints)."""
        return np.unique(self.knots)


def eval_bspline(basis: BsplineBasis, x, deriv: int = 0) -> np.ndarray:
    return basis.design(x, deriv=deriv)


def gram_matrix(basis: BsplineBasis, deriv: int = 0) -> np.ndarray:
    """Exact Gram matrix of basis derivatives, int b^(d) b^(d)'.

    Gauss-Legendre with 5 nodes per knot span is exact for the piecewise
    polynomial integrand (degree <= 6), so this is closed-form up to
    floating point.
    """
    nodes, wts = np.polynomial.legendre.leggauss(5)
    breaks = basis.spans()
    G = np.zeros((basis.dim, basis.dim))
    for a, b in zip(breaks[:-1], breaks[1:]):
        half = (b - a) / 2.0
        x = a + half * (nodes + 1.0)
        B = basis.design(x, deriv=deriv)
        G += half * (B * wts[:, None]).T @ B
    return G


@dataclass
class TensorKernelBasis:
    """Tensor-product surface basis for autoregression kernels.

    A surface is psi(tau, u) = b(tau)' Theta b(u) with Theta the dim x dim
    coefficient matrix; theta = vec(Theta) in column-major order so that
    psi = (b(u) kron b(tau))' theta.
    """

    marginal: BsplineBasis

    @property
    def dim(self) -> int:
        return self.marginal.dim**2

    def coef_matrix(self, theta) -> np.ndarray:
        J = self.marginal.dim
        return np.reshape(np.asarray(theta, dtype=float), (J, J), order="F")

    def vec(self, Theta) -> np.ndarray:
        return np.asarray(Theta, dtype=float).flatten(order="F")

    def surface(self, theta, tau, u) -> np.ndarray:
        """psi values on the product grid tau x u, shape (len(tau), len(u))."""
        Bt = self.marginal.design(tau)
        Bu = self.marginal.design(u)
        return Bt @ self.coef_matrix(theta) @ Bu.T

    def surface_coeffs(self, f) -> np.ndarray:
        """vec(Theta) for a separable-by-Greville bilinear surface
        f(tau, u) = a + b tau + c u + d tau u given as (a, b, c, d)."""
        a, b, c, d = f
        g = self.marginal.greville()
        Theta = a + b * g[:, None] + c * g[None, :] + d * np.outer(g, g)
        return self.vec(Theta)


def stationarity_gram(basis: BsplineBasis) -> np.ndarray:
    """Kronecker Gram for squared-surface integrals: theta' Omega0 theta
    equals the double integral of psi^2 for psi = b' Theta b."""
    G = gram_matrix(basis, deriv=0)
    return np.kron(G, G)


def roughness_penalty(basis: BsplineBasis) -> np.ndarray:
    """Second-order tensor-product smoothness penalty.

    theta' Omega2 theta integrates psi_tautau^2 + psi_uu^2; the null space
    is exactly the bilinear family a + b tau + c u + d tau u.
    """
    G0 = gram_matrix(basis, deriv=0)
    G2 = gram_matrix(basis, deriv=2)
    return np.kron(G0, G2) + np.kron(G2, G0)


@dataclass
class PenaltyPair:
    """Stationarity and roughness penalties for one kernel basis."""

    omega0: np.ndarray
    omega2: np.ndarray

    def combined(self, kappa: float) -> np.ndarray:
        # omega0 is positive definite, so the sum is for any kappa > 0
        if kappa <= 0.0:
            raise ValueError("kappa must be positive")
        return self.omega2 + kappa * self.omega0


def kernel_penalties(basis: BsplineBasis) -> PenaltyPair:
    return PenaltyPair(stationarity_gram(basis), roughness_penalty(basis))


def _matrix_inv_sqrt(A: np.ndarray) -> np.ndarray:
    U, d, Vt = np.linalg.svd(A)
    top = d.max() if d.size else 0.0
    if top <= 0.0:  # all-zero radial block (single knot); leave it untouched
        return np.eye(A.shape[0])
    d = np.where(d > top * 1e-12, d, top * 1e-12)
    return (U / np.sqrt(d)) @ Vt


@dataclass
class ThinPlateBasis:
    """Low-rank radial basis [1, x, |x - knot|^3 ...] with the penalty
    diagonalized so the radial block has an iid prior.

    Columns: constant, linear, then n_knots transformed radial terms. The
    prior variance is diag(1e8, 1e8, 1/lam, ..., 1/lam).
    """

    knots: np.ndarray

    def __post_init__(self):
        self.knots = np.asarray(self.knots, dtype=float)
        if self.knots.size > 0:
            R = np.abs(self.knots[:, None] - self.knots[None, :]) ** 3
            self._half_inv = _matrix_inv_sqrt(R)
        else:
            self._half_inv = np.zeros((0, 0))

    @classmethod
    def for_observation_points(cls, points, n_knots: int | None = None) -> "ThinPlateBasis":
        pts = np.unique(np.asarray(points, dtype=float))
        if n_knots is None:
            n_knots = min(15, int(np.ceil(pts.size / 4)))
        if n_knots == 0:
            return cls(np.array([]))
        probs = np.arange(1, n_knots + 1) / (n_knots + 1)
        return cls(np.quantile(pts, probs))

    @property
    def dim(self) -> int:
        return 2 + self.knots.size

    def design(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        cols = [np.ones_like(x), x]
        if self.knots.size > 0:
            radial = np.abs(x[:, None] - self.knots[None, :]) ** 3
            cols.append(radial @ self._half_inv)
            return np.column_stack(cols)
        return np.column_stack(cols)

    def prior_variance(self, lam: float) -> np.ndarray:
        """Diagonal prior variances: flat on constant and linear terms,
        1/lam on the radial block."""
        if lam <= 0.0:
            raise ValueError("lam must be positive")
        return np.r_[1e8, 1e8, np.full(self.knots.size, 1.0 / lam)]


def thinplate_design(points, knots) -> np.ndarray:
    return ThinPlateBasis(np.asarray(knots, dtype=float)).design(points)
