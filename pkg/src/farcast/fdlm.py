"""Low-rank innovation covariance for the latent curve dynamics.

The innovation at each time is a linear combination of orthonormal factor
loading curves plus a white nugget, so the grid covariance is
K = Phi diag(v) Phi' + nugget * I with Phi' Phi = I. The precision has the
closed Woodbury form (no matrix inversions), and interpolation at new
points conditions on the grid values exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular
from scipy.special import gammainc, gammaincinv, gammaln

__all__ = [
    "FactorCovariance",
    "gamma_below_cap",
    "gamma_above_floor",
    "factor_posterior",
    "sample_factors",
    "sample_ordered_precisions",
    "sample_nugget",
    "sample_flcs",
    "sample_ridge_precision",
    "krige",
    "select_n_factors",
    "initialize_loadings",
]


@dataclass
class FactorCovariance:
    """K = loadings diag(factor_vars) loadings' + nugget I on the grid.

    loadings must be discretely orthonormal and factor_vars strictly
    decreasing and positive; the Woodbury identities below rely on both.
    """

    loadings: np.ndarray
    factor_vars: np.ndarray
    nugget: float

    def __post_init__(self):
        self.loadings = np.asarray(self.loadings, dtype=float)
        self.factor_vars = np.atleast_1d(np.asarray(self.factor_vars, dtype=float))
        if self.nugget <= 0.0:
            raise ValueError("nugget must be positive")
        if np.any(self.factor_vars <= 0.0):
            raise ValueError("factor variances must be positive")
        if np.any(np.diff(self.factor_vars) >= 0.0):
            raise ValueError("factor variances must be strictly decreasing")
        J = self.factor_vars.size
        gram = self.loadings.T @ self.loadings
        if not np.allclose(gram, np.eye(J), atol=1e-6):
            raise ValueError("loadings must be orthonormal")

    @property
    def n_points(self) -> int:
        return self.loadings.shape[0]

    @property
    def n_factors(self) -> int:
        return self.factor_vars.size

    def shrinkage(self) -> np.ndarray:
        """diag of the Woodbury middle factor: v_j / (nugget + v_j)."""
        return self.factor_vars / (self.nugget + self.factor_vars)

    def matrix(self) -> np.ndarray:
        P = self.loadings
        return (P * self.factor_vars) @ P.T + self.nugget * np.eye(self.n_points)

    def precision(self) -> np.ndarray:
        P = self.loadings
        M = self.n_points
        return ((np.eye(M) - (P * self.shrinkage()) @ P.T)) / self.nugget

    def solve(self, X: np.ndarray) -> np.ndarray:
        """K^{-1} X via the low-rank identity; X is (M,) or (M, k)."""
        P = self.loadings
        proj = P.T @ X
        return (X - P @ (proj * self.shrinkage().reshape(-1, *([1] * (X.ndim - 1))))) / self.nugget

    def quad_form(self, X: np.ndarray) -> float:
        """x' K^{-1} x summed over columns of X."""
        X = np.atleast_2d(X.T).T
        proj = self.loadings.T @ X
        return float(
            (np.sum(X * X) - np.sum(proj * proj * self.shrinkage()[:, None]))
            / self.nugget
        )

    def logdet(self) -> float:
        M, J = self.n_points, self.n_factors
        return float(
            (M - J) * np.log(self.nugget) + np.sum(np.log(self.nugget + self.factor_vars))
        )

    def factor_root(self) -> np.ndarray:
        """L with L L' = K, shape (M, J + M); exact, no factorization."""
        return np.hstack(
            [
                self.loadings * np.sqrt(self.factor_vars),
                np.sqrt(self.nugget) * np.eye(self.n_points),
            ]
        )

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """(size, M) innovation draws through the structural form."""
        z = rng.standard_normal((size, self.n_factors)) * np.sqrt(self.factor_vars)
        white = rng.standard_normal((size, self.n_points)) * np.sqrt(self.nugget)
        return z @ self.loadings.T + white


def gamma_below_cap(
    shape: float, rate: float, cap: float, rng: np.random.Generator, retries: int = 10
) -> float:
    """Gamma(shape, rate) draw conditioned on (0, cap) by inverse CDF.

    When the CDF at the cap underflows, retries with fresh uniforms and then
    falls back to a first-order log-domain quantile step below the cap.
    """
    Fb = gammainc(shape, rate * cap)
    if Fb > 0.0:
        for _ in range(retries):
            q = rng.uniform() * Fb
            if q > 0.0:
                x = gammaincinv(shape, q) / rate
                if 0.0 < x < cap:
                    return x
    # extreme truncation: d/dx log F ~ shape/x - rate near the cap
    u = rng.uniform()
    slope = shape / cap - rate
    if slope > 0.0:
        x = cap + np.log(u) / slope
        if 0.0 < x < cap:
            return x
    return cap * u ** (1.0 / shape)


def gamma_above_floor(
    shape: float, rate: float, floor: float, rng: np.random.Generator
) -> float:
    """Gamma(shape, rate) draw conditioned on (floor, inf) by inverse CDF."""
    Fa = gammainc(shape, rate * floor)
    u = rng.uniform(Fa, 1.0)
    u = min(u, 1.0 - 1e-16)
    return max(gammaincinv(shape, u) / rate, floor)


def sample_ridge_precision(
    penalized_coefs: np.ndarray,
    rng: np.random.Generator,
    floor: float = 1e-8,
) -> float:
    """Smoothness precision update for a ridge block with two unpenalized
    leading coefficients removed: lam ~ Gamma((J - 3)/2, sum(coef^2)/2)
    restricted above the floor, where J - 2 coefficients are penalized."""
    coefs = np.asarray(penalized_coefs, dtype=float)
    J = coefs.size + 2
    if J < 4:
        raise ValueError("need at least two penalized coefficients")
    shape = (J - 3) / 2.0
    rate = 0.5 * float(coefs @ coefs)
    if rate <= 0.0:
        rate = 1e-300
    return gamma_above_floor(shape, rate, floor, rng)


def factor_posterior(cov: FactorCovariance, innovations: np.ndarray):
    """Conditional moments of the factor scores given innovations.

    innovations is (n, M); returns (means (n, J), variances (J,)). The
    posterior precision is diagonal and time-invariant, so every time is
    handled at once.
    """
    prec = 1.0 / cov.nugget + 1.0 / cov.factor_vars
    var = 1.0 / prec
    means = (innovations @ cov.loadings) / cov.nugget * var
    return means, var


def sample_factors(
    cov: FactorCovariance, innovations: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    means, var = factor_posterior(cov, innovations)
    return means + np.sqrt(var) * rng.standard_normal(means.shape)


def sample_ordered_precisions(
    factors: np.ndarray,
    rng: np.random.Generator,
    prior_shape: float = 1e-3,
    prior_rate: float = 1e-3,
) -> np.ndarray:
    """Factor precisions under the variance ordering v_1 > ... > v_J.

    The smallest-variance component gets an unconstrained conjugate draw;
    the rest are inverse-CDF draws capped by the previous precision, walking
    toward the largest variance.
    """
    n, J = factors.shape
    ss = np.sum(factors**2, axis=0)
    prec = np.empty(J)
    prec[J - 1] = rng.gamma(prior_shape + n / 2.0, 1.0 / (prior_rate + ss[J - 1] / 2.0))
    for j in range(J - 2, -1, -1):
        prec[j] = gamma_below_cap((n - 1) / 2.0, ss[j] / 2.0, prec[j + 1], rng)
    return prec


def sample_nugget(
    innovations: np.ndarray,
    factors: np.ndarray,
    loadings: np.ndarray,
    rng: np.random.Generator,
    fixed: float | None = None,
    prior_shape: float = 1e-3,
    prior_rate: float = 1e-3,
) -> float:
    """New nugget variance; a fixed value short-circuits the draw."""
    if fixed is not None:
        return float(fixed)
    resid = innovations - factors @ loadings.T
    shape = prior_shape + resid.size / 2.0
    rate = prior_rate + 0.5 * float(np.sum(resid**2))
    return 1.0 / rng.gamma(shape, 1.0 / rate)


def sample_flcs(
    Xi: np.ndarray,
    factors: np.ndarray,
    innovations: np.ndarray,
    design: np.ndarray,
    nugget: float,
    lam: np.ndarray,
    rng: np.random.Generator,
    lam_floor: float = 1e-8,
):
    """One sweep over the factor loading curves in random order.

    Each column's basis coefficients get a conjugate Gaussian draw
    conditioned (by projection) on discrete orthogonality to the other
    columns, then the column is normalized to unit discrete norm with its
    largest-magnitude loading positive. Smoothness precisions are refreshed
    per column. Returns (Xi, Phi, lam) with Phi' Phi = I exactly.
    """
    Xi = np.array(Xi, dtype=float)
    lam = np.array(lam, dtype=float)
    Jb, J = Xi.shape
    BtB = design.T @ design
    Phi = design @ Xi
    for j in rng.permutation(J):
        e_j = factors[:, j]
        ss = float(e_j @ e_j)
        others = [k for k in range(J) if k != j]
        partial = innovations - factors[:, others] @ Phi[:, others].T
        a = design.T @ (partial.T @ e_j) / nugget
        prior_prec = np.r_[1e-8, 1e-8, np.full(Jb - 2, lam[j])]
        Ainv = np.diag(prior_prec) + (ss / nugget) * BtB
        cho = cho_factor(Ainv, lower=True)
        mean = cho_solve(cho, a)
        z = rng.standard_normal(Jb)
        xi = mean + solve_triangular(cho[0], z, lower=True, trans="T")
        if others:
            C = Xi[:, others].T @ BtB  # rows: constraint gradients
            ACt = cho_solve(cho, C.T)
            S = C @ ACt
            xi = xi - ACt @ np.linalg.solve(S, C @ xi)
        phi = design @ xi
        nrm = np.linalg.norm(phi)
        if nrm <= 0.0:
            raise ValueError("degenerate loading draw")
        xi, phi = xi / nrm, phi / nrm
        if phi[np.argmax(np.abs(phi))] < 0.0:
            xi, phi = -xi, -phi
        Xi[:, j] = xi
        Phi[:, j] = phi
        lam[j] = sample_ridge_precision(xi[2:], rng, lam_floor)
    # exact orthonormalization against accumulated roundoff
    Gram = Phi.T @ Phi
    w, V = np.linalg.eigh(Gram)
    corr = (V / np.sqrt(w)) @ V.T
    Xi = Xi @ corr
    Phi = design @ Xi
    return Xi, Phi, lam


def krige(
    cov: FactorCovariance,
    phi_new: np.ndarray,
    drift_new: np.ndarray,
    innovation: np.ndarray,
):
    """Exact interpolation of the latent curve at new (off-grid) points.

    phi_new holds the loading curves evaluated at the new points, drift_new
    the lag-kernel forecast contribution there, and innovation the on-grid
    innovation residual of the current curve. Returns (mean, var); the
    variance is time-invariant.
    """
    s = cov.shrinkage()
    proj = cov.loadings.T @ innovation
    mean = drift_new + phi_new @ (s * proj)
    var = cov.nugget * (1.0 + np.sum(phi_new**2 * s, axis=1))
    return mean, var


def select_n_factors(innovations: np.ndarray, threshold: float = 0.95) -> int:
    """Smallest factor count explaining at least `threshold` of the
    innovation variance (squared singular values)."""
    if not 0.0 < threshold <= 1.0:
        raise ValueError("threshold must be in (0, 1]")
    s = np.linalg.svd(np.asarray(innovations, dtype=float), compute_uv=False)
    energy = np.cumsum(s**2) / np.sum(s**2)
    return int(np.searchsorted(energy, threshold - 1e-12) + 1)


def _inv_sqrt_psd(A: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(A)
    w = np.maximum(w, np.max(w) * 1e-12)
    return (V / np.sqrt(w)) @ V.T


def initialize_loadings(innovations: np.ndarray, design: np.ndarray, n_factors: int):
    """Starting values for the factor block from an SVD of the innovations.

    The leading right singular vectors are projected into the basis span
    and polar-corrected so Phi = design @ Xi is exactly orthonormal.
    Returns (Xi, Phi, factors, factor_vars, nugget).
    """
    E = np.asarray(innovations, dtype=float)
    U, sv, Vt = np.linalg.svd(E, full_matrices=False)
    J = min(n_factors, sv.size)
    V = Vt[:J].T
    Xi0, *_ = np.linalg.lstsq(design, V, rcond=None)
    P0 = design @ Xi0
    corr = _inv_sqrt_psd(P0.T @ P0)
    Xi = Xi0 @ corr
    Phi = design @ Xi
    for j in range(J):
        if Phi[np.argmax(np.abs(Phi[:, j])), j] < 0.0:
            Phi[:, j] *= -1.0
            Xi[:, j] *= -1.0
    factors = E @ Phi
    fvar = factors.var(axis=0)
    order = np.argsort(fvar)[::-1]
    Phi, Xi, factors, fvar = Phi[:, order], Xi[:, order], factors[:, order], fvar[order]
    # enforce strict ordering and positivity
    fvar = np.maximum(fvar, 1e-10)
    for j in range(1, J):
        if fvar[j] >= fvar[j - 1]:
            fvar[j] = fvar[j - 1] * 0.999
    resid = E - factors @ Phi.T
    nugget = max(float(np.mean(resid**2)), 1e-10)
    return Xi, Phi, factors, fvar, nugget
