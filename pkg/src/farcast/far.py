"""Hierarchical functional autoregression on a quadrature grid.

The observed curves are noisy, possibly sparse readings of latent functions
that follow a lag-p integral autoregression. Kernels live in a tensor
B-spline basis with a roughness + norm penalty, the innovation covariance is
either a low-rank factor model (fdlm) or a Matern Gaussian process, and lags
can be switched in and out under a Markov inclusion prior. Everything is
estimated by one Gibbs sweep per iteration; forecasting refilters the
extended series per retained draw with all static parameters held fixed.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, eigh, solve_triangular
from scipy.optimize import brentq
from scipy.special import gammaln, kv

from .basis import BsplineBasis, PenaltyPair, TensorKernelBasis, ThinPlateBasis, kernel_penalties
from .fdlm import (
    FactorCovariance,
    initialize_loadings,
    sample_factors,
    sample_flcs,
    sample_nugget,
    sample_ordered_precisions,
    sample_ridge_precision,
    select_n_factors,
)
from .grid import ObservationSet
from .ssm import StateSpaceSpec, _chol, kalman_filter, simulation_smoother

__all__ = [
    "LagPrior",
    "FarConfig",
    "FarModel",
    "FarState",
    "MaternCovariance",
    "matern_correlation",
    "max_matern_range",
    "companion_radius",
    "initialize",
    "sample_states",
    "sample_mean_function",
    "sample_obs_precision",
    "sample_kernels",
    "sample_lag_states",
    "sample_matern_params",
    "sample_innovation_model",
    "lag_log_odds",
    "kernel_block_moments",
    "innovation_matrix",
    "prior_kernel_draws",
    "GibbsDraws",
    "run_gibbs",
    "filter_forecasts",
    "krige_draws",
    "lag_order_counts",
]


# ---------------------------------------------------------------------------
# Matern innovation covariance (parametric variant)


def matern_correlation(dist, smoothness: float, scale: float):
    """Matern correlation {2^(s-1)Gamma(s)}^-1 (d/scale)^s K_s(d/scale).

    Evaluated in the log domain; the d -> 0 limit is 1 and underflow far in
    the tail maps to 0.
    """
    if smoothness <= 0.0 or scale <= 0.0:
        raise ValueError("smoothness and scale must be positive")
    d = np.atleast_1d(np.asarray(dist, dtype=float))
    z = d / scale
    out = np.ones_like(z)
    pos = z > 1e-12
    zp = z[pos]
    with np.errstate(divide="ignore"):
        logval = (
            smoothness * np.log(zp)
            + np.log(kv(smoothness, zp))
            - (smoothness - 1.0) * np.log(2.0)
            - gammaln(smoothness)
        )
    out[pos] = np.exp(logval)
    if np.ndim(dist) == 0:
        return float(out[0])
    return out.reshape(np.shape(dist))


def max_matern_range(points, smoothness: float, cap: float = 0.99) -> float:
    """Largest range keeping every pairwise correlation below `cap`.

    The binding pair is the closest one, and the correlation at a fixed
    distance is increasing in the range, so this is a one-dimensional root.
    """
    pts = np.unique(np.asarray(points, dtype=float))
    if pts.size < 2:
        raise ValueError("need at least two distinct points")
    dmin = float(np.min(np.diff(pts)))

    def f(scale):
        return matern_correlation(dmin, smoothness, scale) - cap

    lo, hi = dmin * 1e-3, dmin * 1e3
    for _ in range(20):
        if f(lo) <= 0.0:
            break
        lo *= 1e-2
    for _ in range(20):
        if f(hi) >= 0.0:
            break
        hi *= 1e2
    return float(brentq(f, lo, hi, xtol=1e-12, rtol=1e-12))


@dataclass
class MaternCovariance:
    """Dense Matern covariance on the grid: variance * R(scale)."""

    points: np.ndarray
    smoothness: float
    scale: float
    variance: float

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        if self.variance <= 0.0:
            raise ValueError("variance must be positive")
        d = np.abs(self.points[:, None] - self.points[None, :])
        self._corr = matern_correlation(d, self.smoothness, self.scale)
        self._corr_cho = _chol(self._corr)
        # lower-triangular root of the full covariance, for exact draws
        self._root = np.sqrt(self.variance) * np.tril(self._corr_cho[0])

    @property
    def n_points(self) -> int:
        return self.points.size

    def matrix(self) -> np.ndarray:
        return self.variance * self._corr

    def correlation(self) -> np.ndarray:
        return self._corr.copy()

    def solve(self, X: np.ndarray) -> np.ndarray:
        return cho_solve(self._corr_cho, X) / self.variance

    def quad_form(self, X: np.ndarray) -> float:
        return float(np.sum(X * self.solve(X)))

    def corr_quad_form(self, X: np.ndarray) -> float:
        """x' R^{-1} x summed over columns, range part only."""
        return float(np.sum(X * cho_solve(self._corr_cho, X)))

    def corr_logdet(self) -> float:
        return float(2.0 * np.sum(np.log(np.diag(self._corr_cho[0]))))

    def logdet(self) -> float:
        return self.n_points * np.log(self.variance) + self.corr_logdet()

    def factor_root(self) -> np.ndarray:
        return self._root.copy()

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.standard_normal((size, self.n_points)) @ self._root.T

    def krige(self, new_points, innovation):
        """Conditional adjustment and variance at off-grid points.

        Returns (adjust, var): the conditional mean is the drift plus
        `adjust`, and `var` is the conditional variance per new point.
        """
        new = np.atleast_1d(np.asarray(new_points, dtype=float))
        cross = self.variance * matern_correlation(
            np.abs(new[:, None] - self.points[None, :]), self.smoothness, self.scale
        )
        KiC = self.solve(cross.T)  # (M, n_new)
        adjust = cross @ self.solve(np.asarray(innovation, dtype=float))
        var = self.variance - np.sum(cross.T * KiC, axis=0)
        return adjust, np.maximum(var, 0.0)


# ---------------------------------------------------------------------------
# Configuration and model context


@dataclass
class LagPrior:
    """Markov prior over lag inclusion flags."""

    first_on: float = 0.9
    on_after_off: float = 0.01
    off_after_on: float = 0.75

    def __post_init__(self):
        for v in (self.first_on, self.on_after_off, self.off_after_on):
            if not 0.0 <= v <= 1.0:
                raise ValueError("lag prior probabilities must be in [0, 1]")

    def log_odds(self, flags: np.ndarray, idx: int) -> float:
        """Log prior odds of flags[idx]=1 vs 0, holding the rest fixed."""

        def trans(prev, cur):
            if prev:
                return 1.0 - self.off_after_on if cur else self.off_after_on
            return self.on_after_off if cur else 1.0 - self.on_after_off

        num = self.first_on if idx == 0 else trans(flags[idx - 1], 1)
        den = (1.0 - self.first_on) if idx == 0 else trans(flags[idx - 1], 0)
        if idx + 1 < len(flags):
            num *= trans(1, flags[idx + 1])
            den *= trans(0, flags[idx + 1])
        if num == 0.0:
            return -np.inf
        if den == 0.0:
            return np.inf
        return float(np.log(num) - np.log(den))


@dataclass
class FarConfig:
    """Chain and model settings for one fit."""

    n_lags: int = 1
    n_keep: int = 5000
    n_burn: int = 5000
    thin: int = 1
    innovation: str = "factors"  # "factors" | "matern"
    n_factors: int | None = None
    factor_threshold: float = 0.95
    fixed_nugget: float | None = None
    penalty_mix: float = 1.0
    sample_penalty_mix: bool = False
    matern_smoothness: float = 2.5
    lag_select: bool = False
    lag_burn: int = 500
    lag_prior: LagPrior = field(default_factory=LagPrior)
    track_predictive: bool = True
    store_curves: bool = False
    max_kernel_knots: int = 35

    def __post_init__(self):
        if self.n_lags < 1:
            raise ValueError("n_lags must be >= 1")
        if self.n_keep < 1 or self.n_burn < 0 or self.thin < 1:
            raise ValueError("bad chain lengths")
        if self.innovation not in ("factors", "matern"):
            raise ValueError("innovation must be 'factors' or 'matern'")
        if self.penalty_mix <= 0.0:
            raise ValueError("penalty_mix must be positive")


class FarModel:
    """Data plus every fixed quantity a Gibbs sweep needs.

    Bases are sized from the distinct observed points (padded with the grid
    endpoints so designs never extrapolate); designs, Gram caches, and the
    flattened observation index arrays are precomputed once.
    """

    def __init__(self, obs: ObservationSet, config: FarConfig):
        self.obs = obs
        self.config = config
        self.grid = obs.grid
        M = self.grid.size
        T = obs.n_times
        if T < config.n_lags + 2:
            raise ValueError("need at least n_lags + 2 time points")

        self.idx_all = (
            np.concatenate(obs.indices)
            if any(ix.size for ix in obs.indices)
            else np.empty(0, dtype=int)
        )
        if self.idx_all.size == 0:
            raise ValueError("no observations")
        self.t_of_obs = np.repeat(np.arange(T), obs.counts)
        self.y_all = np.concatenate([np.atleast_1d(v) for v in obs.values])

        observed = np.unique(
            np.r_[self.grid.points[np.unique(self.idx_all)], self.grid.points[[0, -1]]]
        )
        self.kernel_basis = BsplineBasis.for_observation_points(
            observed, max_interior=config.max_kernel_knots
        )
        self.tensor = TensorKernelBasis(self.kernel_basis)
        self.penalties: PenaltyPair = kernel_penalties(self.kernel_basis)
        self.kernel_design = self.kernel_basis.design(self.grid.points)  # (M, J)
        self.mean_basis = ThinPlateBasis.for_observation_points(observed)
        self.mean_design = self.mean_basis.design(self.grid.points)  # (M, J_mu)

        cnt = np.bincount(self.idx_all, minlength=M).astype(float)
        self.point_counts = cnt
        self.mean_gram = self.mean_design.T @ (self.mean_design * cnt[:, None])
        self._penalty_eigs: np.ndarray | None = None

    @property
    def n_times(self) -> int:
        return self.obs.n_times

    def mean_curve(self, coefs: np.ndarray) -> np.ndarray:
        return self.mean_design @ coefs

    def penalty_matrix(self, kappa: float) -> np.ndarray:
        return self.penalties.combined(kappa)

    def penalty_eigenvalues(self) -> np.ndarray:
        # generalized spectrum of roughness against the norm Gram; gives
        # logdet(omega2 + kappa*omega0) up to a kappa-free constant
        if self._penalty_eigs is None:
            g = eigh(self.penalties.omega2, self.penalties.omega0, eigvals_only=True)
            self._penalty_eigs = np.maximum(g, 0.0)
        return self._penalty_eigs

    def kernel_matrix(self, coefs: np.ndarray) -> np.ndarray:
        """Grid evaluation of one kernel from its (J*J,) coefficient vector."""
        B = self.kernel_design
        Theta = self.tensor.coef_matrix(coefs)
        return B @ Theta @ B.T

    def lag_operators(self, kernel_coefs: np.ndarray, lag_on: np.ndarray):
        """Per-lag curve-to-curve maps (kernel times quadrature), None when off."""
        w = self.grid.weights
        out = []
        for l in range(self.config.n_lags):
            if lag_on[l]:
                out.append(self.kernel_matrix(kernel_coefs[l]) * w[None, :])
            else:
                out.append(None)
        return out


# ---------------------------------------------------------------------------
# Mutable chain state


@dataclass
class FarState:
    curves: np.ndarray  # (T, M) latent deviations from the common mean
    mean_coefs: np.ndarray
    mean_penalty: float
    obs_var: float
    kernel_raw: np.ndarray  # (p, J*J) normalized coefficients
    kernel_scale: np.ndarray  # (p,) expansion scales
    kernel_raw_penalty: np.ndarray  # (p,) precisions of the normalized block
    penalty_mix: np.ndarray  # (p,) roughness/norm mix per lag
    lag_on: np.ndarray  # (p,) inclusion flags
    cov: FactorCovariance | MaternCovariance
    factors: np.ndarray | None = None
    loading_coefs: np.ndarray | None = None
    loading_penalty: np.ndarray | None = None

    @property
    def kernel_coefs(self) -> np.ndarray:
        """Effective kernel coefficients, scale applied."""
        return self.kernel_scale[:, None] * self.kernel_raw

    @property
    def kernel_penalty(self) -> np.ndarray:
        """Implied precisions of the effective coefficients."""
        return self.kernel_raw_penalty / self.kernel_scale**2


def _lag_fit(model: FarModel, state: FarState, ops=None) -> np.ndarray:
    """Lag-regression fit of curves[p:], rows t = p..T-1."""
    p = model.config.n_lags
    curves = state.curves
    T = curves.shape[0]
    if ops is None:
        ops = model.lag_operators(state.kernel_coefs, state.lag_on)
    out = np.zeros((T - p, model.grid.size))
    for l in range(p):
        if ops[l] is not None:
            out += curves[p - l - 1 : T - l - 1] @ ops[l].T
    return out


def innovation_matrix(model: FarModel, state: FarState) -> np.ndarray:
    """Innovation curves feeding the covariance blocks.

    For a single lag the first curve is itself an innovation (the chain
    starts at the innovation law); with more lags the first p curves have no
    complete history and are left out.
    """
    p = model.config.n_lags
    eps = state.curves[p:] - _lag_fit(model, state)
    if p == 1:
        eps = np.vstack([state.curves[:1], eps])
    return eps


# ---------------------------------------------------------------------------
# Gibbs blocks


def _state_space(model: FarModel, state: FarState, obs: ObservationSet):
    """Companion state space for the included lags over the given data."""
    M = model.grid.size
    ops = model.lag_operators(state.kernel_coefs, state.lag_on)
    included = [l for l in range(model.config.n_lags) if ops[l] is not None]
    p_star = max(included) + 1 if included else 1
    K = state.cov.matrix()
    root = state.cov.factor_root()
    if p_star == 1:
        G = ops[0] if ops[0] is not None else np.zeros((M, M))
        spec = StateSpaceSpec(G, K, np.zeros(M), K, innovation_factor=root)
    else:
        dim = p_star * M
        G = np.zeros((dim, dim))
        for l in range(p_star):
            if ops[l] is not None:
                G[:M, l * M : (l + 1) * M] = ops[l]
        G[M:, :-M] = np.eye(dim - M)
        W = np.zeros((dim, dim))
        W[:M, :M] = K
        factor = np.zeros((dim, root.shape[1]))
        factor[:M] = root
        init_cov = np.kron(np.eye(p_star), K)
        spec = StateSpaceSpec(G, W, np.zeros(dim), init_cov, innovation_factor=factor)
    mean_curve = model.mean_curve(state.mean_coefs)
    Zs, ys, offsets = [], [], []
    for t in range(obs.n_times):
        ix = obs.indices[t]
        if ix.size == 0:
            Zs.append(None)
            ys.append(None)
            offsets.append(None)
        else:
            Zs.append(ix)
            ys.append(obs.values[t])
            offsets.append(mean_curve[ix])
    return spec, Zs, ys, offsets, p_star


def sample_states(
    model: FarModel, state: FarState, rng: np.random.Generator, obs: ObservationSet | None = None
) -> None:
    """Joint draw of the latent curve path given everything else."""
    if obs is None:
        obs = model.obs
    spec, Zs, ys, offsets, _ = _state_space(model, state, obs)
    draw = simulation_smoother(spec, Zs, ys, state.obs_var, rng, offsets=offsets, size=1)[0]
    state.curves = draw[:, : model.grid.size]


def sample_mean_function(model: FarModel, state: FarState, rng: np.random.Generator) -> None:
    """Conjugate draw of the common mean coefficients and their smoothness."""
    resid = model.y_all - state.curves[model.t_of_obs, model.idx_all]
    binned = np.bincount(model.idx_all, weights=resid, minlength=model.grid.size)
    a = (model.mean_design.T @ binned) / state.obs_var
    prior_prec = 1.0 / model.mean_basis.prior_variance(state.mean_penalty)
    A_inv = model.mean_gram / state.obs_var + np.diag(prior_prec)
    cho = _chol(A_inv)
    mean = cho_solve(cho, a)
    z = rng.standard_normal(a.size)
    state.mean_coefs = mean + solve_triangular(cho[0], z, lower=True, trans="T")
    state.mean_penalty = sample_ridge_precision(state.mean_coefs[2:], rng)


def sample_obs_precision(model: FarModel, state: FarState, rng: np.random.Generator) -> None:
    """Measurement precision from its Gamma full conditional."""
    mean_curve = model.mean_curve(state.mean_coefs)
    resid = (
        model.y_all
        - mean_curve[model.idx_all]
        - state.curves[model.t_of_obs, model.idx_all]
    )
    shape = 1e-3 + 0.5 * resid.size
    rate = 1e-3 + 0.5 * float(resid @ resid)
    state.obs_var = 1.0 / rng.gamma(shape, 1.0 / rate)


def _kernel_sums(model: FarModel, state: FarState):
    """Shared pieces of the kernel block.

    Returns (V_lags, U, BKB): V_lags[l] holds the quadrature-projected lagged
    curves feeding lag l+1, U the precision-weighted current curves, and BKB
    the basis Gram under the innovation precision. Rows cover t = p..T-1.
    """
    p = model.config.n_lags
    curves = state.curves
    T = curves.shape[0]
    B = model.kernel_design
    w = model.grid.weights
    V = curves @ (B * w[:, None])  # rows: basis x quadrature applied to each curve
    V_lags = [V[p - l - 1 : T - l - 1] for l in range(p)]
    U = state.cov.solve(curves[p:].T).T @ B
    BKB = B.T @ state.cov.solve(B)
    return V_lags, U, BKB


def kernel_block_moments(model: FarModel, state: FarState):
    """Precision and linear term of the joint normalized-coefficient draw."""
    p = model.config.n_lags
    J2 = model.tensor.dim
    V_lags, U, BKB = _kernel_sums(model, state)
    prec = np.zeros((p * J2, p * J2))
    lin = np.zeros(p * J2)
    for l in range(p):
        sl = slice(l * J2, (l + 1) * J2)
        prec[sl, sl] += state.kernel_raw_penalty[l] * model.penalty_matrix(
            state.penalty_mix[l]
        )
        if not state.lag_on[l]:
            continue
        cross = U.T @ V_lags[l]
        lin[sl] = state.kernel_scale[l] * cross.flatten(order="F")
        for k in range(l, p):
            if not state.lag_on[k]:
                continue
            block = (state.kernel_scale[l] * state.kernel_scale[k]) * np.kron(
                V_lags[l].T @ V_lags[k], BKB
            )
            sk = slice(k * J2, (k + 1) * J2)
            prec[sl, sk] += block
            if k > l:
                prec[sk, sl] += block.T
    return prec, lin


def sample_kernels(model: FarModel, state: FarState, rng: np.random.Generator) -> None:
    """Kernel block: joint coefficient draw, then per-lag scale, precision,
    and (optionally) penalty mix.

    The joint draw covers all lags at once under the Kronecker-structured
    likelihood; excluded lags see only their prior there. The scalar scale is
    always drawn from its as-if-included conditional against the partial
    residual of the other included lags. For an excluded lag this refresh
    keeps the product kernel at a data-plausible amplitude, so the inclusion
    flags stay mobile instead of absorbing at whatever configuration the
    warm start left behind; a bare draw from the diffuse amplitude prior
    would make re-inclusion odds astronomically negative. The scale precision
    is conjugate, and the roughness/norm mix moves by slice sampling on the
    log scale when configured.
    """
    cfg = model.config
    p = cfg.n_lags
    J2 = model.tensor.dim
    prec, lin = kernel_block_moments(model, state)
    cho = _chol(prec)
    mean = cho_solve(cho, lin)
    z = rng.standard_normal(p * J2)
    draw = mean + solve_triangular(cho[0], z, lower=True, trans="T")
    state.kernel_raw = draw.reshape(p, J2)

    # per-lag scale and precision, sequential over lags
    curves = state.curves
    T = curves.shape[0]
    B = model.kernel_design
    V_lags, _, _ = _kernel_sums(model, state)
    G_lags = [
        V_lags[l] @ model.tensor.coef_matrix(state.kernel_raw[l]).T @ B.T for l in range(p)
    ]
    total = np.zeros((T - p, model.grid.size))
    for l in range(p):
        if state.lag_on[l]:
            total += state.kernel_scale[l] * G_lags[l]
    for l in range(p):
        on = bool(state.lag_on[l])
        KiG = state.cov.solve(G_lags[l].T)
        quad = float(np.sum(G_lags[l].T * KiG))
        partial = curves[p:] - total
        if on:
            partial = partial + state.kernel_scale[l] * G_lags[l]
        linear = float(np.sum(partial.T * KiG))
        post_prec = 1e-6 + quad
        new_scale = linear / post_prec + rng.standard_normal() / np.sqrt(post_prec)
        if on:
            total += (new_scale - state.kernel_scale[l]) * G_lags[l]
        state.kernel_scale[l] = new_scale

        # the smoothing precision is conjugate against the scaled kernel, not
        # the normalized shape: a lag whose amplitude has collapsed gets its
        # shape crushed toward zero, which starves the inclusion odds and
        # lets the Markov prior retire it instead of leaving a noise-fitted
        # surface alive at negligible amplitude
        coefs_l = state.kernel_scale[l] * state.kernel_raw[l]
        omega = model.penalty_matrix(state.penalty_mix[l])
        quad_pen = float(coefs_l @ omega @ coefs_l)
        state.kernel_raw_penalty[l] = rng.gamma(
            0.5 + J2 / 2.0, 1.0 / (0.5 + quad_pen / 2.0)
        )

        if cfg.sample_penalty_mix:
            gam = model.penalty_eigenvalues()
            q0 = float(coefs_l @ model.penalties.omega0 @ coefs_l)
            q2 = float(coefs_l @ model.penalties.omega2 @ coefs_l)
            lam = state.kernel_raw_penalty[l]

            def logf(c):
                kap = np.exp(c)
                return (
                    0.5 * float(np.sum(np.log(gam + kap)))
                    - 0.5 * lam * (q2 + kap * q0)
                    - c * c / 8.0
                )

            c_new = _slice_sample(logf, np.log(state.penalty_mix[l]), rng, width=0.8)
            state.penalty_mix[l] = float(np.exp(c_new))


def _slice_sample(logf, x0, rng, width, lo=-np.inf, hi=np.inf, max_steps=50):
    """Univariate slice sampler with stepping out and shrinkage."""
    y = logf(x0) + np.log(max(rng.uniform(), 1e-300))
    left = x0 - width * rng.uniform()
    right = left + width
    left, right = max(left, lo), min(right, hi)
    steps = max_steps
    while left > lo and logf(left) > y and steps > 0:
        left = max(left - width, lo)
        steps -= 1
    steps = max_steps
    while right < hi and logf(right) > y and steps > 0:
        right = min(right + width, hi)
        steps -= 1
    for _ in range(200):
        x1 = rng.uniform(left, right)
        if logf(x1) > y:
            return x1
        if x1 < x0:
            left = x1
        else:
            right = x1
    return x0


def lag_log_odds(model: FarModel, state: FarState, lag: int) -> float:
    """Log posterior odds of including the given lag, all else fixed.

    The likelihood part is the exact Gaussian ratio of the innovation terms
    with and without the lag's contribution; the prior part comes from the
    Markov inclusion prior.
    """
    p = model.config.n_lags
    curves = state.curves
    T = curves.shape[0]
    ops = model.lag_operators(state.kernel_coefs, np.ones(p, dtype=bool))
    own = curves[p - lag - 1 : T - lag - 1] @ ops[lag].T
    partial = curves[p:].copy()
    for k in range(p):
        if k != lag and state.lag_on[k]:
            partial -= curves[p - k - 1 : T - k - 1] @ ops[k].T
    KiG = state.cov.solve(own.T)
    llr = float(np.sum(partial.T * KiG)) - 0.5 * float(np.sum(own.T * KiG))
    return llr + model.config.lag_prior.log_odds(state.lag_on, lag)


def sample_lag_states(model: FarModel, state: FarState, rng: np.random.Generator) -> None:
    """Flip each inclusion flag in random order from its posterior odds."""
    for lag in rng.permutation(model.config.n_lags):
        odds = lag_log_odds(model, state, int(lag))
        u = rng.uniform()
        while u <= 0.0:
            u = rng.uniform()
        state.lag_on[int(lag)] = odds > (np.log1p(-u) - np.log(u))


def sample_matern_params(model: FarModel, state: FarState, rng: np.random.Generator) -> None:
    """Variance (conjugate) and range (slice, bounded support) updates."""
    eps = innovation_matrix(model, state)
    cov = state.cov
    n = eps.shape[0]
    M = model.grid.size
    quad = cov.corr_quad_form(eps.T)
    shape = 1e-3 + 0.5 * n * M
    rate = 1e-3 + 0.5 * quad
    variance = 1.0 / rng.gamma(shape, 1.0 / rate)

    upper = max_matern_range(model.grid.points, cov.smoothness)

    def logf(scale):
        trial = MaternCovariance(model.grid.points, cov.smoothness, scale, variance)
        return -0.5 * n * trial.corr_logdet() - 0.5 * trial.corr_quad_form(eps.T) / variance

    start = float(np.clip(cov.scale, 1e-6 * upper, upper * (1.0 - 1e-9)))
    scale = _slice_sample(
        logf, start, rng, width=0.1 * upper, lo=1e-8 * upper, hi=upper
    )
    state.cov = MaternCovariance(model.grid.points, cov.smoothness, float(scale), variance)


def sample_innovation_model(model: FarModel, state: FarState, rng: np.random.Generator) -> None:
    """Innovation covariance refresh: factor blocks or Matern blocks."""
    if model.config.innovation == "matern":
        sample_matern_params(model, state, rng)
        return
    eps = innovation_matrix(model, state)
    cov = state.cov
    state.factors = sample_factors(cov, eps, rng)
    prec = sample_ordered_precisions(state.factors, rng)
    nugget = sample_nugget(
        eps, state.factors, cov.loadings, rng, fixed=model.config.fixed_nugget
    )
    Xi, Phi, lam = sample_flcs(
        state.loading_coefs,
        state.factors,
        eps,
        model.mean_design,
        nugget,
        state.loading_penalty,
        rng,
    )
    state.loading_coefs = Xi
    state.loading_penalty = lam
    state.cov = FactorCovariance(Phi, 1.0 / prec, nugget)


# ---------------------------------------------------------------------------
# Initialization


def _ridge_stats(BtB, Bty, prior_prec):
    A = BtB + np.diag(prior_prec)
    coefs = np.linalg.solve(A, Bty)
    df = float(np.trace(np.linalg.solve(A, BtB)))
    return coefs, df


def _gcv_fit(design, y, basis, lam_grid):
    """Penalized least squares with the smoothness picked by GCV."""
    BtB = design.T @ design
    Bty = design.T @ y
    n = y.size
    best = (np.inf, None, None, None)
    for lam in lam_grid:
        prior_prec = 1.0 / basis.prior_variance(lam)
        coefs, df = _ridge_stats(BtB, Bty, prior_prec)
        if df >= n - 0.5:
            continue
        rss = float(np.sum((y - design @ coefs) ** 2))
        gcv = n * rss / (n - df) ** 2
        if gcv < best[0]:
            best = (gcv, lam, coefs, df)
    if best[1] is None:  # every fit saturated; take the heaviest penalty
        lam = lam_grid[-1]
        prior_prec = 1.0 / basis.prior_variance(lam)
        coefs, df = _ridge_stats(BtB, Bty, prior_prec)
        best = (0.0, lam, coefs, df)
    return best[1], best[2], best[3]


def _fit_at_df(design, y, basis, target_df):
    """Penalized fit with the smoothness bisected to hit a trace target."""
    BtB = design.T @ design
    Bty = design.T @ y

    def df_at(loglam):
        prior_prec = 1.0 / basis.prior_variance(np.exp(loglam))
        _, df = _ridge_stats(BtB, Bty, prior_prec)
        return df

    lo, hi = np.log(1e-10), np.log(1e10)
    if df_at(lo) <= target_df:  # even the lightest penalty is at/below target
        hi = lo
    elif df_at(hi) >= target_df:
        lo = hi
    for _ in range(45):
        if hi <= lo:
            break
        mid = 0.5 * (lo + hi)
        if df_at(mid) > target_df:
            lo = mid
        else:
            hi = mid
    lam = np.exp(0.5 * (lo + hi))
    coefs, _ = _ridge_stats(BtB, Bty, 1.0 / basis.prior_variance(lam))
    return coefs


def companion_radius(model: FarModel, coefs: np.ndarray) -> float:
    """Spectral radius of the companion form of the grid lag operators."""
    p = coefs.shape[0]
    M = model.grid.size
    ops = model.lag_operators(coefs, np.ones(p, dtype=bool))
    if p == 1:
        return float(np.max(np.abs(np.linalg.eigvals(ops[0]))))
    C = np.zeros((p * M, p * M))
    for l in range(p):
        C[:M, l * M : (l + 1) * M] = ops[l]
    C[M:, :-M] = np.eye((p - 1) * M)
    return float(np.max(np.abs(np.linalg.eigvals(C))))


def initialize(model: FarModel, rng: np.random.Generator | None = None) -> FarState:
    """Starting state: spline fits for the curves, conditional maximum
    likelihood for the scalar parameters, and a factor decomposition of the
    implied innovations.

    The common mean is a penalized fit to the pooled data with its
    smoothness chosen by generalized cross validation; per-time curves are
    smoothed individually, then refit at their median effective degrees of
    freedom so every curve carries comparable flexibility.
    """
    cfg = model.config
    p = cfg.n_lags
    M = model.grid.size
    T = model.n_times
    lam_grid = np.logspace(-8.0, 4.0, 25)

    pooled_design = model.mean_design[model.idx_all]
    mean_lam, mean_coefs, _ = _gcv_fit(pooled_design, model.y_all, model.mean_basis, lam_grid)
    mean_curve = model.mean_curve(mean_coefs)

    # per-curve smoothing of the centered data, common median flexibility
    dfs, cached = [], []
    for t in range(T):
        ix = model.obs.indices[t]
        if ix.size == 0:
            cached.append(None)
            continue
        design = model.mean_design[ix]
        resid = model.obs.values[t] - mean_curve[ix]
        _, _, df = _gcv_fit(design, resid, model.mean_basis, lam_grid)
        dfs.append(df)
        cached.append((design, resid))
    target_df = float(np.median(dfs)) if dfs else 1.0
    curves = np.zeros((T, M))
    for t in range(T):
        if cached[t] is None:
            continue
        design, resid = cached[t]
        coefs = _fit_at_df(design, resid, model.mean_basis, target_df)
        curves[t] = model.mean_design @ coefs

    fitted = mean_curve[model.idx_all] + curves[model.t_of_obs, model.idx_all]
    obs_var = max(float(np.mean((model.y_all - fitted) ** 2)), 1e-12)

    # kernel coefficients by ridge-stabilized least squares on the curves
    J2 = model.tensor.dim
    B = model.kernel_design
    w = model.grid.weights
    V = curves @ (B * w[:, None])
    V_lags = [V[p - l - 1 : T - l - 1] for l in range(p)]
    U = curves[p:] @ B
    BtB = B.T @ B
    prec = 1e-6 * np.eye(p * J2)
    lin = np.zeros(p * J2)
    for l in range(p):
        sl = slice(l * J2, (l + 1) * J2)
        lin[sl] = (U.T @ V_lags[l]).flatten(order="F")
        for k in range(l, p):
            block = np.kron(V_lags[l].T @ V_lags[k], BtB)
            sk = slice(k * J2, (k + 1) * J2)
            prec[sl, sk] += block
            if k > l:
                prec[sk, sl] += block.T
    theta = np.linalg.solve(prec, lin).reshape(p, J2)

    kappa0 = cfg.penalty_mix
    scales = np.empty(p)
    for l in range(p):
        quad = float(theta[l] @ model.penalty_matrix(kappa0) @ theta[l])
        lam_psi = J2 / quad if quad > 0.0 else 1.0
        lam_psi = float(np.clip(lam_psi, 1e-8, 1e12))
        scales[l] = lam_psi ** -0.5

    # sparse designs can make the raw fit wildly explosive, and the state
    # simulation cannot start from an unstable operator; shrinking lag k by
    # g^k moves every companion eigenvalue to g times itself, so the start
    # lands just inside the stationary region with its shape kept
    rho = companion_radius(model, scales[:, None] * theta)
    if rho > 0.9:
        g = 0.9 / rho
        for l in range(p):
            scales[l] *= g ** (l + 1)

    state = FarState(
        curves=curves,
        mean_coefs=mean_coefs,
        mean_penalty=float(mean_lam),
        obs_var=obs_var,
        kernel_raw=theta,
        kernel_scale=scales,
        kernel_raw_penalty=np.ones(p),
        penalty_mix=np.full(p, kappa0),
        lag_on=np.ones(p, dtype=bool),
        cov=None,  # set below
    )

    eps = _init_innovations(model, state)
    if cfg.innovation == "matern":
        span = model.grid.points[-1] - model.grid.points[0]
        upper = max_matern_range(model.grid.points, cfg.matern_smoothness)
        state.cov = MaternCovariance(
            model.grid.points,
            cfg.matern_smoothness,
            min(0.1 * span, 0.5 * upper),
            max(float(np.mean(eps**2)), 1e-12),
        )
    else:
        n_fac = cfg.n_factors or select_n_factors(eps, cfg.factor_threshold)
        n_fac = int(min(n_fac, model.mean_basis.dim - 1, M - 1, eps.shape[0] - 1))
        n_fac = max(n_fac, 1)
        Xi, Phi, factors, fvar, nugget = initialize_loadings(eps, model.mean_design, n_fac)
        if cfg.fixed_nugget is not None:
            nugget = cfg.fixed_nugget
        state.cov = FactorCovariance(Phi, fvar, nugget)
        state.factors = factors
        state.loading_coefs = Xi
        state.loading_penalty = np.ones(n_fac)
    return state


def _init_innovations(model: FarModel, state: FarState) -> np.ndarray:
    # residuals come from the plain least-squares kernels (scale set aside);
    # the chain then starts from the unscaled coefficients, so the first
    # sweep re-balances the scale split on its own
    saved_scale = state.kernel_scale
    state.kernel_scale = np.ones_like(saved_scale)
    eps = innovation_matrix(model, state)
    state.kernel_scale = saved_scale
    return eps


# ---------------------------------------------------------------------------
# Prior-only kernel chain (stationarity shrinkage diagnostics)


def prior_kernel_draws(
    penalties: PenaltyPair,
    rng: np.random.Generator,
    n_draws: int = 1000,
    kappa: float = 1.0,
    n_burn: int = 100,
) -> np.ndarray:
    """Couple the normalized kernel coefficients with their precision under
    the prior alone and return the squared-norm functional per draw."""
    omega = penalties.combined(kappa)
    J2 = omega.shape[0]
    cho = _chol(omega)
    out = np.empty(n_draws)
    lam = 1.0
    for it in range(n_burn + n_draws):
        z = rng.standard_normal(J2)
        theta = solve_triangular(cho[0], z, lower=True, trans="T") / np.sqrt(lam)
        lam = rng.gamma(0.5 + J2 / 2.0, 1.0 / (0.5 + 0.5 * float(theta @ omega @ theta)))
        if it >= n_burn:
            out[it - n_burn] = float(theta @ penalties.omega0 @ theta)
    return out


# ---------------------------------------------------------------------------
# Chain orchestration


@dataclass
class GibbsDraws:
    """Retained draws of every model component plus running summaries."""

    mean_coefs: np.ndarray  # (n, J_mu)
    obs_vars: np.ndarray  # (n,)
    kernel_coefs: np.ndarray  # (n, p, J*J) effective coefficients
    kernel_scales: np.ndarray  # (n, p)
    penalty_mix: np.ndarray  # (n, p)
    lag_on: np.ndarray  # (n, p) int8
    last_curves: np.ndarray  # (n, p+1, M) trailing latent curves, oldest first
    curve_mean: np.ndarray  # (T, M) posterior mean path
    kernel_mean: np.ndarray  # (p, M, M) posterior mean surfaces, inclusion-weighted
    loading_coefs: np.ndarray | None  # (n, J_mu, J_e)
    factor_vars: np.ndarray | None  # (n, J_e)
    nuggets: np.ndarray | None  # (n,)
    matern_params: np.ndarray | None  # (n, 2): variance, scale
    predictive: np.ndarray | None  # (n, M) next-step observation draws
    curves: np.ndarray | None  # (n, T, M) full paths when stored
    seconds_per_1000: float
    meta: dict

    @property
    def n_draws(self) -> int:
        return self.obs_vars.size

    def covariance_at(self, i: int, model: FarModel):
        if self.matern_params is not None:
            var, scale = self.matern_params[i]
            return MaternCovariance(
                model.grid.points, model.config.matern_smoothness, float(scale), float(var)
            )
        Phi = model.mean_design @ self.loading_coefs[i]
        return FactorCovariance(Phi, self.factor_vars[i], float(self.nuggets[i]))

    def mean_curve_at(self, i: int, model: FarModel) -> np.ndarray:
        return model.mean_curve(self.mean_coefs[i])


def run_gibbs(
    model: FarModel, rng: np.random.Generator, state: FarState | None = None
) -> GibbsDraws:
    """Full posterior simulation.

    One iteration sweeps: latent curves, mean function, measurement
    precision, the kernel block, the lag inclusion flags (after their warm
    start window, when selection is on), and the innovation covariance. The
    per-iteration next-step observation draw doubles as the mixing
    diagnostic chain.
    """
    cfg = model.config
    if state is None:
        state = initialize(model)
    p = cfg.n_lags
    M = model.grid.size
    T = model.n_times
    n = cfg.n_keep
    J2 = model.tensor.dim
    factor_mode = cfg.innovation == "factors"

    mean_coefs = np.empty((n, model.mean_basis.dim))
    obs_vars = np.empty(n)
    kernel_coefs = np.empty((n, p, J2))
    kernel_scales = np.empty((n, p))
    penalty_mix = np.empty((n, p))
    lag_on = np.empty((n, p), dtype=np.int8)
    last_curves = np.empty((n, p + 1, M))
    curve_mean = np.zeros((T, M))
    kernel_mean = np.zeros((p, M, M))
    loadings = np.empty((n, model.mean_basis.dim, state.cov.n_factors)) if factor_mode else None
    factor_vars = np.empty((n, state.cov.n_factors)) if factor_mode else None
    nuggets = np.empty(n) if factor_mode else None
    matern_params = np.empty((n, 2)) if not factor_mode else None
    predictive = np.empty((n, M)) if cfg.track_predictive else None
    curves_store = np.empty((n, T, M)) if cfg.store_curves else None

    total = cfg.n_burn + n * cfg.thin
    kept = 0
    tic = time.perf_counter()
    for it in range(total):
        sample_states(model, state, rng)
        sample_mean_function(model, state, rng)
        sample_obs_precision(model, state, rng)
        sample_kernels(model, state, rng)
        if cfg.lag_select:
            if it < cfg.lag_burn:
                state.lag_on[:] = True
            else:
                sample_lag_states(model, state, rng)
        sample_innovation_model(model, state, rng)

        if it >= cfg.n_burn and (it - cfg.n_burn) % cfg.thin == 0:
            mean_coefs[kept] = state.mean_coefs
            obs_vars[kept] = state.obs_var
            kernel_coefs[kept] = state.kernel_coefs
            kernel_scales[kept] = state.kernel_scale
            penalty_mix[kept] = state.penalty_mix
            lag_on[kept] = state.lag_on
            last_curves[kept] = state.curves[-(p + 1) :]
            curve_mean += state.curves
            for l in range(p):
                if state.lag_on[l]:
                    kernel_mean[l] += model.kernel_matrix(state.kernel_coefs[l])
            if factor_mode:
                loadings[kept] = state.loading_coefs
                factor_vars[kept] = state.cov.factor_vars
                nuggets[kept] = state.cov.nugget
            else:
                matern_params[kept] = (state.cov.variance, state.cov.scale)
            if cfg.track_predictive:
                predictive[kept] = _predictive_draw(model, state, rng)
            if cfg.store_curves:
                curves_store[kept] = state.curves
            kept += 1
    elapsed = time.perf_counter() - tic

    curve_mean /= n
    kernel_mean /= n
    return GibbsDraws(
        mean_coefs=mean_coefs,
        obs_vars=obs_vars,
        kernel_coefs=kernel_coefs,
        kernel_scales=kernel_scales,
        penalty_mix=penalty_mix,
        lag_on=lag_on,
        last_curves=last_curves,
        curve_mean=curve_mean,
        kernel_mean=kernel_mean,
        loading_coefs=loadings,
        factor_vars=factor_vars,
        nuggets=nuggets,
        matern_params=matern_params,
        predictive=predictive,
        curves=curves_store,
        seconds_per_1000=1000.0 * elapsed / max(total, 1),
        meta={"n_burn": cfg.n_burn, "n_keep": n, "thin": cfg.thin},
    )


def _predictive_draw(model: FarModel, state: FarState, rng: np.random.Generator) -> np.ndarray:
    """One observation-level draw of the next curve given the current state."""
    p = model.config.n_lags
    ops = model.lag_operators(state.kernel_coefs, state.lag_on)
    nxt = np.zeros(model.grid.size)
    for l in range(p):
        if ops[l] is not None:
            nxt += ops[l] @ state.curves[-(l + 1)]
    nxt += state.cov.sample(rng, 1)[0]
    mean_curve = model.mean_curve(state.mean_coefs)
    return mean_curve + nxt + np.sqrt(state.obs_var) * rng.standard_normal(model.grid.size)


# ---------------------------------------------------------------------------
# Forecasting and interpolation from retained draws


def _draw_state_for(model: FarModel, draws: GibbsDraws, i: int) -> FarState:
    return FarState(
        curves=np.zeros((1, model.grid.size)),
        mean_coefs=draws.mean_coefs[i],
        mean_penalty=1.0,
        obs_var=float(draws.obs_vars[i]),
        kernel_raw=draws.kernel_coefs[i],
        kernel_scale=np.ones(model.config.n_lags),
        kernel_raw_penalty=np.ones(model.config.n_lags),
        penalty_mix=draws.penalty_mix[i],
        lag_on=draws.lag_on[i].astype(bool),
        cov=draws.covariance_at(i, model),
    )


def filter_forecasts(
    model: FarModel,
    draws: GibbsDraws,
    obs: ObservationSet,
    origins,
    horizon: int = 1,
    thin: int = 1,
    rng: np.random.Generator | None = None,
):
    """Latent-curve forecasts from each retained draw over a data window.

    For every used draw the extended series is filtered once with that
    draw's parameters (the posterior states adapt to the new data while the
    static parameters stay at their training-period values) and the curve
    `horizon` steps past each origin index is predicted. Returns an array of
    shape (n_used, len(origins), M); with an rng, also observation-level
    predictive draws of the same shape.
    """
    origins = np.asarray(origins, dtype=int)
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if np.any(origins < 0) or np.any(origins >= obs.n_times):
        raise ValueError("origins out of range")
    M = model.grid.size
    use = list(range(0, draws.n_draws, thin))
    means = np.empty((len(use), origins.size, M))
    samples = np.empty_like(means) if rng is not None else None
    for row, i in enumerate(use):
        st = _draw_state_for(model, draws, i)
        spec, Zs, ys, offsets, _ = _state_space(model, st, obs)
        filt = kalman_filter(spec, Zs, ys, st.obs_var, offsets=offsets)
        mean_curve = model.mean_curve(st.mean_coefs)
        G = spec.transition
        for j, t0 in enumerate(origins):
            m = filt.filt_mean[t0]
            for _ in range(horizon):
                m = G @ m
            means[row, j] = mean_curve + m[:M]
            if samples is not None:
                P = filt.filt_cov[t0]
                for _ in range(horizon):
                    P = G @ P @ G.T + spec.innovation_cov
                L = _chol(P + 1e-12 * np.eye(P.shape[0]))
                z = np.tril(L[0]) @ rng.standard_normal(P.shape[0])
                samples[row, j] = (
                    mean_curve
                    + m[:M]
                    + z[:M]
                    + np.sqrt(st.obs_var) * rng.standard_normal(M)
                )
    if samples is not None:
        return means, samples
    return means


def krige_draws(model: FarModel, draws: GibbsDraws, new_points, thin: int = 1):
    """Posterior interpolation of the final latent curve at new points.

    Under the factor covariance the conditional mean couples the lag drift
    with the loading projection of the on-grid innovation and the variance
    is free of the time index; under the Matern covariance the draw's dense
    conditional is used. Returns (means, vars) with one row per used draw.
    """
    new = np.atleast_1d(np.asarray(new_points, dtype=float))
    p = model.config.n_lags
    B_new = model.kernel_basis.design(new)
    tp_new = model.mean_basis.design(new)
    w = model.grid.weights
    B = model.kernel_design
    rows = list(range(0, draws.n_draws, thin))
    means = np.empty((len(rows), new.size))
    variances = np.empty_like(means)
    for row, i in enumerate(rows):
        lag_flags = draws.lag_on[i].astype(bool)
        trail = draws.last_curves[i]  # oldest first, last row is the final curve
        drift_new = np.zeros(new.size)
        drift_grid = np.zeros(model.grid.size)
        for l in range(p):
            if not lag_flags[l]:
                continue
            Theta = model.tensor.coef_matrix(draws.kernel_coefs[i, l])
            lagged = trail[-(l + 2)]
            v = (B * w[:, None]).T @ lagged
            drift_new += B_new @ Theta @ v
            drift_grid += B @ Theta @ v
        innovation = trail[-1] - drift_grid
        mu_new = tp_new @ draws.mean_coefs[i]
        cov = draws.covariance_at(i, model)
        if isinstance(cov, MaternCovariance):
            adjust, var = cov.krige(new, innovation)
            means[row] = mu_new + drift_new + adjust
            variances[row] = var
        else:
            phi_new = tp_new @ draws.loading_coefs[i]
            s = cov.shrinkage()
            proj = cov.loadings.T @ innovation
            means[row] = mu_new + drift_new + phi_new @ (s * proj)
            variances[row] = cov.nugget * (1.0 + np.sum(phi_new**2 * s, axis=1))
    return means, variances


def lag_order_counts(draws: GibbsDraws) -> np.ndarray:
    """Posterior draw counts of the effective lag order (largest included
    lag; zero when every lag is off)."""
    p = draws.lag_on.shape[1]
    counts = np.zeros(p + 1, dtype=int)
    for row in draws.lag_on:
        on = np.nonzero(row)[0]
        counts[on[-1] + 1 if on.size else 0] += 1
    return counts
