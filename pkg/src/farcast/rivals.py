"""Reference forecasters for the rolling comparison studies.

Every forecaster follows the same two-call protocol: ``fit(history, design)``
with an :class:`~farcast.grid.ObservationSet` (the design argument is an
optional hint and may be None), then ``predict(h)`` for the curve forecast on
the evaluation grid h steps past the end of the history.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_discrete_lyapunov
from scipy.optimize import minimize

from .basis import BsplineBasis
from .grid import EvaluationGrid, ObservationSet

__all__ = [
    "complete_curves",
    "smoothing_basis",
    "presmooth_curves",
    "FpcDecomposition",
    "fpc_decompose",
    "RandomWalkForecaster",
    "PooledMeanForecaster",
    "PointwiseSesForecaster",
    "CurveVarForecaster",
    "EstimatedKernelForecaster",
    "ScoreVarForecaster",
    "nelson_siegel_design",
    "NsStateSpaceParams",
    "ns_loglik",
    "ns_filtered_factors",
    "NelsonSiegelTwoStepForecaster",
    "NelsonSiegelStateSpaceForecaster",
    "FORECASTERS",
    "make_forecaster",
]


def complete_curves(obs: ObservationSet) -> np.ndarray:
    """Fill every curve in on the full grid by linear interpolation.

    Values outside the observed range of a curve copy the nearest observed
    value, so fully observed rows pass through unchanged.

    Parameters
    ----------
    obs : ObservationSet
        Partially observed curves; each row needs at least one value.

    Returns
    -------
    ndarray of shape (n_times, grid.size)
    """
    grid = obs.grid.points
    out = np.empty((obs.n_times, grid.size))
    for t in range(obs.n_times):
        idx = np.asarray(obs.indices[t])
        y = np.asarray(obs.values[t], dtype=float)
        if idx.size == 0:
            raise ValueError("curve without observations")
        order = np.argsort(idx, kind="stable")
        out[t] = np.interp(grid, grid[idx[order]], y[order])
    return out


def smoothing_basis(points, lo: float, hi: float, n_interior: int = 8) -> BsplineBasis:
    # cap the knots so the least-squares fit stays overdetermined
    interior = max(0, min(n_interior, np.asarray(points).size - 5))
    return BsplineBasis.cubic(interior, lo, hi)


def presmooth_curves(curves: np.ndarray, grid: EvaluationGrid, n_interior: int = 8) -> np.ndarray:
    """Project each curve onto a cubic B-spline span by least squares."""
    basis = smoothing_basis(grid.points, grid.points[0], grid.points[-1], n_interior)
    B = basis.design(grid.points)
    coefs, *_ = np.linalg.lstsq(B, curves.T, rcond=None)
    return (B @ coefs).T


@dataclass
class FpcDecomposition:
    """Principal components of a curve sample under the grid quadrature.

    components holds the eigenfunction values on the grid, orthonormal in the
    quadrature inner product; variances are the matching eigenvalues in
    decreasing order and scores the per-curve projections of the centered
    sample.
    """

    mean: np.ndarray
    components: np.ndarray
    variances: np.ndarray
    scores: np.ndarray
    total_variance: float

    @property
    def n_components(self) -> int:
        return self.variances.size


def fpc_decompose(curves: np.ndarray, grid: EvaluationGrid, threshold: float = 0.95) -> FpcDecomposition:
    """Eigendecompose the sample covariance of `curves` under the grid weights.

    Keeps the smallest number of components whose variance share reaches
    `threshold`, never more than the numerically positive eigenvalues.
    """
    if not 0.0 < threshold <= 1.0:
        raise ValueError("threshold must be in (0, 1]")
    curves = np.asarray(curves, dtype=float)
    w = grid.weights
    mean = curves.mean(axis=0)
    X = curves - mean
    C0 = X.T @ X / curves.shape[0]
    root = np.sqrt(w)
    S = root[:, None] * C0 * root[None, :]
    S = 0.5 * (S + S.T)
    lam, E = np.linalg.eigh(S)
    lam = lam[::-1]
    E = E[:, ::-1]
    total = float(np.clip(lam, 0.0, None).sum())
    # identical curves leave rounding residue of the row mean behind
    if total <= np.mean(curves * curves) * 1e-20:
        empty = np.zeros((grid.size, 0))
        return FpcDecomposition(mean, empty, np.zeros(0), np.zeros((curves.shape[0], 0)), 0.0)
    positive = lam > lam[0] * 1e-12
    share = np.cumsum(np.clip(lam, 0.0, None)) / total
    k = int(np.searchsorted(share, threshold - 1e-12) + 1)
    k = min(k, int(positive.sum()))
    components = E[:, :k] / root[:, None]
    scores = X @ (w[:, None] * components)
    return FpcDecomposition(mean, components, lam[:k].copy(), scores, total)


def _var_fit(data: np.ndarray, ridge: float):
    """VAR(1) with intercept by least squares on the lag pairs.

    Falls back to a ridge solve (penalty on the lag matrix only, the
    intercept stays free) when the regression has no more samples than
    dimensions or is rank deficient.  Returns (coefficient, intercept,
    used_ridge).
    """
    lag = data[:-1]
    lead = data[1:]
    n, d = lag.shape
    lag_mean = lag.mean(axis=0)
    lead_mean = lead.mean(axis=0)
    Xc = lag - lag_mean
    Yc = lead - lead_mean
    used_ridge = n <= d
    if not used_ridge:
        sol, _, rank, _ = np.linalg.lstsq(Xc, Yc, rcond=None)
        used_ridge = rank < d
    if used_ridge:
        sol = np.linalg.solve(Xc.T @ Xc + ridge * np.eye(d), Xc.T @ Yc)
    A = sol.T
    intercept = lead_mean - A @ lag_mean
    return A, intercept, used_ridge


def _fixed_design_indices(obs: ObservationSet):
    """Shared observation indices when every row uses the same ones, else None."""
    first = np.asarray(obs.indices[0])
    for t in range(1, obs.n_times):
        idx = np.asarray(obs.indices[t])
        if idx.size != first.size or not np.array_equal(idx, first):
            return None
    return first


class RandomWalkForecaster:
    """Repeats the last curve, completed onto the grid when sparse."""

    def fit(self, obs: ObservationSet, design=None):
        if obs.n_times < 1:
            raise ValueError("empty history")
        self.curve_ = complete_curves(obs)[-1]
        return self

    def predict(self, horizon: int = 1) -> np.ndarray:
        if horizon < 1:
            raise ValueError("horizon must be positive")
        return self.curve_.copy()


class PooledMeanForecaster:
    """B-spline least-squares mean of all observations, used as the forecast."""

    def __init__(self, n_interior: int = 8):
        self.n_interior = n_interior

    def fit(self, obs: ObservationSet, design=None):
        if obs.n_times < 2:
            raise ValueError("need at least two curves")
        grid = obs.grid
        points = np.concatenate([grid.points[np.asarray(obs.indices[t])] for t in range(obs.n_times)])
        values = np.concatenate([np.asarray(obs.values[t], dtype=float) for t in range(obs.n_times)])
        basis = smoothing_basis(np.unique(points), grid.points[0], grid.points[-1], self.n_interior)
        coefs, *_ = np.linalg.lstsq(basis.design(points), values, rcond=None)
        self.curve_ = basis.design(grid.points) @ coefs
        return self

    def predict(self, horizon: int = 1) -> np.ndarray:
        if horizon < 1:
            raise ValueError("horizon must be positive")
        return self.curve_.copy()


class PointwiseSesForecaster:
    """Exponential smoothing of each grid point series.

    The smoothing weight is fitted per series by grid search over
    alpha in {0.01, ..., 0.99} on the in-sample one-step squared errors,
    with ties resolved toward the largest alpha; constant series get
    alpha = 1 so the forecaster degrades to a random walk there.
    Sparse histories are completed the same way as the curve VAR.
    """

    ALPHAS = np.round(np.arange(0.01, 1.0, 0.01), 2)

    def fit(self, obs: ObservationSet, design=None):
        if obs.n_times < 3:
            raise ValueError("need at least three curves")
        Y = complete_curves(obs)
        T, M = Y.shape
        sse = np.zeros((self.ALPHAS.size, M))
        for i, alpha in enumerate(self.ALPHAS):
            level = Y[0].copy()
            acc = np.zeros(M)
            for t in range(1, T):
                err = Y[t] - level
                acc += err * err
                level = alpha * Y[t] + (1.0 - alpha) * level
            sse[i] = acc
        # argmin on the reversed rows keeps the largest alpha on ties
        pick = self.ALPHAS.size - 1 - np.argmin(sse[::-1], axis=0)
        alphas = self.ALPHAS[pick]
        alphas = np.where(np.ptp(Y, axis=0) == 0.0, 1.0, alphas)
        level = Y[0].copy()
        fit_sse = np.zeros(M)
        for t in range(1, T):
            err = Y[t] - level
            fit_sse += err * err
            level = alphas * Y[t] + (1.0 - alphas) * level
        self.alphas_ = alphas
        self.level_ = level
        self.fit_sse_ = fit_sse
        return self

    def predict(self, horizon: int = 1) -> np.ndarray:
        if horizon < 1:
            raise ValueError("horizon must be positive")
        return self.level_.copy()


class CurveVarForecaster:
    """VAR(1) on the discretized curves.

    Fixed designs are fitted at the shared observation points and the
    forecast is carried to the grid by a least-squares spline (linear
    interpolation when fewer than eight points are available); changing
    designs are first completed onto the grid by interpolation.  Rank
    deficient regressions fall back to a ridge solve, recorded in
    ``metadata``.
    """

    def __init__(self, ridge: float = 1e-4, n_interior: int = 8):
        self.ridge = ridge
        self.n_interior = n_interior

    def fit(self, obs: ObservationSet, design=None):
        if obs.n_times < 2:
            raise ValueError("need at least two curves")
        grid = obs.grid
        shared = _fixed_design_indices(obs)
        if shared is not None:
            data = np.stack([np.asarray(obs.values[t], dtype=float) for t in range(obs.n_times)])
            self.points_ = grid.points[shared]
        else:
            data = complete_curves(obs)
            self.points_ = grid.points
        A, intercept, used_ridge = _var_fit(data, self.ridge)
        self.coefficient = A
        self.intercept = intercept
        self.metadata = {"ridge": used_ridge}
        self.last_ = data[-1]
        self.grid_ = grid
        return self

    def _to_grid(self, values: np.ndarray) -> np.ndarray:
        grid = self.grid_
        if self.points_.size == grid.size and np.array_equal(self.points_, grid.points):
            return values
        if self.points_.size < 8:
            return np.interp(grid.points, self.points_, values)
        basis = smoothing_basis(self.points_, grid.points[0], grid.points[-1], self.n_interior)
        coefs, *_ = np.linalg.lstsq(basis.design(self.points_), values, rcond=None)
        return basis.design(grid.points) @ coefs

    def predict(self, horizon: int = 1) -> np.ndarray:
        if horizon < 1:
            raise ValueError("horizon must be positive")
        x = self.last_
        for _ in range(horizon):
            x = self.intercept + self.coefficient @ x
        return self._to_grid(x)


class _FpcPipeline:
    """Shared completion, presmoothing and decomposition steps."""

    def __init__(self, variance_threshold: float = 0.95, n_interior: int = 8):
        self.variance_threshold = variance_threshold
        self.n_interior = n_interior

    def _decompose(self, obs: ObservationSet):
        if obs.n_times < 3:
            raise ValueError("need at least three curves")
        smooth = presmooth_curves(complete_curves(obs), obs.grid, self.n_interior)
        fpc = fpc_decompose(smooth, obs.grid, self.variance_threshold)
        return smooth, fpc


class EstimatedKernelForecaster(_FpcPipeline):
    """FAR(1) fit by principal-component inversion of the lag-1 covariance.

    The autoregression surface on the grid is
    sum_{j,k} variances_k^{-1} <C1 v_k, v_j> v_j(tau) v_k(u) over the
    retained components, and the forecast applies it by quadrature to the
    centered last curve.  One-step only.
    """

    def fit(self, obs: ObservationSet, design=None):
        grid = obs.grid
        smooth, fpc = self._decompose(obs)
        self.fpc = fpc
        w = grid.weights
        X = smooth - fpc.mean
        if fpc.n_components == 0:
            self.score_map = np.zeros((0, 0))
            self.kernel = np.zeros((grid.size, grid.size))
        else:
            C1 = X[1:].T @ X[:-1] / (X.shape[0] - 1)
            V = fpc.components
            Wq = w[:, None] * V
            cross = Wq.T @ C1 @ Wq
            self.score_map = cross / fpc.variances[None, :]
            self.kernel = V @ self.score_map @ V.T
        self.mean_ = fpc.mean
        self.last_centered_ = X[-1]
        self.weights_ = w
        return self

    def predict(self, horizon: int = 1) -> np.ndarray:
        if horizon != 1:
            raise ValueError("one-step forecasts only")
        return self.mean_ + self.kernel @ (self.weights_ * self.last_centered_)


class ScoreVarForecaster(_FpcPipeline):
    """VAR(1) on the principal-component scores, curve rebuilt from the mean."""

    def __init__(self, variance_threshold: float = 0.95, n_interior: int = 8, ridge: float = 1e-4):
        super().__init__(variance_threshold, n_interior)
        self.ridge = ridge

    def fit(self, obs: ObservationSet, design=None):
        _, fpc = self._decompose(obs)
        self.fpc = fpc
        s = fpc.scores
        if fpc.n_components == 0:
            self.coefficient = np.zeros((0, 0))
            self.metadata = {"ridge": False}
        else:
            # scores are centered by construction, no intercept
            n, d = s.shape[0] - 1, s.shape[1]
            used_ridge = n <= d
            if not used_ridge:
                sol, _, rank, _ = np.linalg.lstsq(s[:-1], s[1:], rcond=None)
                used_ridge = rank < d
            if used_ridge:
                sol = np.linalg.solve(s[:-1].T @ s[:-1] + self.ridge * np.eye(d), s[:-1].T @ s[1:])
            self.coefficient = sol.T
            self.metadata = {"ridge": used_ridge}
        self.last_scores_ = s[-1] if fpc.n_components else np.zeros(0)
        return self

    def predict(self, horizon: int = 1) -> np.ndarray:
        if horizon < 1:
            raise ValueError("horizon must be positive")
        s = self.last_scores_
        for _ in range(horizon):
            s = self.coefficient @ s
        return self.fpc.mean + self.fpc.components @ s


def _ns_loadings(maturities, decay: float) -> np.ndarray:
    m = np.asarray(maturities, dtype=float)
    if decay <= 0.0:
        raise ValueError("decay must be positive")
    x = decay * m
    with np.errstate(divide="ignore", invalid="ignore"):
        slope = np.where(x == 0.0, 1.0, -np.expm1(-x) / np.where(x == 0.0, 1.0, x))
    curvature = slope - np.exp(-x)
    return np.column_stack([np.ones_like(m), slope, curvature])


def nelson_siegel_design(maturities, decay: float = 0.0609) -> np.ndarray:
    """Level, slope and curvature loadings at the given maturities.

    The slope loading (1 - exp(-decay m)) / (decay m) is continued by its
    limit 1 at m = 0.  Raises when the three columns are numerically
    collinear, which happens when the maturities are too close together or
    the decay is extreme.
    """
    F = _ns_loadings(maturities, decay)
    if F.shape[0] >= 3 and np.linalg.matrix_rank(F, tol=1e-10) < 3:
        raise ValueError("maturities too close for the factor design")
    return F


def _factor_ols(obs: ObservationSet, F: np.ndarray) -> np.ndarray:
    betas = np.empty((obs.n_times, 3))
    for t in range(obs.n_times):
        idx = np.asarray(obs.indices[t])
        if idx.size < 3:
            raise ValueError("need at least three observed maturities per time")
        betas[t], *_ = np.linalg.lstsq(F[idx], np.asarray(obs.values[t], dtype=float), rcond=None)
    return betas


class NelsonSiegelTwoStepForecaster:
    """Fixed-decay factor regressions with a VAR(1) on the fitted factors.

    Per-time least squares gives the factor path; a VAR(1) with intercept
    (diagonal coefficient optional, fitted per equation) propagates it.
    """

    def __init__(self, decay: float = 0.0609, diagonal: bool = False):
        self.decay = decay
        self.diagonal = diagonal

    def fit(self, obs: ObservationSet, design=None):
        if obs.n_times < 10:
            raise ValueError("need at least ten curves")
        F = nelson_siegel_design(obs.grid.points, self.decay)
        betas = _factor_ols(obs, F)
        if self.diagonal:
            A = np.zeros((3, 3))
            c = np.zeros(3)
            for j in range(3):
                Z = np.column_stack([np.ones(obs.n_times - 1), betas[:-1, j]])
                coef, *_ = np.linalg.lstsq(Z, betas[1:, j], rcond=None)
                c[j], A[j, j] = coef
        else:
            Z = np.column_stack([np.ones(obs.n_times - 1), betas[:-1]])
            coef, *_ = np.linalg.lstsq(Z, betas[1:], rcond=None)
            c = coef[0]
            A = coef[1:].T
        self.factors_ = betas
        self.coefficient = A
        self.intercept = c
        self.design_ = F
        return self

    def predict(self, horizon: int = 1) -> np.ndarray:
        if horizon < 1:
            raise ValueError("horizon must be positive")
        beta = self.factors_[-1]
        for _ in range(horizon):
            beta = self.intercept + self.coefficient @ beta
        return self.design_ @ beta


@dataclass
class NsStateSpaceParams:
    """State space parameterization of the factor yield model.

    Factors follow beta_t - state_mean = transition (beta_{t-1} - state_mean)
    + innovation with diagonal covariance state_var; observations add
    independent noise with one variance per maturity (obs_var).
    """

    decay: float
    transition: np.ndarray
    state_mean: np.ndarray
    state_var: np.ndarray
    obs_var: np.ndarray


def _stationary_cov(transition: np.ndarray, state_var: np.ndarray) -> np.ndarray:
    eigs = np.abs(np.linalg.eigvals(transition))
    if eigs.max() >= 1.0 - 1e-9:
        return 1e6 * np.eye(transition.shape[0])
    return solve_discrete_lyapunov(transition, np.diag(state_var))


_LOG_2PI = np.log(2.0 * np.pi)


def _ns_filter(params: NsStateSpaceParams, obs: ObservationSet):
    """Kalman filter of the factor model by sequential scalar updates.

    The observation noise is diagonal, so each maturity can be absorbed one
    at a time; this is algebraically identical to the joint update and
    avoids any matrix decompositions.  No identification check on the
    loadings here: the likelihood stays finite for degenerate designs and
    the optimizer needs the smooth surface.  Returns the filtered means of
    the centered factors and the exact log-likelihood.
    """
    F = _ns_loadings(obs.grid.points, params.decay)
    G = params.transition
    offset = F @ params.state_mean
    x = np.zeros(3)
    P = _stationary_cov(G, params.state_var)
    loglik = 0.0
    means = np.empty((obs.n_times, 3))
    for t in range(obs.n_times):
        if t:
            x = G @ x
            P = G @ P @ G.T
            P[np.diag_indices_from(P)] += params.state_var
        idx = np.asarray(obs.indices[t])
        y = np.asarray(obs.values[t], dtype=float)
        for i in range(idx.size):
            j = idx[i]
            z = F[j]
            Pz = P @ z
            s = z @ Pz + params.obs_var[j]
            v = y[i] - offset[j] - z @ x
            loglik -= 0.5 * (_LOG_2PI + np.log(s) + v * v / s)
            x = x + Pz * (v / s)
            P = P - np.outer(Pz, Pz) / s
        P = 0.5 * (P + P.T)
        means[t] = x
    return means, float(loglik)


def ns_loglik(params: NsStateSpaceParams, obs: ObservationSet) -> float:
    """Exact Gaussian log-likelihood of the factor state space model."""
    return _ns_filter(params, obs)[1]


def ns_filtered_factors(params: NsStateSpaceParams, obs: ObservationSet) -> np.ndarray:
    """Filtered factor means, one row per time."""
    means, _ = _ns_filter(params, obs)
    return means + params.state_mean


class NelsonSiegelStateSpaceForecaster:
    """Joint likelihood fit of the factor yield model.

    All of decay, factor transition, factor mean and the diagonal noise
    variances are estimated by quasi-Newton maximum likelihood (positive
    parameters on the log scale) from the two-step starting point plus
    perturbed restarts.  Fits that do not produce a finite likelihood or
    whose transition is explosive are flagged unstable in ``metadata``
    rather than silently repaired.
    """

    def __init__(self, decay0: float = 0.0609, n_restarts: int = 5, max_iter: int = 200,
                 seed: int = 0, warm_start: bool = True):
        self.decay0 = decay0
        self.n_restarts = max(1, n_restarts)
        self.max_iter = max_iter
        self.seed = seed
        # rolling studies refit on overlapping windows; starting from the
        # previous optimum cuts the optimizer work by an order of magnitude
        self.warm_start = warm_start

    def _pack(self, params: NsStateSpaceParams) -> np.ndarray:
        return np.concatenate([
            [np.log(params.decay)],
            params.transition.ravel(),
            params.state_mean,
            np.log(params.state_var),
            np.log(params.obs_var),
        ])

    def _unpack(self, x: np.ndarray, n_mat: int) -> NsStateSpaceParams:
        return NsStateSpaceParams(
            decay=float(np.exp(x[0])),
            transition=x[1:10].reshape(3, 3),
            state_mean=x[10:13].copy(),
            state_var=np.exp(x[13:16]),
            obs_var=np.exp(x[16:16 + n_mat]),
        )

    def _start(self, obs: ObservationSet) -> NsStateSpaceParams:
        two_step = NelsonSiegelTwoStepForecaster(self.decay0).fit(obs)
        betas = two_step.factors_
        A = two_step.coefficient
        if np.abs(np.linalg.eigvals(A)).max() < 1.0 - 1e-6:
            mean = np.linalg.solve(np.eye(3) - A, two_step.intercept)
        else:
            mean = betas.mean(axis=0)
        resid = betas[1:] - two_step.intercept - betas[:-1] @ A.T
        state_var = np.maximum(resid.var(axis=0), 1e-10)
        F = two_step.design_
        obs_var = np.full(obs.grid.size, 1e-10)
        counts = np.zeros(obs.grid.size)
        for t in range(obs.n_times):
            idx = np.asarray(obs.indices[t])
            err = np.asarray(obs.values[t], dtype=float) - F[idx] @ betas[t]
            np.add.at(obs_var, idx, err * err)
            np.add.at(counts, idx, 1.0)
        obs_var = np.maximum(obs_var / np.maximum(counts, 1.0), 1e-10)
        return NsStateSpaceParams(self.decay0, A, mean, state_var, obs_var)

    def fit(self, obs: ObservationSet, design=None):
        n_mat = obs.grid.size
        warm = self.warm_start and getattr(self, "params", None) is not None \
            and self.params.obs_var.size == n_mat
        start = self.params if warm else self._start(obs)
        self.start_params = start
        x0 = self._pack(start)
        bounds = (
            [(np.log(1e-4), np.log(10.0))]
            + [(-5.0, 5.0)] * 9
            + [(-10.0, 10.0)] * 3
            + [(np.log(1e-12), np.log(1e4))] * (3 + n_mat)
        )

        def objective(x):
            try:
                value = ns_loglik(self._unpack(x, n_mat), obs)
            except np.linalg.LinAlgError:
                return np.inf
            return -value if np.isfinite(value) else np.inf

        rng = np.random.default_rng(self.seed)
        best_x, best_val, any_success = None, np.inf, False
        n_starts = 1 if warm else self.n_restarts
        for r in range(n_starts):
            xs = x0 if r == 0 else x0 + 0.1 * rng.standard_normal(x0.size)
            # the stopping tolerances must sit above the finite-difference
            # noise floor of the log-likelihood or the optimizer grinds to
            # maxiter without ever reporting convergence
            res = minimize(objective, xs, method="L-BFGS-B", bounds=bounds,
                           options={"maxiter": self.max_iter, "ftol": 5e-6, "gtol": 1.0})
            any_success = any_success or bool(res.success)
            if res.fun < best_val:
                best_val, best_x = res.fun, res.x
        if best_x is None:
            best_x = x0
        params = self._unpack(best_x, n_mat)
        design = _ns_loadings(obs.grid.points, params.decay)
        reason = None
        if not np.isfinite(best_val):
            reason = "no finite likelihood"
        elif np.abs(np.linalg.eigvals(params.transition)).max() >= 1.0 + 1e-8:
            reason = "explosive factor transition"
        elif np.linalg.matrix_rank(design, tol=1e-10) < 3:
            reason = "degenerate factor design"
        elif not any_success:
            reason = "optimizer did not converge"
        self.params = params
        self.loglik_ = -best_val
        self.metadata = {"unstable": reason is not None, "reason": reason}
        means, _ = _ns_filter(params, obs)
        self.last_state_ = means[-1]
        self.design_ = design
        return self

    def predict(self, horizon: int = 1) -> np.ndarray:
        if horizon < 1:
            raise ValueError("horizon must be positive")
        x = self.last_state_
        for _ in range(horizon):
            x = self.params.transition @ x
        return self.design_ @ (self.params.state_mean + x)


FORECASTERS = {
    "rw": RandomWalkForecaster,
    "mean": PooledMeanForecaster,
    "ses": PointwiseSesForecaster,
    "var": CurveVarForecaster,
    "kernel": EstimatedKernelForecaster,
    "score-var": ScoreVarForecaster,
    "ns-two-step": NelsonSiegelTwoStepForecaster,
    "ns-mle": NelsonSiegelStateSpaceForecaster,
}


def make_forecaster(name: str, **options):
    """Instantiate a registered forecaster by its short name."""
    try:
        cls = FORECASTERS[name]
    except KeyError:
        raise ValueError(f"unknown forecaster {name!r}") from None
    return cls(**options)
