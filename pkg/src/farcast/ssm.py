"""Linear-Gaussian state space recursions: Kalman filter, fixed-interval
smoother, a batched mean-correction simulation smoother, and multi-step
forecasting. Observation operators may be dense matrices or integer index
arrays (point evaluation of state components)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

__all__ = [
    "StateSpaceSpec",
    "FilterResult",
    "SmootherResult",
    "kalman_filter",
    "kalman_smoother",
    "simulation_smoother",
    "forecast",
]

_JITTER = 1e-10


def _chol(A: np.ndarray):
    """Cholesky with a one-shot diagonal jitter retry."""
    try:
        return cho_factor(A, lower=True)
    except np.linalg.LinAlgError:
        bump = _JITTER * max(1.0, float(np.trace(A)) / A.shape[0])
        return cho_factor(A + bump * np.eye(A.shape[0]), lower=True)


def _sym(A: np.ndarray) -> np.ndarray:
    return (A + A.T) / 2.0


def _obs_rows(Z, X: np.ndarray) -> np.ndarray:
    """Z @ X for dense Z, row selection for integer index arrays."""
    if Z.dtype.kind in "iu":
        return X[Z]
    return Z @ X


def _obs_vec(Z, x: np.ndarray) -> np.ndarray:
    if Z.dtype.kind in "iu":
        return x[Z]
    return Z @ x


@dataclass
class StateSpaceSpec:
    """Homogeneous transition block of a linear-Gaussian state space model.

    transition G, innovation covariance W, and the time-1 prior (init_mean,
    init_cov); the transition is not applied before the first observation.
    innovation_factor optionally holds L with W = L L' for exact innovation
    draws when W is singular (e.g. companion stacking).
    """

    transition: np.ndarray
    innovation_cov: np.ndarray
    init_mean: np.ndarray
    init_cov: np.ndarray
    innovation_factor: np.ndarray | None = None

    def __post_init__(self):
        self.transition = np.asarray(self.transition, dtype=float)
        self.innovation_cov = np.asarray(self.innovation_cov, dtype=float)
        self.init_mean = np.asarray(self.init_mean, dtype=float)
        self.init_cov = np.asarray(self.init_cov, dtype=float)
        s = self.dim
        if self.transition.shape != (s, s) or self.innovation_cov.shape != (s, s):
            raise ValueError("transition and innovation_cov must be (S, S)")
        if self.init_cov.shape != (s, s):
            raise ValueError("init_cov must be (S, S)")

    @property
    def dim(self) -> int:
        return self.init_mean.size

    def draw_innovation(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """(size, S) innovation draws using the exact factor when given."""
        if self.innovation_factor is not None:
            L = self.innovation_factor
            return rng.standard_normal((size, L.shape[1])) @ L.T
        L = np.linalg.cholesky(
            self.innovation_cov + _JITTER * np.eye(self.dim)
        )
        return rng.standard_normal((size, self.dim)) @ L.T


@dataclass
class FilterResult:
    pred_mean: np.ndarray  # a_t, (T, S)
    pred_cov: np.ndarray  # R_t, (T, S, S)
    filt_mean: np.ndarray  # m_t, (T, S)
    filt_cov: np.ndarray  # C_t, (T, S, S)
    obs_pred: list  # f_t per time (None when nothing observed)
    obs_pred_cov: list  # Q_t per time (None when nothing observed)
    loglik: float
    gains: list = field(repr=False)  # A_t per time (None when nothing observed)


@dataclass
class SmootherResult:
    means: np.ndarray  # (T, S)
    covs: np.ndarray  # (T, S, S)


def _cov_pass(spec: StateSpaceSpec, Zs, obs_var: float):
    """Covariance recursion and gains; independent of the observed values."""
    G, W = spec.transition, spec.innovation_cov
    T = len(Zs)
    S = spec.dim
    R = np.empty((T, S, S))
    C = np.empty((T, S, S))
    gains, chos, ZRs = [], [], []
    for t in range(T):
        R[t] = spec.init_cov if t == 0 else _sym(G @ C[t - 1] @ G.T + W)
        Z = Zs[t]
        if Z is None or len(Z) == 0:
            gains.append(None)
            chos.append(None)
            ZRs.append(None)
            C[t] = R[t]
            continue
        ZR = _obs_rows(Z, R[t])
        Qt = _obs_rows(Z, ZR.T).T + obs_var * np.eye(ZR.shape[0])
        cho = _chol(Qt)
        A = cho_solve(cho, ZR).T  # R Z' Qt^{-1}
        C[t] = _sym(R[t] - A @ ZR)
        gains.append(A)
        chos.append(cho)
        ZRs.append(ZR)
    return R, C, gains, chos, ZRs


def _mean_pass(spec: StateSpaceSpec, Zs, ys, offsets, gains, chos, ZRs, R):
    """Filtered means and log-likelihood given precomputed gains."""
    G = spec.transition
    T = len(Zs)
    S = spec.dim
    a = np.empty((T, S))
    m = np.empty((T, S))
    fs = []
    loglik = 0.0
    for t in range(T):
        a[t] = spec.init_mean if t == 0 else G @ m[t - 1]
        Z = Zs[t]
        if Z is None or len(Z) == 0:
            m[t] = a[t]
            fs.append(None)
            continue
        f = _obs_vec(Z, a[t])
        if offsets is not None and offsets[t] is not None:
            f = f + offsets[t]
        v = ys[t] - f
        m[t] = a[t] + gains[t] @ v
        cho = chos[t]
        logdet = 2.0 * np.sum(np.log(np.diag(cho[0])))
        loglik -= 0.5 * (v.size * np.log(2.0 * np.pi) + logdet + v @ cho_solve(cho, v))
        fs.append(f)
    return a, m, fs, loglik


def kalman_filter(spec: StateSpaceSpec, Zs, ys, obs_var: float, offsets=None) -> FilterResult:
    """Forward recursion.

    Parameters
    ----------
    Zs : sequence of observation operators, one per time; dense (m_t, S)
        arrays, integer index arrays, or None/empty for unobserved times.
    ys : sequence of observation vectors aligned with Zs.
    obs_var : scalar observation noise variance.
    offsets : optional per-time vectors added to the observation equation.

    Returns
    -------
    FilterResult with one-step state predictions, filtered moments,
    observation predictions, and the Gaussian log-likelihood.
    """
    R, C, gains, chos, ZRs = _cov_pass(spec, Zs, obs_var)
    a, m, fs, loglik = _mean_pass(spec, Zs, ys, offsets, gains, chos, ZRs, R)
    obs_pred_cov = []
    for t, Z in enumerate(Zs):
        if Z is None or len(Z) == 0:
            obs_pred_cov.append(None)
        else:
            obs_pred_cov.append(
                _obs_rows(Z, ZRs[t].T).T + obs_var * np.eye(len(ys[t]))
            )
    return FilterResult(a, R, m, C, fs, obs_pred_cov, loglik, gains)


def _backward_gains(spec: StateSpaceSpec, R: np.ndarray, C: np.ndarray):
    """RTS gains J_t = C_t G' R_{t+1}^{-1} for t = 0..T-2."""
    G = spec.transition
    T = R.shape[0]
    Js = []
    for t in range(T - 1):
        cho = _chol(R[t + 1])
        Js.append(cho_solve(cho, G @ C[t]).T)
    return Js


def kalman_smoother(spec: StateSpaceSpec, Zs, ys, obs_var: float, offsets=None):
    """Fixed-interval smoother; returns (SmootherResult, FilterResult)."""
    fr = kalman_filter(spec, Zs, ys, obs_var, offsets)
    T = fr.filt_mean.shape[0]
    means = np.empty_like(fr.filt_mean)
    covs = np.empty_like(fr.filt_cov)
    means[-1] = fr.filt_mean[-1]
    covs[-1] = fr.filt_cov[-1]
    Js = _backward_gains(spec, fr.pred_cov, fr.filt_cov)
    for t in range(T - 2, -1, -1):
        J = Js[t]
        means[t] = fr.filt_mean[t] + J @ (means[t + 1] - fr.pred_mean[t + 1])
        covs[t] = _sym(
            fr.filt_cov[t] + J @ (covs[t + 1] - fr.pred_cov[t + 1]) @ J.T
        )
    return SmootherResult(means, covs), fr


def _batched_smoothed_means(spec, Zs, V, gains, Js):
    """Smoothed state means for a batch of zero-offset observation stacks.

    V is a per-time list of (m_t, n) innovation inputs (already y - offset
    form); returns (T, S, n) smoothed means. Linearity of the recursions in
    the data lets one covariance pass serve every column.
    """
    G = spec.transition
    T = len(Zs)
    S = spec.dim
    n = next(v.shape[1] for v in V if v is not None)
    a = np.zeros((T, S, n))
    m = np.zeros((T, S, n))
    for t in range(T):
        if t > 0:
            a[t] = G @ m[t - 1]
        Z = Zs[t]
        if Z is None or len(Z) == 0:
            m[t] = a[t]
            continue
        innov = V[t] - _obs_rows(Z, a[t])
        m[t] = a[t] + gains[t] @ innov
    out = np.empty((T, S, n))
    out[-1] = m[-1]
    for t in range(T - 2, -1, -1):
        out[t] = m[t] + Js[t] @ (out[t + 1] - a[t + 1])
    return out


def simulation_smoother(
    spec: StateSpaceSpec,
    Zs,
    ys,
    obs_var: float,
    rng: np.random.Generator,
    offsets=None,
    size: int = 1,
):
    """Joint posterior draws of the state path by mean correction.

    Synthetic state and observation paths are drawn from the model, and the
    smoothed mean of (y - y_synthetic) corrects them to exact conditional
    draws. Returns (size, T, S); gains are computed once and shared across
    the batch.
    """
    T = len(Zs)
    S = spec.dim
    R, C, gains, chos, ZRs = _cov_pass(spec, Zs, obs_var)
    Js = _backward_gains(spec, R, C)

    # synthetic paths from the unconditional model
    G = spec.transition
    states = np.empty((size, T, S))
    L1 = np.linalg.cholesky(spec.init_cov + _JITTER * np.eye(S))
    states[:, 0] = spec.init_mean + rng.standard_normal((size, S)) @ L1.T
    for t in range(1, T):
        states[:, t] = states[:, t - 1] @ G.T + spec.draw_innovation(rng, size)
    if not np.isfinite(states[:, -1]).all():
        raise FloatingPointError(
            "synthetic state path diverged; transition is explosive"
        )

    sd = np.sqrt(obs_var)
    V = []
    for t in range(T):
        Z = Zs[t]
        if Z is None or len(Z) == 0:
            V.append(None)
            continue
        y_syn = _obs_rows(Z, states[:, t].T) + sd * rng.standard_normal(
            (len(ys[t]), size)
        )
        actual = ys[t]
        if offsets is not None and offsets[t] is not None:
            actual = actual - offsets[t]
        V.append(actual[:, None] - y_syn)

    correction = _batched_smoothed_means(spec, Zs, V, gains, Js)
    return states + np.transpose(correction, (2, 0, 1))


def forecast(spec: StateSpaceSpec, last_mean, last_cov, horizon: int):
    """h-step state forecasts from the final filtered moments.

    Returns (means, covs) with shapes (horizon, S) and (horizon, S, S),
    iterating the prediction recursion.
    """
    G, W = spec.transition, spec.innovation_cov
    S = spec.dim
    means = np.empty((horizon, S))
    covs = np.empty((horizon, S, S))
    mu = np.asarray(last_mean, dtype=float)
    P = np.asarray(last_cov, dtype=float)
    for h in range(horizon):
        mu = G @ mu
        P = _sym(G @ P @ G.T + W)
        means[h] = mu
        covs[h] = P
    return means, covs
