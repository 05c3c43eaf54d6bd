"""Synthetic functional autoregression scenarios and quadrature diagnostics.

Data are generated on a fine grid so the integral operator is resolved well
beyond the evaluation resolution: innovations are drawn jointly on the union
of the fine and evaluation points, the recursion always integrates against
the fine quadrature, and observations subsample the evaluation grid under a
dense or sparse design. The quadrature error study measures how coarse
evaluation grids degrade the lag integral for Gaussian-process inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from .far import matern_correlation
from .grid import EvaluationGrid, ObservationSet, trapezoid_weights
from .ssm import _chol

__all__ = [
    "KernelSpec",
    "DesignSpec",
    "ScenarioSpec",
    "SimulatedScenario",
    "mean_function",
    "eval_kernel",
    "kernel_matrix",
    "zero_truncated_poisson",
    "simulate_scenario",
    "quad_error_study",
]

_FAMILIES = ("bimodal", "linear_tau", "linear_u", "zero")

# two-bump surface: weights, (tau, u) centers, shared per-axis widths
_BG_WEIGHTS = (0.75, 0.45)
_BG_CENTERS = ((0.2, 0.3), (0.7, 0.8))
_BG_WIDTHS = (0.3, 0.4)


def mean_function(tau):
    """Common mean tau^3 sin(2 pi tau) / 10 on the unit interval."""
    tau = np.asarray(tau, dtype=float)
    return tau**3 * np.sin(2.0 * np.pi * tau) / 10.0


def _bimodal_raw(tau, u):
    c = 1.0 / (np.pi * _BG_WIDTHS[0] * _BG_WIDTHS[1])
    st, su = _BG_WIDTHS
    out = 0.0
    for w, (ct, cu) in zip(_BG_WEIGHTS, _BG_CENTERS):
        out = out + w * c * np.exp(-(((tau - ct) / st) ** 2) - ((u - cu) / su) ** 2)
    return out


def _gauss_product_integral(c1: float, c2: float, s: float) -> float:
    # int_0^1 exp(-[(x-c1)^2 + (x-c2)^2]/s^2) dx in closed form
    a = 2.0 / s**2
    m = 0.5 * (c1 + c2)
    amp = np.exp(-((c1 - c2) ** 2) / (2.0 * s**2))
    width = 0.5 * np.sqrt(np.pi / a)
    return float(amp * width * (erf(np.sqrt(a) * (1.0 - m)) + erf(np.sqrt(a) * m)))


def _raw_squared_norm(family: str) -> float:
    """Exact unit-square integral of the unnormalized kernel squared."""
    if family == "zero":
        return 0.0
    if family in ("linear_tau", "linear_u"):
        return 1.0 / 3.0
    c = 1.0 / (np.pi * _BG_WIDTHS[0] * _BG_WIDTHS[1])
    st, su = _BG_WIDTHS
    total = 0.0
    for wk, (ckt, cku) in zip(_BG_WEIGHTS, _BG_CENTERS):
        for wj, (cjt, cju) in zip(_BG_WEIGHTS, _BG_CENTERS):
            total += (
                wk
                * wj
                * c**2
                * _gauss_product_integral(ckt, cjt, st)
                * _gauss_product_integral(cku, cju, su)
            )
    return total


@dataclass(frozen=True)
class KernelSpec:
    """One autoregression kernel family with its target squared norm."""

    family: str
    c_norm: float = 0.8

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}")
        if self.family == "zero":
            if self.c_norm != 0.0:
                object.__setattr__(self, "c_norm", 0.0)
        elif self.c_norm <= 0.0:
            raise ValueError("c_norm must be positive")

    @property
    def scale(self) -> float:
        if self.family == "zero":
            return 0.0
        return float(np.sqrt(self.c_norm / _raw_squared_norm(self.family)))


def eval_kernel(spec: KernelSpec, tau, u):
    """Normalized kernel surface; tau and u broadcast against each other."""
    tau = np.asarray(tau, dtype=float)
    u = np.asarray(u, dtype=float)
    if spec.family == "zero":
        return np.zeros(np.broadcast(tau, u).shape)
    if spec.family == "linear_tau":
        raw = tau * np.ones_like(u)
    elif spec.family == "linear_u":
        raw = u * np.ones_like(tau)
    else:
        raw = _bimodal_raw(tau, u)
    return spec.scale * raw


def kernel_matrix(spec: KernelSpec, rows, cols) -> np.ndarray:
    """Kernel evaluated on the product of two point sets."""
    rows = np.atleast_1d(np.asarray(rows, dtype=float))
    cols = np.atleast_1d(np.asarray(cols, dtype=float))
    return eval_kernel(spec, rows[:, None], cols[None, :])


@dataclass(frozen=True)
class DesignSpec:
    """Observation design on the evaluation grid."""

    kind: str  # dense | sparse_random | sparse_fixed
    dense_size: int = 25
    fixed_size: int = 8
    rate: float = 5.0

    def __post_init__(self):
        if self.kind not in ("dense", "sparse_random", "sparse_fixed"):
            raise ValueError(f"unknown design kind {self.kind!r}")

    def fixed_indices(self, grid_size: int) -> np.ndarray:
        m = self.dense_size if self.kind == "dense" else self.fixed_size
        return np.unique(np.round(np.linspace(0, grid_size - 1, m)).astype(int))

    def indices_for(self, grid_size: int, n_times: int, rng) -> list:
        if self.kind in ("dense", "sparse_fixed"):
            fixed = self.fixed_indices(grid_size)
            return [fixed.copy() for _ in range(n_times)]
        out = []
        for _ in range(n_times):
            m = min(zero_truncated_poisson(self.rate, rng), grid_size)
            out.append(np.sort(rng.choice(grid_size, size=m, replace=False)))
        return out


def zero_truncated_poisson(rate: float, rng: np.random.Generator) -> int:
    """Poisson(rate) conditioned on being positive."""
    if rate <= 0.0:
        raise ValueError("rate must be positive")
    while True:
        m = int(rng.poisson(rate))
        if m > 0:
            return m


@dataclass
class ScenarioSpec:
    """Everything that defines one synthetic experiment."""

    n_times: int
    kernels: list = field(default_factory=lambda: [KernelSpec("bimodal", 0.8)])
    smoothness: float = 2.5
    corr_scale: float = 0.1
    innovation_sd: float = 0.01
    obs_sd: float = 0.002
    design: DesignSpec = field(default_factory=lambda: DesignSpec("dense"))
    eval_size: int = 30
    fine_size: int = 200
    burn_in: int = 100
    n_future: int = 25

    def __post_init__(self):
        if self.n_times < len(self.kernels) + 2:
            raise ValueError("n_times too small for the lag order")
        if self.innovation_sd <= 0.0 or self.obs_sd < 0.0:
            raise ValueError("bad noise levels")
        if self.eval_size < 2 or self.fine_size < 2:
            raise ValueError("grids need at least two points")


@dataclass
class SimulatedScenario:
    """One generated dataset with its latent truth and oracle forecasts."""

    spec: ScenarioSpec
    eval_grid: EvaluationGrid
    fine_points: np.ndarray
    latent_fine: np.ndarray  # (T + F, fine) deviations from the mean
    latent_eval: np.ndarray  # (T + F, M)
    truth_eval: np.ndarray  # mean + latent on the evaluation grid
    obs: ObservationSet  # covers all T + F times
    oracle: np.ndarray  # (F, M) one-step conditional means at T..T+F-1

    def training_obs(self) -> ObservationSet:
        T = self.spec.n_times
        return ObservationSet(
            self.eval_grid, self.obs.points[:T], self.obs.values[:T]
        )


def simulate_scenario(spec: ScenarioSpec, rng: np.random.Generator) -> SimulatedScenario:
    """Generate one scenario.

    The lag integral is always taken against the fine-grid quadrature; the
    evaluation grid sees the same innovation process through a joint draw on
    the union of both point sets. The first `burn_in` steps are discarded.
    """
    p = len(spec.kernels)
    fine = np.linspace(0.0, 1.0, spec.fine_size)
    eval_pts = np.linspace(0.0, 1.0, spec.eval_size)
    union = np.union1d(fine, eval_pts)
    fine_idx = np.searchsorted(union, fine)
    eval_idx = np.searchsorted(union, eval_pts)
    w_fine = trapezoid_weights(fine)

    corr = matern_correlation(
        np.abs(union[:, None] - union[None, :]), spec.smoothness, spec.corr_scale
    )
    root = spec.innovation_sd * np.tril(_chol(corr)[0])

    ops = [
        kernel_matrix(k, union, fine) * w_fine[None, :] for k in spec.kernels
    ]

    total = spec.burn_in + spec.n_times + spec.n_future
    path = np.zeros((total, union.size))
    for t in range(total):
        eps = root @ rng.standard_normal(union.size)
        cur = eps
        for l in range(p):
            if t - l - 1 >= 0:
                cur = cur + ops[l] @ path[t - l - 1, fine_idx]
        path[t] = cur
    path = path[spec.burn_in :]

    latent_fine = path[:, fine_idx]
    latent_eval = path[:, eval_idx]
    grid = EvaluationGrid(eval_pts)
    mean_eval = mean_function(eval_pts)
    truth_eval = mean_eval[None, :] + latent_eval

    n_all = spec.n_times + spec.n_future
    idx_lists = spec.design.indices_for(spec.eval_size, n_all, rng)
    pts, vals = [], []
    for t in range(n_all):
        ix = idx_lists[t]
        noise = spec.obs_sd * rng.standard_normal(ix.size)
        pts.append(eval_pts[ix])
        vals.append(truth_eval[t, ix] + noise)
    obs = ObservationSet(grid, pts, vals)

    eval_ops = [op[eval_idx] for op in ops]
    oracle = np.empty((spec.n_future, spec.eval_size))
    for j in range(spec.n_future):
        t = spec.n_times + j
        pred = mean_eval.copy()
        for l in range(p):
            pred = pred + eval_ops[l] @ latent_fine[t - l - 1]
        oracle[j] = pred

    return SimulatedScenario(
        spec=spec,
        eval_grid=grid,
        fine_points=fine,
        latent_fine=latent_fine,
        latent_eval=latent_eval,
        truth_eval=truth_eval,
        obs=obs,
        oracle=oracle,
    )


def quad_error_study(
    kernel: KernelSpec,
    smoothness: float,
    m_list,
    n_reps: int,
    rng: np.random.Generator,
    corr_scale: float = 0.1,
    innovation_sd: float = 0.01,
    fine_size: int = 200,
):
    """Quadrature error of the lag integral on coarse grids.

    For each Gaussian-process draw of the integrand the lag integral is
    computed with every grid in `m_list` and compared against the fine-grid
    reference I_ref(tau) on a common fine tau-grid: the first functional
    integrates the pointwise absolute relative error, the second integrates
    the squared error scaled by the innovation variance. Returns
    (rel_medians, scaled_medians) aligned with m_list.
    """
    m_list = [int(m) for m in m_list]
    if any(m < 2 for m in m_list):
        raise ValueError("every grid size must be at least 2")
    fine = np.linspace(0.0, 1.0, fine_size)
    grids = [np.linspace(0.0, 1.0, m) for m in m_list]
    union = fine
    for g in grids:
        union = np.union1d(union, g)

    corr = matern_correlation(
        np.abs(union[:, None] - union[None, :]), smoothness, corr_scale
    )
    root = innovation_sd * np.tril(_chol(corr)[0])

    w_tau = trapezoid_weights(fine)

    def quad_operator(grid_pts):
        return kernel_matrix(kernel, fine, grid_pts) * trapezoid_weights(grid_pts)[None, :]

    ops = [quad_operator(g) for g in grids]
    ref_op = quad_operator(fine)
    idx = [np.searchsorted(union, g) for g in grids]
    fine_idx = np.searchsorted(union, fine)

    rel = np.empty((n_reps, len(m_list)))
    scaled = np.empty((n_reps, len(m_list)))
    for r in range(n_reps):
        mu = root @ rng.standard_normal(union.size)
        ref = ref_op @ mu[fine_idx]
        for j in range(len(grids)):
            got = ops[j] @ mu[idx[j]]
            err = ref - got
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = np.where(err == 0.0, 0.0, np.abs(err / ref))
            rel[r, j] = float(w_tau @ ratio)
            scaled[r, j] = float(w_tau @ (err**2)) / innovation_sd**2
    return np.median(rel, axis=0), np.median(scaled, axis=0)
