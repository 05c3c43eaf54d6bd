import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from farcast.grid import EvaluationGrid, ObservationSet
from farcast.ssm import StateSpaceSpec, kalman_filter
from farcast import rivals as rv


RNG = lambda s: np.random.default_rng(s)


def dense_obs(rng, M=30, T=40, scale=0.05):
    grid = EvaluationGrid.regular(M)
    curves = scale * rng.standard_normal((T, M)).cumsum(axis=0)
    return ObservationSet.from_matrix(grid, curves), curves


# ---------------------------------------------------------------- completion


def test_complete_curves_passthrough_when_dense():
    obs, curves = dense_obs(RNG(0))
    assert np.array_equal(rv.complete_curves(obs), curves)


def test_complete_curves_hand_example():
    grid = EvaluationGrid.regular(5)
    obs = ObservationSet(grid, [grid.points[[1, 3]]], [np.array([1.0, 3.0])])
    filled = rv.complete_curves(obs)[0]
    # interior linear, edges copy the nearest observed value
    assert np.allclose(filled, [1.0, 1.0, 2.0, 3.0, 3.0])


def test_complete_curves_rejects_empty_row():
    grid = EvaluationGrid.regular(5)
    obs = ObservationSet(grid, [np.array([])], [np.array([])])
    with pytest.raises(ValueError):
        rv.complete_curves(obs)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_complete_curves_interpolates_observed_values_exactly(seed):
    rng = RNG(seed)
    grid = EvaluationGrid.regular(12)
    idx = np.sort(rng.choice(12, size=rng.integers(1, 6), replace=False))
    vals = rng.standard_normal(idx.size)
    obs = ObservationSet(grid, [grid.points[idx]], [vals])
    filled = rv.complete_curves(obs)[0]
    assert np.allclose(filled[idx], vals, atol=1e-12)
    assert filled.min() >= vals.min() - 1e-12 and filled.max() <= vals.max() + 1e-12


def test_smoothing_basis_caps_knots_for_small_grids():
    assert rv.smoothing_basis(np.linspace(0, 1, 30), 0.0, 1.0).dim == 12
    assert rv.smoothing_basis(np.linspace(0, 1, 11), 0.0, 1.0).dim == 10
    assert rv.smoothing_basis(np.linspace(0, 1, 8), 0.0, 1.0).dim == 7


def test_presmooth_is_identity_on_spline_span():
    rng = RNG(1)
    grid = EvaluationGrid.regular(30)
    basis = rv.smoothing_basis(grid.points, 0.0, 1.0)
    curves = (basis.design(grid.points) @ rng.standard_normal((basis.dim, 6))).T
    assert np.allclose(rv.presmooth_curves(curves, grid), curves, atol=1e-9)


# ------------------------------------------------------------- decomposition


def test_fpc_components_are_quadrature_orthonormal():
    rng = RNG(2)
    grid = EvaluationGrid.regular(25)
    curves = rng.standard_normal((60, 25)).cumsum(axis=1) * 0.1
    fpc = rv.fpc_decompose(curves, grid)
    gram = fpc.components.T @ (grid.weights[:, None] * fpc.components)
    assert np.abs(gram - np.eye(fpc.n_components)).max() < 1e-8
    assert np.all(np.diff(fpc.variances) <= 1e-12)


def test_fpc_variance_share_reaches_threshold():
    rng = RNG(3)
    grid = EvaluationGrid.regular(20)
    curves = rng.standard_normal((80, 20))
    for threshold in (0.5, 0.8, 0.95):
        fpc = rv.fpc_decompose(curves, grid, threshold)
        assert fpc.variances.sum() / fpc.total_variance >= threshold - 1e-10


def test_fpc_degenerate_sample_keeps_nothing():
    grid = EvaluationGrid.regular(10)
    curves = np.tile(np.sin(grid.points), (12, 1))
    fpc = rv.fpc_decompose(curves, grid)
    assert fpc.n_components == 0 and fpc.total_variance == 0.0


def test_fpc_scores_rebuild_a_low_rank_sample():
    rng = RNG(4)
    grid = EvaluationGrid.regular(18)
    f = np.column_stack([np.sin(np.pi * grid.points), grid.points ** 2])
    scores = rng.standard_normal((50, 2)) * np.array([2.0, 0.7])
    curves = scores @ f.T + 0.3
    fpc = rv.fpc_decompose(curves, grid, threshold=1.0)
    rebuilt = fpc.mean + fpc.scores @ fpc.components.T
    assert np.abs(rebuilt - curves).max() < 1e-8


# ------------------------------------------------------- baseline forecasters


def test_random_walk_copies_last_curve():
    obs, curves = dense_obs(RNG(5))
    fc = rv.RandomWalkForecaster().fit(obs)
    assert np.array_equal(fc.predict(1), curves[-1])
    assert np.array_equal(fc.predict(7), curves[-1])


def test_constant_history_gives_constant_forecasts():
    grid = EvaluationGrid.regular(15)
    row = np.cos(grid.points)
    obs = ObservationSet.from_matrix(grid, np.tile(row, (10, 1)))
    assert np.allclose(rv.RandomWalkForecaster().fit(obs).predict(1), row)
    assert np.allclose(rv.PooledMeanForecaster().fit(obs).predict(1), row, atol=1e-8)
    assert np.allclose(rv.PointwiseSesForecaster().fit(obs).predict(1), row)


def test_empty_history_is_rejected():
    grid = EvaluationGrid.regular(5)
    empty = ObservationSet(grid, [], [])
    with pytest.raises(ValueError):
        rv.RandomWalkForecaster().fit(empty)
    with pytest.raises(ValueError):
        rv.PooledMeanForecaster().fit(empty)


def test_pooled_mean_tracks_truth_within_monte_carlo_envelope():
    rng = RNG(19)
    T, sigma = 200, 0.2
    grid = EvaluationGrid.regular(30)
    truth = 0.3 * np.sin(2 * np.pi * grid.points)
    curves = truth + sigma * rng.standard_normal((T, 30))
    fit = rv.PooledMeanForecaster().fit(ObservationSet.from_matrix(grid, curves))
    assert np.abs(fit.predict(1) - truth).max() < 3.0 * sigma / np.sqrt(T)


def test_ses_constant_series_reduces_to_random_walk():
    grid = EvaluationGrid.regular(4)
    rng = RNG(6)
    curves = rng.standard_normal((8, 4))
    curves[:, 2] = 1.25  # one degenerate component
    fit = rv.PointwiseSesForecaster().fit(ObservationSet.from_matrix(grid, curves))
    assert fit.alphas_[2] == 1.0
    assert fit.predict(1)[2] == 1.25


def test_ses_beats_random_walk_on_smooth_autoregression():
    rng = RNG(3)
    T = 2000
    y = np.zeros((T, 2))
    for t in range(1, T):
        y[t] = 0.9 * y[t - 1] + rng.standard_normal(2)
    fit = rv.PointwiseSesForecaster().fit(ObservationSet.from_matrix(EvaluationGrid.regular(2), y))
    rw_sse = ((y[1:] - y[:-1]) ** 2).sum(axis=0)
    assert np.all(fit.alphas_ > 0.0) and np.all(fit.alphas_ < 1.0)
    assert np.all(fit.fit_sse_ <= rw_sse)


def test_ses_forecast_is_flat_across_horizons():
    obs, _ = dense_obs(RNG(7), M=6, T=20)
    fit = rv.PointwiseSesForecaster().fit(obs)
    assert np.array_equal(fit.predict(1), fit.predict(9))


# ----------------------------------------------------------------- curve VAR


def test_var_recovers_known_coefficient():
    rng = RNG(11)
    A = np.array([[0.5, 0.2, 0.0], [0.0, 0.4, 0.1], [0.1, 0.0, 0.3]])
    T = 4000
    x = np.zeros(3)
    X = np.empty((T, 3))
    for t in range(T):
        x = A @ x + 0.5 * rng.standard_normal(3)
        X[t] = x
    fit = rv.CurveVarForecaster().fit(ObservationSet.from_matrix(EvaluationGrid.regular(3), X))
    assert np.abs(fit.coefficient - A).max() < 0.05
    assert fit.metadata == {"ridge": False}


def test_var_zero_variance_series_forecasts_the_constant():
    grid = EvaluationGrid.regular(6)
    row = np.linspace(-1.0, 2.0, 6)
    obs = ObservationSet.from_matrix(grid, np.tile(row, (12, 1)))
    fit = rv.CurveVarForecaster().fit(obs)
    assert fit.metadata["ridge"]  # rank-deficient lag regression
    assert np.allclose(fit.predict(1), row, atol=1e-10)
    assert np.allclose(fit.predict(5), row, atol=1e-10)


def test_var_scalar_case_reduces_to_ols_autoregression():
    rng = RNG(8)
    T = 60
    y = np.empty(T)
    y[0] = 0.0
    for t in range(1, T):
        y[t] = 0.3 + 0.6 * y[t - 1] + 0.2 * rng.standard_normal()
    grid = EvaluationGrid.regular(2)
    obs = ObservationSet(grid, [grid.points[[0]]] * T, [np.array([v]) for v in y])
    fit = rv.CurveVarForecaster().fit(obs)
    Z = np.column_stack([np.ones(T - 1), y[:-1]])
    intercept, slope = np.linalg.lstsq(Z, y[1:], rcond=None)[0]
    assert abs(fit.coefficient[0, 0] - slope) < 1e-10
    assert abs(fit.intercept[0] - intercept) < 1e-10


def test_var_ridge_fallback_when_history_is_too_short():
    rng = RNG(9)
    obs, _ = dense_obs(rng, M=12, T=6)
    fit = rv.CurveVarForecaster().fit(obs)
    assert fit.metadata["ridge"]
    assert fit.predict(1).shape == (12,)


def test_var_fixed_sparse_design_maps_through_spline():
    rng = RNG(10)
    grid = EvaluationGrid.regular(30)
    idx = np.unique(np.round(np.linspace(0, 29, 8)).astype(int))
    curves = 0.1 * rng.standard_normal((40, 30)).cumsum(axis=0)
    obs = ObservationSet(grid, [grid.points[idx]] * 40, [c[idx] for c in curves])
    fit = rv.CurveVarForecaster().fit(obs)
    assert fit.coefficient.shape == (8, 8)
    forecast = fit.predict(1)
    assert forecast.shape == (30,) and np.all(np.isfinite(forecast))


# ------------------------------------------------------------ kernel and FPC


def _span_two_far_sample(rng, T=2000):
    grid = EvaluationGrid.regular(30)
    w = grid.weights
    basis = rv.smoothing_basis(grid.points, 0.0, 1.0)
    B = basis.design(grid.points)
    f1 = B @ rng.standard_normal(B.shape[1])
    f2 = B @ rng.standard_normal(B.shape[1])
    v1 = f1 / np.sqrt(f1 @ (w * f1))
    f2p = f2 - (f2 @ (w * v1)) * v1
    v2 = f2p / np.sqrt(f2p @ (w * f2p))
    V = np.column_stack([v1, v2])
    G = np.array([[0.45, 0.15], [-0.10, 0.30]])
    scores = np.empty((T, 2))
    s = np.zeros(2)
    for t in range(T):
        s = G @ s + np.array([0.6, 0.3]) * rng.standard_normal(2)
        scores[t] = s
    return grid, V, G, scores @ V.T


def test_estimated_kernel_recovers_a_kernel_in_component_span():
    grid, V, G, curves = _span_two_far_sample(RNG(7))
    fit = rv.EstimatedKernelForecaster().fit(ObservationSet.from_matrix(grid, curves))
    w = grid.weights
    truth = V @ G @ V.T
    rel = (w @ ((fit.kernel - truth) ** 2) @ w) / (w @ (truth ** 2) @ w)
    assert fit.fpc.n_components == 2
    assert rel < 0.05


def test_score_var_with_kernel_score_map_reproduces_kernel_forecast():
    grid, _, _, curves = _span_two_far_sample(RNG(12), T=300)
    obs = ObservationSet.from_matrix(grid, curves)
    ek = rv.EstimatedKernelForecaster().fit(obs)
    sv = rv.ScoreVarForecaster().fit(obs)
    sv.coefficient = ek.score_map
    assert np.abs(sv.predict(1) - ek.predict(1)).max() < 1e-10


def test_estimated_kernel_norm_sits_inside_permutation_null_band():
    rng = RNG(23)
    grid = EvaluationGrid.regular(30)
    w = grid.weights
    d = np.abs(grid.points[:, None] - grid.points[None, :])
    root = np.linalg.cholesky(np.exp(-d / 0.3) + 1e-10 * np.eye(30))
    noise = rng.standard_normal((400, 30)) @ root.T

    def kernel_norm(sample):
        fit = rv.EstimatedKernelForecaster().fit(ObservationSet.from_matrix(grid, sample))
        return w @ (fit.kernel ** 2) @ w

    null_norm = kernel_norm(noise)
    perms = np.array([kernel_norm(noise[rng.permutation(400)]) for _ in range(30)])
    assert null_norm <= np.quantile(perms, 0.95)
    # and serial dependence pushes the norm far outside the same band
    far = np.empty_like(noise)
    x = np.zeros(30)
    for t in range(400):
        x = 0.8 * x + 0.3 * noise[t]
        far[t] = x
    far_perms = np.array([kernel_norm(far[rng.permutation(400)]) for _ in range(30)])
    assert kernel_norm(far) > np.quantile(far_perms, 0.95)


def test_estimated_kernel_degenerate_sample_forecasts_the_mean():
    grid = EvaluationGrid.regular(12)
    row = np.exp(grid.points)
    obs = ObservationSet.from_matrix(grid, np.tile(row, (9, 1)))
    fit = rv.EstimatedKernelForecaster().fit(obs)
    assert np.all(fit.kernel == 0.0)
    assert np.allclose(fit.predict(1), row, atol=1e-8)


def test_estimated_kernel_is_one_step_only():
    obs, _ = dense_obs(RNG(13))
    fit = rv.EstimatedKernelForecaster().fit(obs)
    with pytest.raises(ValueError):
        fit.predict(2)


def test_score_var_single_component_is_scalar_autoregression():
    rng = RNG(14)
    grid = EvaluationGrid.regular(20)
    shape = np.sin(np.pi * grid.points)
    shape = shape / np.sqrt(shape @ (grid.weights * shape))
    s = np.zeros(80)
    for t in range(1, 80):
        s[t] = 0.7 * s[t - 1] + rng.standard_normal()
    curves = np.outer(s, shape)
    fit = rv.ScoreVarForecaster().fit(ObservationSet.from_matrix(grid, curves))
    assert fit.fpc.n_components == 1
    sc = fit.fpc.scores[:, 0]
    assert abs(fit.coefficient[0, 0] - (sc[:-1] @ sc[1:]) / (sc[:-1] @ sc[:-1])) < 1e-10


def test_score_var_reconstruction_is_the_truncated_projection():
    rng = RNG(15)
    obs, _ = dense_obs(rng, M=24, T=50)
    fit = rv.ScoreVarForecaster().fit(obs)
    fpc = fit.fpc
    smooth = rv.presmooth_curves(rv.complete_curves(obs), obs.grid)
    t = 17
    projection = fpc.mean + fpc.components @ (fpc.components.T @ (obs.grid.weights * (smooth[t] - fpc.mean)))
    assert np.allclose(fpc.mean + fpc.components @ fpc.scores[t], projection, atol=1e-10)


# ------------------------------------------------------------- factor models


def test_factor_loadings_frozen_values():
    F = rv.nelson_siegel_design(np.array([1.0]), 0.0609)
    # direct evaluation of (1 - exp(-0.0609)) / 0.0609 and its curvature twin
    assert abs(F[0, 1] - 0.9701588373684673) < 1e-12
    assert abs(F[0, 2] - 0.029241510564206985) < 1e-12
    assert F[0, 0] == 1.0


def test_factor_slope_loading_limit_at_zero():
    F = rv.nelson_siegel_design(np.array([0.0]), 0.0609)
    assert np.allclose(F[0], [1.0, 1.0, 0.0])
    tiny = rv.nelson_siegel_design(np.array([1e-10]), 0.0609)
    assert abs(tiny[0, 1] - 1.0) < 1e-9


def test_factor_design_rejects_collinear_maturities():
    with pytest.raises(ValueError):
        rv.nelson_siegel_design(np.array([0.0, 1e-12, 3.0]), 0.0609)
    with pytest.raises(ValueError):
        rv.nelson_siegel_design(np.array([1.0, 2.0, 3.0]), -0.1)


def _factor_var_sample(rng, T=500, noise=5e-4):
    mats = np.array([3.0, 12.0, 36.0, 84.0, 240.0])
    grid = EvaluationGrid(mats)
    decay = 0.08
    A = np.diag([0.85, 0.6, 0.5])
    mu = np.array([0.06, -0.02, 0.015])
    q = np.array([0.02, 0.02, 0.02])
    F = rv.nelson_siegel_design(mats, decay)
    rows = np.empty((T, mats.size))
    b = mu.copy()
    for t in range(T):
        b = mu + A @ (b - mu) + q * rng.standard_normal(3)
        rows[t] = F @ b + noise * rng.standard_normal(mats.size)
    truth = {"decay": decay, "transition": A, "state_mean": mu, "state_var": q ** 2}
    return ObservationSet.from_matrix(grid, rows), rows, F, truth


def test_two_step_exact_on_noiseless_constant_factors():
    mats = np.array([3.0, 12.0, 24.0, 60.0, 120.0])
    grid = EvaluationGrid(mats)
    F = rv.nelson_siegel_design(mats, 0.0609)
    beta = np.array([0.05, -0.02, 0.01])
    obs = ObservationSet.from_matrix(grid, np.tile(F @ beta, (30, 1)))
    fit = rv.NelsonSiegelTwoStepForecaster().fit(obs)
    assert np.abs(fit.predict(1) - F @ beta).max() < 1e-12
    assert np.abs(fit.predict(6) - F @ beta).max() < 1e-12


def test_two_step_factor_path_matches_per_time_least_squares():
    obs, rows, F, _ = _factor_var_sample(RNG(16), T=40)
    fit = rv.NelsonSiegelTwoStepForecaster(decay=0.08).fit(obs)
    oracle = np.array([np.linalg.lstsq(F, row, rcond=None)[0] for row in rows])
    assert np.abs(fit.factors_ - oracle).max() < 1e-10


def test_two_step_diagonal_option_zeroes_the_cross_terms():
    obs, _, _, _ = _factor_var_sample(RNG(17), T=60)
    fit = rv.NelsonSiegelTwoStepForecaster(diagonal=True).fit(obs)
    off = fit.coefficient[~np.eye(3, dtype=bool)]
    assert np.all(off == 0.0)
    assert np.all(np.diag(fit.coefficient) != 0.0)


def test_two_step_input_validation():
    obs, _, _, _ = _factor_var_sample(RNG(18), T=5)
    with pytest.raises(ValueError):
        rv.NelsonSiegelTwoStepForecaster().fit(obs)


def test_state_space_loglik_matches_generic_kalman_filter():
    obs, rows, _, _ = _factor_var_sample(RNG(20), T=80)
    mats = obs.grid.points
    params = rv.NsStateSpaceParams(
        decay=0.07,
        transition=0.9 * np.eye(3) + 0.02,
        state_mean=np.array([0.06, -0.02, 0.015]),
        state_var=np.array([5e-4, 5e-4, 5e-4]),
        obs_var=np.full(mats.size, 2e-7),
    )
    F = rv.nelson_siegel_design(mats, params.decay)
    scale = np.sqrt(params.obs_var)
    spec = StateSpaceSpec(
        params.transition,
        np.diag(params.state_var),
        np.zeros(3),
        rv._stationary_cov(params.transition, params.state_var),
    )
    Zs = [F / scale[:, None]] * obs.n_times
    ys = [row / scale for row in rows]
    offsets = [(F @ params.state_mean) / scale] * obs.n_times
    ref = kalman_filter(spec, Zs, ys, 1.0, offsets)
    ref_loglik = ref.loglik - 0.5 * obs.n_times * float(np.log(params.obs_var).sum())
    means, loglik = rv._ns_filter(params, obs)
    assert abs(loglik - ref_loglik) < 1e-6
    assert np.abs(means - ref.filt_mean).max() < 1e-10


def test_filtered_factors_collapse_to_least_squares_without_noise():
    obs, rows, F, truth = _factor_var_sample(RNG(5), T=120)
    params = rv.NsStateSpaceParams(
        truth["decay"], truth["transition"], truth["state_mean"],
        truth["state_var"], np.full(obs.grid.size, 1e-16),
    )
    filtered = rv.ns_filtered_factors(params, obs)
    oracle = np.array([np.linalg.lstsq(F, row, rcond=None)[0] for row in rows])
    assert np.abs(filtered - oracle).max() < 1e-4


def test_state_space_fit_recovers_decay_and_dominates_two_step():
    obs, _, _, truth = _factor_var_sample(RNG(5))
    fit = rv.NelsonSiegelStateSpaceForecaster(n_restarts=1, max_iter=150).fit(obs)
    assert not fit.metadata["unstable"]
    assert abs(fit.params.decay - truth["decay"]) / truth["decay"] < 0.10
    assert fit.loglik_ >= rv.ns_loglik(fit.start_params, obs) - 1e-6
    assert fit.predict(1).shape == (obs.grid.size,)
    # warm restart keeps the optimum and stays cheap
    first = fit.params.decay
    fit.fit(obs)
    assert abs(fit.params.decay - first) < 5e-3
    assert not fit.metadata["unstable"]


# ------------------------------------------------------------------ registry


def test_registry_round_trip_and_unknown_name():
    assert isinstance(rv.make_forecaster("rw"), rv.RandomWalkForecaster)
    assert isinstance(rv.make_forecaster("ns-mle", n_restarts=2), rv.NelsonSiegelStateSpaceForecaster)
    with pytest.raises(ValueError):
        rv.make_forecaster("nope")


def test_all_forecasts_are_linear_in_the_data():
    rng = RNG(31)
    grid = EvaluationGrid.regular(30)
    base = 0.05 * rng.standard_normal((40, 30)).cumsum(axis=0)
    alpha = 2.5
    for name in ["rw", "mean", "ses", "var", "kernel", "score-var"]:
        one = rv.make_forecaster(name).fit(ObservationSet.from_matrix(grid, base)).predict(1)
        scaled = rv.make_forecaster(name).fit(ObservationSet.from_matrix(grid, alpha * base)).predict(1)
        assert np.abs(scaled - alpha * one).max() < 1e-8 * max(1.0, np.abs(one).max()), name
    mats = EvaluationGrid(np.array([3.0, 12.0, 36.0, 84.0, 240.0]))
    rows = 0.01 * rng.standard_normal((40, 5)).cumsum(axis=0)
    one = rv.NelsonSiegelTwoStepForecaster().fit(ObservationSet.from_matrix(mats, rows)).predict(1)
    scaled = rv.NelsonSiegelTwoStepForecaster().fit(ObservationSet.from_matrix(mats, alpha * rows)).predict(1)
    assert np.abs(scaled - alpha * one).max() < 1e-8
