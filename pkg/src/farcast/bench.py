"""Forecast metrics, credible bands, chain diagnostics and study runners.

The rolling studies treat every (method, origin) cell independently: rival
forecasters are refitted on all data available before the target, the
hierarchical model is fitted once per window and only its latent states are
updated through the forecast period.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .far import FarConfig, FarModel, GibbsDraws, filter_forecasts, lag_order_counts, run_gibbs
from .grid import ObservationSet
from .rivals import make_forecaster
from .simlab import SimulatedScenario, kernel_matrix

__all__ = [
    "ForecastRecord",
    "msfe",
    "rmsfe",
    "surface_mse",
    "CredibleBands",
    "credible_bands",
    "effective_sample_size",
    "subset_observations",
    "rolling_curve_forecasts",
    "far_rolling_forecasts",
    "StudyRow",
    "run_scenario_study",
    "yield_windows",
    "window_targets",
    "run_yield_study",
]


@dataclass
class ForecastRecord:
    """One forecast cell: what was predicted and what came true."""

    method: str
    origin: int
    horizon: int
    forecast: np.ndarray
    truth: np.ndarray
    draws: np.ndarray | None = None

    def __post_init__(self):
        self.forecast = np.asarray(self.forecast, dtype=float)
        self.truth = np.asarray(self.truth, dtype=float)
        if self.forecast.shape != self.truth.shape:
            raise ValueError("forecast and truth must align")
        if self.horizon < 1:
            raise ValueError("horizon must be positive")


def _common_horizon(records) -> int:
    if not records:
        raise ValueError("no records")
    hs = {r.horizon for r in records}
    if len(hs) != 1:
        raise ValueError("records mix horizons")
    return hs.pop()


def msfe(records) -> float:
    """Mean squared forecast error per grid cell, averaged over records.

    All records must share the horizon and the grid length; the result is
    sum_h ||truth_h - forecast_h||^2 / (n_records * n_points).
    """
    _common_horizon(records)
    sizes = {r.forecast.size for r in records}
    if len(sizes) != 1:
        raise ValueError("records mix grid sizes")
    errs = np.stack([r.forecast - r.truth for r in records])
    return float(np.mean(errs * errs))


def rmsfe(records) -> float:
    """Root mean squared error pooled over all (time, point) cells.

    Records may have ragged lengths (the observed maturities vary by day).
    """
    _common_horizon(records)
    cells = np.concatenate([(r.forecast - r.truth) ** 2 for r in records])
    return float(np.sqrt(cells.mean()))


def surface_mse(estimate: np.ndarray, truth: np.ndarray) -> float:
    """Mean squared difference of two surfaces sampled on the same grid."""
    estimate = np.asarray(estimate, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if estimate.shape != truth.shape:
        raise ValueError("surfaces must share the grid")
    d = estimate - truth
    return float(np.mean(d * d))


@dataclass
class CredibleBands:
    """Pointwise and simultaneous bands of a draw matrix."""

    mean: np.ndarray
    pointwise_lower: np.ndarray
    pointwise_upper: np.ndarray
    simultaneous_lower: np.ndarray
    simultaneous_upper: np.ndarray
    level: float


def credible_bands(draws: np.ndarray, level: float = 0.95) -> CredibleBands:
    """Pointwise quantile bands plus a max-standardized simultaneous band.

    The simultaneous band is mean +- m*sd where m is the `level` quantile
    over draws of the maximum standardized absolute deviation across the
    grid, so it contains the pointwise band everywhere.

    Parameters
    ----------
    draws : ndarray of shape (n_draws, n_points)
        Posterior or predictive draws; at least 1,000 rows.
    level : float
        Band probability, in (0, 1).
    """
    draws = np.atleast_2d(np.asarray(draws, dtype=float))
    if draws.shape[0] < 1000:
        raise ValueError("need at least 1000 draws")
    if not 0.0 < level < 1.0:
        raise ValueError("level must be in (0, 1)")
    mean = draws.mean(axis=0)
    sd = draws.std(axis=0)
    tail = 0.5 * (1.0 - level)
    lo = np.quantile(draws, tail, axis=0)
    hi = np.quantile(draws, 1.0 - tail, axis=0)
    safe = np.where(sd > 0.0, sd, 1.0)
    scaled = np.abs(draws - mean) / safe
    scaled[:, sd == 0.0] = 0.0
    m = float(np.quantile(scaled.max(axis=1), level))
    return CredibleBands(mean, lo, hi, mean - m * sd, mean + m * sd, level)


def effective_sample_size(chain) -> float:
    """Effective sample size by initial-positive-sequence truncation.

    Sums adjacent autocorrelation pairs until the first negative pair, the
    standard conservative estimate for reversible chains.  Degenerate
    (constant) chains report 1.
    """
    x = np.asarray(chain, dtype=float).ravel()
    n = x.size
    if n < 4:
        return float(n)
    x = x - x.mean()
    var = x @ x / n
    if var <= 0.0:
        return 1.0
    size = int(2 ** np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(x, size)
    acov = np.fft.irfft(f * np.conj(f), size)[:n].real / n
    rho = acov / acov[0]
    tau = -1.0
    for m in range(n // 2):
        pair = rho[2 * m] + rho[2 * m + 1]
        if pair <= 0.0:
            break
        tau += 2.0 * pair
    tau = max(tau, 1.0)
    return float(min(n / tau, n))


def subset_observations(obs: ObservationSet, stop: int, start: int = 0) -> ObservationSet:
    """View of the observation rows in [start, stop)."""
    if not 0 <= start < stop <= obs.n_times:
        raise ValueError("bad subset range")
    return ObservationSet(obs.grid, list(obs.points[start:stop]), list(obs.values[start:stop]))


def rolling_curve_forecasts(obs_all: ObservationSet, name: str, options: dict,
                            targets, horizon: int = 1):
    """Refit a rival forecaster before every target and forecast the grid.

    For target t the history is rows [0, t - horizon]; the same forecaster
    instance is reused across origins so warm starts apply.  A cell whose
    fit or forecast raises, or whose fit flags itself unstable, is recorded
    as failed rather than aborting the study.

    Returns
    -------
    forecasts : ndarray of shape (n_targets, grid.size), NaN where failed
    ok : boolean ndarray of shape (n_targets,)
    """
    targets = list(targets)
    forecaster = make_forecaster(name, **options)
    out = np.full((len(targets), obs_all.grid.size), np.nan)
    ok = np.zeros(len(targets), dtype=bool)
    for i, t in enumerate(targets):
        stop = t - horizon + 1
        if stop < 1 or t >= obs_all.n_times:
            raise ValueError("target outside the observation range")
        try:
            forecaster.fit(subset_observations(obs_all, stop))
            if getattr(forecaster, "metadata", {}).get("unstable"):
                continue
            out[i] = forecaster.predict(horizon)
            ok[i] = True
        except (ValueError, np.linalg.LinAlgError):
            pass
    return out, ok


def far_rolling_forecasts(model: FarModel, draws: GibbsDraws, obs_all: ObservationSet,
                          targets, horizon: int = 1, thin: int = 1, rng=None):
    """Forecasts from a fitted hierarchical model across rolling targets.

    Refilters the latent states over the expanding data for every retained
    draw while all static parameters stay at their posterior values; one
    filter pass per draw serves every origin.

    Returns
    -------
    point : ndarray of shape (n_targets, grid.size), the posterior mean path
    samples : ndarray of shape (n_used, n_targets, grid.size) or None
        Predictive draws, present when `rng` is given.
    """
    targets = list(targets)
    origins = [t - horizon for t in targets]
    result = filter_forecasts(model, draws, obs_all, origins, horizon, thin, rng)
    if rng is None:
        means = result
        samples = None
    else:
        means, samples = result
    return means.mean(axis=0), samples


@dataclass
class StudyRow:
    """One emitted result: a metric value for a (method, window, horizon) cell."""

    method: str
    window_start: str
    horizon: int
    metric: str
    value: float

    def as_dict(self) -> dict:
        return {
            "method": self.method,
            "window_start": self.window_start,
            "horizon": self.horizon,
            "metric": self.metric,
            "value": self.value,
        }


def _far_config(options: dict) -> tuple[FarConfig, int]:
    opts = dict(options)
    thin = int(opts.pop("thin", 1))
    return FarConfig(**opts), thin


def run_scenario_study(scenario: SimulatedScenario, methods: dict, seed: int = 0,
                       horizon: int = 1, sample_bands: bool = False):
    """Rolling one-window study on a simulated scenario.

    Methods named with a ``far`` prefix are fitted once on the training
    span by the Gibbs sampler (options are FarConfig fields plus optional
    ``thin``); every other name is a rival refitted before each target on
    all available data.  Targets are the scenario's future times, truth is
    the latent curve on the evaluation grid.

    Returns a dict with per-method forecast records, failure counts, study
    rows, and the fitted draws of each ``far`` entry.
    """
    spec = scenario.spec
    T = spec.n_times
    n_future = spec.n_future
    targets = list(range(T, T + n_future))
    truth = scenario.truth_eval[T:T + n_future]
    obs_all = scenario.obs
    seeds = np.random.SeedSequence(seed).spawn(len(methods))
    records: dict[str, list[ForecastRecord]] = {}
    failures: dict[str, int] = {}
    fits: dict[str, dict] = {}
    rows: list[StudyRow] = []
    for (name, options), child in zip(methods.items(), seeds):
        if name.startswith("far"):
            config, thin = _far_config(options)
            rng = np.random.default_rng(child)
            model = FarModel(scenario.training_obs(), config)
            draws = run_gibbs(model, rng)
            band_rng = np.random.default_rng(child.spawn(1)[0]) if sample_bands else None
            point, samples = far_rolling_forecasts(model, draws, obs_all, targets,
                                                   horizon, thin, band_rng)
            records[name] = [
                ForecastRecord(name, t - horizon, horizon, point[i], truth[i],
                               None if samples is None else samples[:, i, :])
                for i, t in enumerate(targets)
            ]
            failures[name] = 0
            fits[name] = {
                "draws": draws,
                "kernel_mean": draws.kernel_mean,
                "lag_counts": lag_order_counts(draws),
                "seconds_per_1000": draws.seconds_per_1000,
            }
        else:
            point, ok = rolling_curve_forecasts(obs_all, name, options, targets, horizon)
            records[name] = [
                ForecastRecord(name, t - horizon, horizon, point[i], truth[i])
                for i, t in enumerate(targets) if ok[i]
            ]
            failures[name] = int((~ok).sum())
        if records[name]:
            rows.append(StudyRow(name, "sim", horizon, "msfe", msfe(records[name])))
        rows.append(StudyRow(name, "sim", horizon, "failures", float(failures[name])))
    return {"records": records, "failures": failures, "rows": rows, "fits": fits,
            "targets": targets, "truth": truth}


def true_kernel_surface(scenario: SimulatedScenario, lag: int = 0) -> np.ndarray:
    """The generating autoregression surface on the evaluation grid."""
    pts = scenario.eval_grid.points
    return kernel_matrix(scenario.spec.kernels[lag], pts, pts)


def yield_windows(dates, first_month: str = "2003-02", n_windows: int = 9,
                  window_months: int = 18):
    """Consecutive non-overlapping estimation windows over business dates.

    Returns (start_index, stop_index, label) per window, stop exclusive;
    label is the start month formatted month/2-digit-year.
    """
    dates = np.asarray(dates, dtype="datetime64[D]")
    months = dates.astype("datetime64[M]")
    first = np.datetime64(first_month, "M")
    out = []
    for k in range(n_windows):
        lo = first + k * window_months
        hi = lo + window_months
        inside = np.nonzero((months >= lo) & (months < hi))[0]
        if inside.size == 0:
            raise ValueError("window has no dates")
        label = f"{int(lo.astype(int) % 12 + 1)}/{str(lo)[2:4]}"
        out.append((int(inside[0]), int(inside[-1]) + 1, label))
    return out


def window_targets(dates, stop: int, horizon: int):
    """Target indices in the calendar month following an estimation window.

    Keeps targets whose information set reaches at least the window end,
    so h-step forecasts never discard estimation data.
    """
    dates = np.asarray(dates, dtype="datetime64[D]")
    if stop >= dates.size:
        return []
    month = dates[stop].astype("datetime64[M]")
    inside = np.nonzero(dates.astype("datetime64[M]") == month)[0]
    return [int(s) for s in inside if s - horizon >= stop - 1 and s >= stop]


def run_yield_study(dates, obs: ObservationSet, methods: dict, horizons=(1, 5),
                    seed: int = 0, first_month: str = "2003-02", n_windows: int = 9,
                    window_months: int = 18):
    """Rolling RMSFE study over consecutive estimation windows.

    Forecast errors are evaluated at the maturities observed on each target
    day.  ``far``-prefixed methods are fitted once per window and state
    updated through the forecast month; rivals are refitted per target on
    all data from the window start.
    """
    dates = np.asarray(dates, dtype="datetime64[D]")
    if dates.size != obs.n_times:
        raise ValueError("dates must align with observations")
    windows = yield_windows(dates, first_month, n_windows, window_months)
    seeds = np.random.SeedSequence(seed).spawn(len(windows))
    rows: list[StudyRow] = []
    records: dict[tuple, list[ForecastRecord]] = {}
    for (w0, w1, label), wseed in zip(windows, seeds):
        far_fits = {}
        for h in horizons:
            targets = window_targets(dates, w1, h)
            if not targets:
                continue
            # everything below works on rows re-indexed to the window start
            stop_all = targets[-1] + 1
            local = subset_observations(obs, stop_all, w0)
            local_targets = [t - w0 for t in targets]
            for mseed, (name, options) in zip(wseed.spawn(len(methods)), methods.items()):
                recs = []
                n_fail = 0
                if name.startswith("far"):
                    if name not in far_fits:
                        config, thin = _far_config(options)
                        model = FarModel(subset_observations(obs, w1, w0), config)
                        far_fits[name] = (model, run_gibbs(model, np.random.default_rng(mseed)), thin)
                    model, draws, thin = far_fits[name]
                    point, _ = far_rolling_forecasts(model, draws, local, local_targets, h, thin)
                    for i, t in enumerate(targets):
                        idx = np.asarray(obs.indices[t])
                        recs.append(ForecastRecord(name, t - h, h, point[i][idx],
                                                   np.asarray(obs.values[t], dtype=float)))
                else:
                    point, ok = rolling_curve_forecasts(local, name, options, local_targets, h)
                    for i, t in enumerate(targets):
                        if not ok[i]:
                            n_fail += 1
                            continue
                        idx = np.asarray(obs.indices[t])
                        recs.append(ForecastRecord(name, t - h, h, point[i][idx],
                                                   np.asarray(obs.values[t], dtype=float)))
                records[(name, label, h)] = recs
                if recs:
                    rows.append(StudyRow(name, label, h, "rmsfe", rmsfe(recs)))
                rows.append(StudyRow(name, label, h, "failures", float(n_fail)))
    return {"rows": rows, "records": records, "windows": windows}
