"""Command-line front end: configuration, subcommands, and output files."""
from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import report
from .bench import (
    credible_bands,
    effective_sample_size,
    run_scenario_study,
    run_yield_study,
)
from .far import FarConfig, FarModel, LagPrior, filter_forecasts, lag_order_counts, run_gibbs
from .io import ingest_yields, load_dataset, load_draws, save_dataset, save_draws
from .simlab import DesignSpec, KernelSpec, ScenarioSpec, quad_error_study, simulate_scenario

__all__ = ["ConfigError", "RunConfig", "load_config", "main"]


class ConfigError(ValueError):
    """Configuration problem, message prefixed with the field path."""


@dataclass
class RunConfig:
    """Everything one invocation needs, merged from file and flags."""

    model: str = "fdlm-far"  # fdlm-far | gp-far
    n_lags: int = 1
    p_max: int | None = None
    lag_first_on: float = 0.9
    lag_on_after_off: float = 0.01
    lag_off_after_on: float = 0.75
    lag_burn: int = 500
    n_keep: int = 5000
    n_burn: int = 5000
    thin: int = 1
    grid_size: int = 30
    n_factors: int | None = None
    factor_threshold: float = 0.95
    nugget: float | None = None  # fixed value; None samples it
    kappa: str = "fixed"  # fixed | sampled
    penalty_mix: float = 1.0
    matern_smoothness: float = 2.5
    seed: int = 0
    threads: int = 1
    horizon: int = 1
    data: str | None = None
    data_kind: str = "dataset"  # dataset | nominal | real
    draws: str | None = None
    out: str = "out"
    scenario: dict = field(default_factory=dict)
    study: dict = field(default_factory=dict)
    quad: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.model not in ("fdlm-far", "gp-far"):
            raise ConfigError("model: must be 'fdlm-far' or 'gp-far'")
        if self.n_lags < 1:
            raise ConfigError("n_lags: must be >= 1")
        if self.p_max is not None and self.p_max < 1:
            raise ConfigError("p_max: must be >= 1")
        for name in ("lag_first_on", "lag_on_after_off", "lag_off_after_on"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name}: must be in [0, 1]")
        if self.n_keep < 1:
            raise ConfigError("n_keep: must be >= 1")
        if self.n_burn < 0:
            raise ConfigError("n_burn: must be >= 0")
        if self.thin < 1:
            raise ConfigError("thin: must be >= 1")
        if self.lag_burn < 0:
            raise ConfigError("lag_burn: must be >= 0")
        if self.grid_size < 2:
            raise ConfigError("grid_size: must be >= 2")
        if self.n_factors is not None and self.n_factors < 1:
            raise ConfigError("n_factors: must be >= 1")
        if not 0.0 < self.factor_threshold <= 1.0:
            raise ConfigError("factor_threshold: must be in (0, 1]")
        if self.nugget is not None and self.nugget <= 0.0:
            raise ConfigError("nugget: must be positive when fixed")
        if self.kappa not in ("fixed", "sampled"):
            raise ConfigError("kappa: must be 'fixed' or 'sampled'")
        if self.penalty_mix <= 0.0:
            raise ConfigError("penalty_mix: must be positive")
        if self.seed < 0:
            raise ConfigError("seed: must be >= 0")
        if self.threads < 1:
            raise ConfigError("threads: must be >= 1")
        if self.horizon < 1:
            raise ConfigError("horizon: must be >= 1")
        if self.data_kind not in ("dataset", "nominal", "real"):
            raise ConfigError("data_kind: must be dataset, nominal, or real")

    def far_kwargs(self) -> dict:
        return dict(
            n_lags=self.p_max if self.p_max is not None else self.n_lags,
            lag_select=self.p_max is not None,
            lag_burn=self.lag_burn,
            lag_prior=LagPrior(self.lag_first_on, self.lag_on_after_off,
                               self.lag_off_after_on),
            n_keep=self.n_keep,
            n_burn=self.n_burn,
            thin=self.thin,
            innovation="factors" if self.model == "fdlm-far" else "matern",
            n_factors=self.n_factors,
            factor_threshold=self.factor_threshold,
            fixed_nugget=self.nugget,
            penalty_mix=self.penalty_mix,
            sample_penalty_mix=self.kappa == "sampled",
            matern_smoothness=self.matern_smoothness,
        )

    def far_config(self) -> FarConfig:
        return FarConfig(**self.far_kwargs())

    def echo(self) -> dict:
        return asdict(self)


def load_config(path: str | None, overrides: dict | None = None) -> RunConfig:
    """Build a RunConfig from an optional JSON file plus flag overrides."""
    data: dict = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config: file not found: {path}")
        except json.JSONDecodeError as e:
            raise ConfigError(f"config: invalid JSON: {e}")
        if not isinstance(data, dict):
            raise ConfigError("config: top level must be an object")
    known = {f.name for f in fields(RunConfig)}
    for key in data:
        if key not in known:
            raise ConfigError(f"{key}: unknown field")
    merged = dict(data)
    for key, val in (overrides or {}).items():
        if val is not None:
            merged[key] = val
    try:
        cfg = RunConfig(**merged)
    except TypeError as e:
        raise ConfigError(str(e))
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# output helpers


def _write_rows_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "window_start", "horizon", "metric", "value"])
        for r in rows:
            w.writerow([r.method, r.window_start, r.horizon, r.metric, repr(r.value)])


def _write_json(path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True))


def _load_observations(cfg: RunConfig):
    """The configured data as (ObservationSet, dates-or-None, meta)."""
    if cfg.data is None:
        raise ConfigError("data: required for this subcommand")
    if cfg.data_kind == "dataset":
        bundle = load_dataset(cfg.data)
        return bundle["obs"], None, bundle["meta"]
    ds = ingest_yields(cfg.data, cfg.data_kind)
    meta = {
        "kind": ds.kind,
        "months": [int(m) for m in ds.months],
        "n_dropped": ds.n_dropped,
    }
    return ds.observation_set(), ds.dates, meta


# ---------------------------------------------------------------------------
# subcommands


def _scenario_spec(cfg: RunConfig) -> ScenarioSpec:
    sc = dict(cfg.scenario)
    kernels = sc.pop("kernels", [{"family": "bimodal", "c_norm": 0.8}])
    design = sc.pop("design", {"kind": "dense"})
    sc.setdefault("eval_size", cfg.grid_size)
    sc.setdefault("n_times", 100)
    try:
        return ScenarioSpec(
            kernels=[KernelSpec(**k) for k in kernels],
            design=DesignSpec(**design),
            **sc,
        )
    except (TypeError, ValueError) as e:
        raise ConfigError(f"scenario: {e}")


def cmd_simulate(cfg: RunConfig) -> int:
    spec = _scenario_spec(cfg)
    scenario = simulate_scenario(spec, np.random.default_rng(cfg.seed))
    out = save_dataset(
        cfg.out,
        scenario.obs,
        meta={"config": cfg.echo(), "command": "simulate"},
        truth=scenario.truth_eval,
        oracle=scenario.oracle,
    )
    print(f"simulate: wrote {out}/obs.csv meta.json truth.csv oracle.csv "
          f"(T={spec.n_times}+{spec.n_future}, M={spec.eval_size})")
    return 0


def _ess_table(draws, model) -> dict:
    table: dict = {"obs_var": effective_sample_size(draws.obs_vars)}
    if draws.predictive is not None:
        per_point = [effective_sample_size(draws.predictive[:, j])
                     for j in range(model.grid.size)]
        table["predictive"] = per_point
        table["predictive_min"] = min(per_point)
        table["predictive_median"] = float(np.median(per_point))
    return table


def cmd_fit(cfg: RunConfig) -> int:
    obs, _, data_meta = _load_observations(cfg)
    model = FarModel(obs, cfg.far_config())
    draws = run_gibbs(model, np.random.default_rng(cfg.seed))
    out = Path(cfg.out)
    save_draws(out / "draws", draws, config=cfg.echo())
    counts = lag_order_counts(draws)
    summary = {
        "config": cfg.echo(),
        "data_meta": data_meta,
        "grid_points": [float(x) for x in model.grid.points],
        "kernel_mean": draws.kernel_mean.tolist(),
        "lag_frequencies": draws.lag_on.mean(axis=0).tolist(),
        "lag_order_counts": counts.tolist(),
        "obs_noise_sd": float(np.sqrt(draws.obs_vars.mean())),
        "ess": _ess_table(draws, model),
        "seconds_per_1000": draws.seconds_per_1000,
    }
    _write_json(out / "summary.json", summary)
    print(f"fit: {draws.n_draws} draws in {out}/draws, summary.json written "
          f"({draws.seconds_per_1000:.2f}s per 1000 iterations)")
    return 0


def cmd_forecast(cfg: RunConfig) -> int:
    obs, _, _ = _load_observations(cfg)
    draws_dir = cfg.draws if cfg.draws is not None else str(Path(cfg.out) / "draws")
    draws = load_draws(draws_dir)
    stored = draws.meta.get("config")
    fit_cfg = RunConfig(**{k: v for k, v in stored.items()}) if stored else cfg
    model = FarModel(obs, fit_cfg.far_config())
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    origin = obs.n_times - 1
    rng = np.random.default_rng(cfg.seed)
    rows = []
    band_rows = []
    for h in range(1, cfg.horizon + 1):
        means, samples = filter_forecasts(model, draws, obs, [origin], h, rng=rng)
        point = means.mean(axis=0)[0]
        bands = credible_bands(samples[:, 0, :])
        for j, x in enumerate(model.grid.points):
            rows.append([h, j, repr(float(x)), repr(float(point[j]))])
            band_rows.append([
                h, j, repr(float(x)),
                repr(float(bands.pointwise_lower[j])), repr(float(bands.pointwise_upper[j])),
                repr(float(bands.simultaneous_lower[j])), repr(float(bands.simultaneous_upper[j])),
            ])
        observed = (obs.points[origin], obs.values[origin])
        report.render_forecast_bands(out / f"forecast_h{h}.png", model.grid.points,
                                     bands, observed, title=f"horizon {h}")
    with open(out / "forecast.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["horizon", "point_index", "grid_point", "forecast"])
        w.writerows(rows)
    with open(out / "bands.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["horizon", "point_index", "grid_point",
                    "pointwise_lower", "pointwise_upper",
                    "simultaneous_lower", "simultaneous_upper"])
        w.writerows(band_rows)
    _write_json(out / "forecast.json", {
        "config": cfg.echo(),
        "origin": origin,
        "horizons": list(range(1, cfg.horizon + 1)),
        "band_level": 0.95,
    })
    print(f"forecast: wrote {out}/forecast.csv bands.csv forecast.json and "
          f"{cfg.horizon} figure(s)")
    return 0


def _study_methods(cfg: RunConfig, max_months: float | None) -> dict:
    methods = dict(cfg.study.get("methods",
                                 {"far": {}, "rw": {}, "mean": {}, "ses": {}, "var": {}}))
    for name, options in methods.items():
        options = dict(options or {})
        if name.startswith("far"):
            merged = cfg.far_kwargs()
            merged.update(options)
            merged["track_predictive"] = False
            options = merged
        elif name.startswith("ns") and max_months is not None:
            # factor loadings decay per month; the grid is rescaled by the
            # longest maturity
            options.setdefault("decay", 0.0609 * max_months)
        methods[name] = options
    return methods


def cmd_study(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.data is None:
        scenario = simulate_scenario(_scenario_spec(cfg), np.random.default_rng(cfg.seed))
        methods = _study_methods(cfg, None)
        result = run_scenario_study(scenario, methods, seed=cfg.seed,
                                    horizon=cfg.horizon)
        rows = result["rows"]
        metric = "msfe"
    else:
        if cfg.data_kind == "dataset":
            raise ConfigError("data_kind: the study over a data file needs nominal or real")
        ds = ingest_yields(cfg.data, cfg.data_kind)
        obs = ds.observation_set()
        methods = _study_methods(cfg, float(ds.months.max()))
        result = run_yield_study(
            ds.dates, obs, methods,
            horizons=tuple(cfg.study.get("horizons", (1, 5))),
            seed=cfg.seed,
            first_month=cfg.study.get("first_month", "2003-02"),
            n_windows=int(cfg.study.get("n_windows", 9)),
            window_months=int(cfg.study.get("window_months", 18)),
        )
        rows = result["rows"]
        metric = "rmsfe"
    _write_rows_csv(out / "study.csv", rows)
    _write_json(out / "study.json", {
        "config": cfg.echo(),
        "rows": [r.as_dict() for r in rows],
    })
    report.render_study_rows(out / "study.png", rows, metric=metric)
    print(f"study: {len(rows)} rows in {out}/study.csv study.json study.png")
    return 0


def cmd_quadstudy(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    quad = dict(cfg.quad)
    m_list = [int(m) for m in quad.get("m_list", (5, 10, 15, 20, 25, 30, 50, 100))]
    n_reps = int(quad.get("n_reps", 200))
    kernel = KernelSpec(**quad.get("kernel", {"family": "bimodal", "c_norm": 0.8}))
    smooth_list = quad.get("smoothness", (2.5, 0.5))
    rng = np.random.default_rng(cfg.seed)
    rows = []
    curves = {}
    for nu in smooth_list:
        rel, scaled = quad_error_study(kernel, float(nu), m_list, n_reps, rng)
        curves[f"smoothness {nu}"] = scaled
        for m, r, s in zip(m_list, rel, scaled):
            rows.append({"smoothness": float(nu), "grid_size": m,
                         "rel_error": float(r), "scaled_error": float(s)})
    with open(out / "quad.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["smoothness", "grid_size",
                                           "rel_error", "scaled_error"])
        w.writeheader()
        w.writerows(rows)
    _write_json(out / "quad.json", {"config": cfg.echo(), "rows": rows})
    report.render_quad_decay(out / "quad.png", m_list, curves)
    print(f"quadstudy: {len(rows)} rows in {out}/quad.csv quad.json quad.png")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--threads", type=int, help="worker threads for the runners")
    p.add_argument("--model", choices=["fdlm-far", "gp-far"],
                   help="innovation covariance family")
    p.add_argument("--pmax", type=int, dest="p_max",
                   help="largest lag; turns on lag selection")
    p.add_argument("--iters", type=int, dest="n_keep", help="retained iterations")
    p.add_argument("--burn", type=int, dest="n_burn", help="burn-in iterations")
    p.add_argument("--out", help="output directory")
    p.add_argument("--data", help="dataset directory or yields CSV")
    p.add_argument("--data-kind", dest="data_kind",
                   choices=["dataset", "nominal", "real"], help="input flavor")
    p.add_argument("--horizon", type=int, help="forecast steps ahead")
    p.add_argument("--draws", help="draw directory (forecast)")


_COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "forecast": cmd_forecast,
    "study": cmd_study,
    "quadstudy": cmd_quadstudy,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="farcast",
        description="Hierarchical functional autoregression: simulate, fit, "
                    "forecast, and run forecasting studies.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        _add_common(sub.add_parser(name))
    args = vars(parser.parse_args(argv))
    command = args.pop("command")
    config_path = args.pop("config")
    try:
        cfg = load_config(config_path, args)
        return _COMMANDS[command](cfg)
    except (ConfigError, ValueError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
