"""Ingestion, serialization, configuration, and subcommand behavior."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from farcast.cli import ConfigError, RunConfig, load_config, main
from farcast.bench import CredibleBands, StudyRow
from farcast.far import GibbsDraws
from farcast.grid import EvaluationGrid, ObservationSet
from farcast.io import (
    IngestError,
    NOMINAL_MONTHS,
    REAL_MONTHS,
    YieldDataset,
    default_month_map,
    ingest_yields,
    load_dataset,
    load_draws,
    save_dataset,
    save_draws,
    write_yields,
)
from farcast import report

RNG = lambda s: np.random.default_rng(s)


def nominal_csv(tmp_path, rows, headers=None, name="y.csv"):
    headers = headers if headers is not None else ["date"] + [str(m) for m in NOMINAL_MONTHS]
    text = ",".join(headers) + "\n" + "\n".join(",".join(r) for r in rows) + "\n"
    path = tmp_path / name
    path.write_text(text)
    return path


def full_row(date, rng):
    return [date] + [f"{v:.4f}" for v in rng.uniform(1.0, 6.0, len(NOMINAL_MONTHS))]


# ---------------------------------------------------------------------------
# yield ingestion


def test_ingest_nominal_full_rows(tmp_path):
    rng = RNG(0)
    path = nominal_csv(tmp_path, [full_row("2003-01-02", rng), full_row("2003-01-03", rng)])
    ds = ingest_yields(path, "nominal")
    assert ds.kind == "nominal"
    assert ds.dates.size == 2
    assert np.array_equal(ds.months, np.array(NOMINAL_MONTHS))
    assert not np.isnan(ds.values).any()
    obs = ds.observation_set()
    assert obs.n_times == 2
    assert list(obs.counts) == [11, 11]
    assert np.allclose(ds.points, np.array(NOMINAL_MONTHS) / 360.0)
    assert ds.points[-1] == 1.0


def test_ingest_real_kind_is_sparse(tmp_path):
    headers = ["date"] + [str(m) for m in REAL_MONTHS]
    rows = [["2003-01-02", "1.0", "1.2", "", "1.8", "2.0"],
            ["2003-01-03", "1.1", "1.3", "1.5", "1.9", "2.1"]]
    path = nominal_csv(tmp_path, rows, headers=headers)
    ds = ingest_yields(path, "real")
    obs = ds.observation_set()
    assert obs.grid.size == 5
    assert max(obs.counts) <= 5
    assert list(obs.counts) == [4, 5]


def test_ingest_blank_cell_leaves_rest_intact(tmp_path):
    rng = RNG(1)
    r1 = full_row("2003-01-02", rng)
    r2 = full_row("2003-01-03", rng)
    r2[3] = ""  # maturity 6 months on the second day
    path = nominal_csv(tmp_path, [r1, r2])
    ds = ingest_yields(path, "nominal")
    assert np.isnan(ds.values[1, 2])
    assert np.isnan(ds.values).sum() == 1
    obs = ds.observation_set()
    assert list(obs.counts) == [11, 10]
    assert 6 / 360.0 not in obs.points[1]


def test_ingest_drops_all_missing_rows_with_count(tmp_path):
    rng = RNG(2)
    blank = ["2003-01-03"] + [""] * len(NOMINAL_MONTHS)
    path = nominal_csv(tmp_path, [full_row("2003-01-02", rng), blank,
                                  full_row("2003-01-06", rng)])
    ds = ingest_yields(path, "nominal")
    assert ds.dates.size == 2
    assert ds.n_dropped == 1


def test_ingest_sorts_by_date(tmp_path):
    rng = RNG(3)
    path = nominal_csv(tmp_path, [full_row("2003-01-06", rng), full_row("2003-01-02", rng)])
    ds = ingest_yields(path, "nominal")
    assert ds.dates[0] < ds.dates[1]


def test_ingest_error_reports(tmp_path):
    rng = RNG(4)
    bad_date = full_row("not-a-date", rng)
    path = nominal_csv(tmp_path, [full_row("2003-01-02", rng), bad_date])
    with pytest.raises(IngestError) as err:
        ingest_yields(path, "nominal")
    assert err.value.report[0][0] == 1
    assert "date" in str(err.value)

    bad_cell = full_row("2003-01-03", rng)
    bad_cell[5] = "oops"
    path2 = nominal_csv(tmp_path, [bad_cell], name="y2.csv")
    with pytest.raises(IngestError) as err2:
        ingest_yields(path2, "nominal")
    assert "oops" in str(err2.value)


def test_ingest_header_validation(tmp_path):
    rng = RNG(5)
    path = nominal_csv(tmp_path, [full_row("2003-01-02", rng)],
                       headers=["date", "bogus"] + [str(m) for m in NOMINAL_MONTHS[1:]])
    with pytest.raises(ValueError, match="bogus"):
        ingest_yields(path, "nominal")
    path2 = nominal_csv(tmp_path, [["2003-01-02", "1.0"]], headers=["when", "1"],
                        name="y2.csv")
    with pytest.raises(ValueError, match="date"):
        ingest_yields(path2, "nominal")
    with pytest.raises(ValueError):
        ingest_yields(path, "bonds")


def test_ingest_custom_month_map(tmp_path):
    headers = ["date", "m12", "m60"]
    path = nominal_csv(tmp_path, [["2003-01-02", "2.0", "3.0"]], headers=headers)
    ds = ingest_yields(path, "nominal", month_map={"m12": 12, "m60": 60})
    assert list(ds.months) == [12, 60]
    with pytest.raises(ValueError, match="not a nominal maturity"):
        ingest_yields(path, "nominal", month_map={"m12": 13, "m60": 60})


def test_month_map_defaults():
    assert default_month_map("nominal")["360"] == 360
    assert set(default_month_map("real")) == {str(m) for m in REAL_MONTHS}


def test_yield_round_trip(tmp_path):
    rng = RNG(6)
    values = rng.uniform(0.5, 7.0, (6, 5))
    values[2, 1] = np.nan
    values[4, 4] = np.nan
    ds = YieldDataset("real",
                      np.array(["2003-01-02", "2003-01-03", "2003-01-06",
                                "2003-01-07", "2003-01-08", "2003-01-09"],
                               dtype="datetime64[D]"),
                      np.array(REAL_MONTHS), values)
    path = tmp_path / "rt.csv"
    write_yields(ds, path)
    back = ingest_yields(path, "real")
    assert np.array_equal(back.dates, ds.dates)
    assert np.array_equal(back.months, ds.months)
    assert np.array_equal(np.isnan(back.values), np.isnan(ds.values))
    assert np.array_equal(back.values[~np.isnan(ds.values)],
                          ds.values[~np.isnan(ds.values)])
    assert back.n_dropped == 0


def test_yield_dataset_validation():
    with pytest.raises(ValueError):
        YieldDataset("nominal", np.array(["2003-01-02"], dtype="datetime64[D]"),
                     np.array([12, 12]), np.zeros((1, 2)))
    with pytest.raises(ValueError):
        YieldDataset("real", np.array(["2003-01-02"], dtype="datetime64[D]"),
                     np.array([12, 60]), np.zeros((2, 2)))


# ---------------------------------------------------------------------------
# dataset and draw files


def sparse_obs(rng, T=7, M=9):
    grid = EvaluationGrid.regular(M)
    pts, vals = [], []
    for t in range(T):
        if t == 2:
            pts.append(np.empty(0))
            vals.append(np.empty(0))
            continue
        idx = np.sort(rng.choice(M, size=rng.integers(2, M), replace=False))
        pts.append(grid.points[idx])
        vals.append(rng.normal(size=idx.size))
    return ObservationSet(grid, pts, vals)


def test_dataset_round_trip(tmp_path):
    rng = RNG(7)
    obs = sparse_obs(rng)
    truth = rng.normal(size=(7, 9))
    oracle = rng.normal(size=(3, 9))
    save_dataset(tmp_path / "d", obs, meta={"tag": "x"}, truth=truth, oracle=oracle)
    back = load_dataset(tmp_path / "d")
    got = back["obs"]
    assert got.n_times == obs.n_times
    assert np.array_equal(got.grid.points, obs.grid.points)
    for t in range(obs.n_times):
        assert np.array_equal(got.points[t], obs.points[t])
        assert np.array_equal(got.values[t], obs.values[t])
    assert back["meta"]["tag"] == "x"
    assert np.array_equal(back["truth"], truth)
    assert np.array_equal(back["oracle"], oracle)


def fake_draws(rng, factors: bool):
    n, p, M, J = 4, 2, 6, 5
    common = dict(
        mean_coefs=rng.normal(size=(n, J)),
        obs_vars=rng.uniform(0.1, 1.0, n),
        kernel_coefs=rng.normal(size=(n, p, 9)),
        kernel_scales=rng.uniform(0.5, 2.0, (n, p)),
        penalty_mix=np.ones((n, p)),
        lag_on=rng.integers(0, 2, (n, p)).astype(np.int8),
        last_curves=rng.normal(size=(n, p + 1, M)),
        curve_mean=rng.normal(size=(8, M)),
        kernel_mean=rng.normal(size=(p, M, M)),
        predictive=rng.normal(size=(n, M)),
        curves=None,
        seconds_per_1000=1.25,
        meta={"n_burn": 3, "n_keep": n, "thin": 1},
    )
    if factors:
        return GibbsDraws(loading_coefs=rng.normal(size=(n, J, 2)),
                          factor_vars=rng.uniform(0.1, 1.0, (n, 2)),
                          nuggets=rng.uniform(0.01, 0.1, n),
                          matern_params=None, **common)
    return GibbsDraws(loading_coefs=None, factor_vars=None, nuggets=None,
                      matern_params=rng.uniform(0.1, 1.0, (n, 2)), **common)


@pytest.mark.parametrize("factors", [True, False])
def test_draws_round_trip(tmp_path, factors):
    draws = fake_draws(RNG(8), factors)
    save_draws(tmp_path / "dr", draws, config={"seed": 11})
    back = load_draws(tmp_path / "dr")
    for name in ("mean_coefs", "obs_vars", "kernel_coefs", "kernel_scales",
                 "penalty_mix", "last_curves", "curve_mean", "kernel_mean",
                 "predictive"):
        assert np.array_equal(getattr(back, name), getattr(draws, name)), name
    assert np.array_equal(back.lag_on, draws.lag_on)
    assert back.lag_on.dtype == np.int8
    assert back.curves is None
    if factors:
        assert np.array_equal(back.loading_coefs, draws.loading_coefs)
        assert back.matern_params is None
    else:
        assert np.array_equal(back.matern_params, draws.matern_params)
        assert back.loading_coefs is None
    assert back.seconds_per_1000 == draws.seconds_per_1000
    assert back.meta["n_keep"] == 4
    assert back.meta["config"] == {"seed": 11}
    assert back.n_draws == 4


# ---------------------------------------------------------------------------
# configuration


def test_config_defaults_validate():
    cfg = load_config(None, {})
    assert cfg.model == "fdlm-far"
    assert cfg.n_keep == 5000


@pytest.mark.parametrize("field,value,path", [
    ("model", "bogus", "model"),
    ("n_keep", 0, "n_keep"),
    ("thin", 0, "thin"),
    ("factor_threshold", 0.0, "factor_threshold"),
    ("kappa", "maybe", "kappa"),
    ("horizon", 0, "horizon"),
    ("lag_first_on", 1.5, "lag_first_on"),
    ("data_kind", "stocks", "data_kind"),
    ("nugget", -1.0, "nugget"),
])
def test_config_validation_messages(field, value, path):
    with pytest.raises(ConfigError, match=f"^{path}:"):
        load_config(None, {field: value})


def test_config_file_flag_precedence(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"n_keep": 77, "seed": 3, "model": "gp-far"}))
    cfg = load_config(str(p), {"seed": 9, "n_burn": None})
    assert cfg.n_keep == 77
    assert cfg.seed == 9
    assert cfg.model == "gp-far"
    assert cfg.n_burn == 5000
    p.write_text(json.dumps({"made_up": 1}))
    with pytest.raises(ConfigError, match="made_up"):
        load_config(str(p), {})
    p.write_text("{broken")
    with pytest.raises(ConfigError, match="config"):
        load_config(str(p), {})
    with pytest.raises(ConfigError, match="config"):
        load_config(str(tmp_path / "absent.json"), {})


def test_far_kwargs_mapping():
    cfg = load_config(None, {"p_max": 3, "model": "gp-far", "nugget": 1e-6,
                             "kappa": "sampled"})
    kw = cfg.far_kwargs()
    assert kw["n_lags"] == 3 and kw["lag_select"] is True
    assert kw["innovation"] == "matern"
    assert kw["fixed_nugget"] == 1e-6
    assert kw["sample_penalty_mix"] is True
    assert kw["lag_prior"].first_on == 0.9
    fc = cfg.far_config()
    assert fc.n_lags == 3
    cfg2 = load_config(None, {"n_lags": 2})
    assert cfg2.far_kwargs()["lag_select"] is False


# ---------------------------------------------------------------------------
# subcommands


def sim_config(tmp_path, **extra):
    cfg = {
        "scenario": {
            "n_times": 20,
            "design": {"kind": "dense", "dense_size": 10},
            "eval_size": 10,
            "fine_size": 50,
            "burn_in": 20,
            "n_future": 4,
        },
        "seed": 1,
    }
    cfg.update(extra)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path


def test_cli_simulate_fit_forecast_pipeline(tmp_path, capsys):
    cfgpath = sim_config(tmp_path)
    simdir = tmp_path / "sim"
    assert main(["simulate", "--config", str(cfgpath), "--out", str(simdir)]) == 0
    for name in ("obs.csv", "meta.json", "truth.csv", "oracle.csv"):
        assert (simdir / name).exists()
    bundle = load_dataset(simdir)
    assert bundle["obs"].n_times == 24
    assert bundle["meta"]["config"]["seed"] == 1
    assert bundle["truth"].shape == (24, 10)

    fitdir = tmp_path / "fit"
    rc = main(["fit", "--config", str(cfgpath), "--data", str(simdir),
               "--out", str(fitdir), "--model", "gp-far",
               "--iters", "1000", "--burn", "100"])
    assert rc == 0
    assert (fitdir / "draws" / "draws.bin").exists()
    summary = json.loads((fitdir / "summary.json").read_text())
    for key in ("kernel_mean", "lag_frequencies", "lag_order_counts",
                "obs_noise_sd", "ess", "seconds_per_1000"):
        assert key in summary
    assert summary["config"]["n_keep"] == 1000
    assert summary["config"]["model"] == "gp-far"
    assert len(summary["kernel_mean"]) == 1
    assert len(summary["kernel_mean"][0]) == 10
    assert summary["obs_noise_sd"] > 0.0
    assert summary["ess"]["predictive_min"] > 0.0
    back = load_draws(fitdir / "draws")
    assert back.n_draws == 1000
    assert back.meta["config"]["model"] == "gp-far"

    fcdir = tmp_path / "fc"
    rc = main(["forecast", "--config", str(cfgpath), "--data", str(simdir),
               "--draws", str(fitdir / "draws"), "--out", str(fcdir),
               "--horizon", "2"])
    assert rc == 0
    lines = (fcdir / "forecast.csv").read_text().strip().splitlines()
    assert lines[0] == "horizon,point_index,grid_point,forecast"
    assert len(lines) == 1 + 2 * 10
    bands = (fcdir / "bands.csv").read_text().strip().splitlines()
    assert len(bands) == 1 + 2 * 10
    for row in bands[1:]:
        parts = row.split(",")
        pw_lo, pw_hi, sim_lo, sim_hi = map(float, parts[3:])
        assert sim_lo <= pw_lo <= pw_hi <= sim_hi
    for h in (1, 2):
        png = fcdir / f"forecast_h{h}.png"
        assert png.exists() and png.stat().st_size > 1000
    echoed = json.loads((fcdir / "forecast.json").read_text())
    assert echoed["config"]["horizon"] == 2
    out = capsys.readouterr().out
    assert "simulate:" in out and "fit:" in out and "forecast:" in out


def test_cli_fit_is_byte_deterministic(tmp_path):
    cfgpath = sim_config(tmp_path)
    simdir = tmp_path / "sim"
    assert main(["simulate", "--config", str(cfgpath), "--out", str(simdir)]) == 0
    outs = []
    for k in (1, 2):
        fitdir = tmp_path / f"fit{k}"
        rc = main(["fit", "--config", str(cfgpath), "--data", str(simdir),
                   "--out", str(fitdir), "--model", "gp-far",
                   "--iters", "60", "--burn", "20", "--seed", "42"])
        assert rc == 0
        outs.append((fitdir / "draws" / "draws.bin").read_bytes())
    assert outs[0] == outs[1]


def test_cli_study_on_scenario(tmp_path):
    cfgpath = sim_config(
        tmp_path,
        study={"methods": {"far": {"n_keep": 25, "n_burn": 25,
                                   "innovation": "matern"},
                           "rw": {}, "mean": {}}},
    )
    outdir = tmp_path / "study"
    rc = main(["study", "--config", str(cfgpath), "--out", str(outdir)])
    assert rc == 0
    lines = (outdir / "study.csv").read_text().strip().splitlines()
    assert lines[0] == "method,window_start,horizon,metric,value"
    payload = json.loads((outdir / "study.json").read_text())
    methods = {r["method"] for r in payload["rows"]}
    assert methods == {"far", "rw", "mean"}
    msfes = [r for r in payload["rows"] if r["metric"] == "msfe"]
    assert len(msfes) == 3 and all(np.isfinite(r["value"]) for r in msfes)
    assert (outdir / "study.png").stat().st_size > 1000
    assert payload["config"]["seed"] == 1


def yield_csv(tmp_path):
    days = np.arange(np.datetime64("2003-01-02"), np.datetime64("2003-08-01"),
                     dtype="datetime64[D]")
    days = days[np.is_busday(days)]
    rng = RNG(12)
    level = np.cumsum(rng.normal(size=days.size) * 0.04) + 4.0
    rows = []
    for i, d in enumerate(days):
        vals = level[i] + 0.8 * np.array(REAL_MONTHS) / 360.0
        vals = vals + rng.normal(size=5) * 0.01
        cells = [f"{v:.6f}" for v in vals]
        if i % 9 == 4:
            cells[1] = ""
        rows.append([str(d)] + cells)
    headers = ["date"] + [str(m) for m in REAL_MONTHS]
    text = ",".join(headers) + "\n" + "\n".join(",".join(r) for r in rows) + "\n"
    path = tmp_path / "real.csv"
    path.write_text(text)
    return path


def test_cli_study_on_yields(tmp_path):
    data = yield_csv(tmp_path)
    cfg = {
        "seed": 4,
        "study": {
            "methods": {"rw": {}, "ses": {}},
            "horizons": [1],
            "first_month": "2003-02",
            "n_windows": 2,
            "window_months": 2,
        },
    }
    cfgpath = tmp_path / "c.json"
    cfgpath.write_text(json.dumps(cfg))
    outdir = tmp_path / "ystudy"
    rc = main(["study", "--config", str(cfgpath), "--data", str(data),
               "--data-kind", "real", "--out", str(outdir)])
    assert rc == 0
    payload = json.loads((outdir / "study.json").read_text())
    labels = {r["window_start"] for r in payload["rows"]}
    assert labels == {"2/03", "4/03"}
    rmsfes = [r for r in payload["rows"] if r["metric"] == "rmsfe"]
    assert len(rmsfes) == 4 and all(r["value"] >= 0.0 for r in rmsfes)
    first = (outdir / "study.csv").read_bytes()
    rc = main(["study", "--config", str(cfgpath), "--data", str(data),
               "--data-kind", "real", "--out", str(outdir)])
    assert rc == 0
    assert (outdir / "study.csv").read_bytes() == first


def test_cli_quadstudy(tmp_path):
    cfg = {"quad": {"m_list": [5, 10, 20], "n_reps": 10, "smoothness": [2.5]},
           "seed": 7}
    cfgpath = tmp_path / "c.json"
    cfgpath.write_text(json.dumps(cfg))
    outdir = tmp_path / "quad"
    assert main(["quadstudy", "--config", str(cfgpath), "--out", str(outdir)]) == 0
    lines = (outdir / "quad.csv").read_text().strip().splitlines()
    assert lines[0] == "smoothness,grid_size,rel_error,scaled_error"
    assert len(lines) == 4
    payload = json.loads((outdir / "quad.json").read_text())
    assert all(np.isfinite(r["scaled_error"]) for r in payload["rows"])
    assert (outdir / "quad.png").stat().st_size > 1000


def test_cli_error_paths(tmp_path, capsys):
    assert main(["fit", "--data", str(tmp_path / "missing")]) == 2
    assert "error:" in capsys.readouterr().err
    bad = tmp_path / "bad.json"
    bad.write_text("{nope")
    assert main(["simulate", "--config", str(bad)]) == 2
    bad.write_text(json.dumps({"made_up": 3}))
    assert main(["simulate", "--config", str(bad)]) == 2
    assert main(["fit"]) == 2  # no data configured
    data = yield_csv(tmp_path)
    assert main(["study", "--data", str(data), "--data-kind", "dataset",
                 "--out", str(tmp_path / "x")]) == 2


# ---------------------------------------------------------------------------
# report rendering


def test_report_forecast_figure(tmp_path):
    x = np.linspace(0.0, 1.0, 12)
    mean = np.sin(x)
    bands = CredibleBands(mean, mean - 0.1, mean + 0.1, mean - 0.2, mean + 0.2, 0.95)
    path = report.render_forecast_bands(tmp_path / "f.png", x, bands,
                                        observed=(x[::3], mean[::3]))
    assert Path(path).stat().st_size > 1000


def test_report_study_figure(tmp_path):
    rows = [StudyRow("rw", "2/03", 1, "rmsfe", 0.05),
            StudyRow("rw", "8/04", 1, "rmsfe", 0.06),
            StudyRow("far", "2/03", 1, "rmsfe", 0.04),
            StudyRow("far", "2/03", 5, "rmsfe", 0.09)]
    path = report.render_study_rows(tmp_path / "s.png", rows)
    assert Path(path).stat().st_size > 1000
    with pytest.raises(ValueError):
        report.render_study_rows(tmp_path / "t.png", rows, metric="msfe")


def test_report_quad_figure(tmp_path):
    path = report.render_quad_decay(tmp_path / "q.png", [5, 10, 20],
                                    {"smooth": [1e-3, 1e-4, 1e-5]})
    assert Path(path).stat().st_size > 1000
