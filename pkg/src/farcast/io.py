"""Yield-curve ingestion, dataset files, and columnar draw storage."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .far import GibbsDraws
from .grid import EvaluationGrid, ObservationSet

__all__ = [
    "NOMINAL_MONTHS",
    "REAL_MONTHS",
    "IngestError",
    "YieldDataset",
    "default_month_map",
    "ingest_yields",
    "write_yields",
    "save_dataset",
    "load_dataset",
    "save_draws",
    "load_draws",
]

NOMINAL_MONTHS = (1, 3, 6, 12, 24, 36, 60, 84, 120, 240, 360)
REAL_MONTHS = (60, 84, 120, 240, 360)


class IngestError(ValueError):
    """Ingestion failure carrying a row-level error report."""

    def __init__(self, report):
        self.report = list(report)
        lines = [f"row {r}: {msg}" for r, msg in self.report[:5]]
        if len(self.report) > 5:
            lines.append(f"... {len(self.report) - 5} more")
        super().__init__("; ".join(lines))


@dataclass
class YieldDataset:
    """Daily yield curves in percent at a fixed maturity set.

    Missing cells are NaN; maturities are months, their rescaled
    coordinates divide by the largest maturity present so nominal and real
    curves share the unit interval.
    """

    kind: str
    dates: np.ndarray
    months: np.ndarray
    values: np.ndarray
    n_dropped: int = 0

    def __post_init__(self):
        if self.kind not in ("nominal", "real"):
            raise ValueError("kind must be 'nominal' or 'real'")
        self.dates = np.asarray(self.dates, dtype="datetime64[D]")
        self.months = np.asarray(self.months, dtype=int)
        self.values = np.asarray(self.values, dtype=float)
        if np.any(np.diff(self.months) <= 0):
            raise ValueError("maturities must be strictly increasing")
        if self.values.shape != (self.dates.size, self.months.size):
            raise ValueError("values must be (n_dates, n_maturities)")

    @property
    def points(self) -> np.ndarray:
        return self.months / float(self.months.max())

    def observation_set(self) -> ObservationSet:
        grid = EvaluationGrid(self.points)
        pts, vals = [], []
        for row in self.values:
            keep = ~np.isnan(row)
            pts.append(self.points[keep])
            vals.append(row[keep])
        return ObservationSet(grid, pts, vals)


def default_month_map(kind: str) -> dict:
    months = NOMINAL_MONTHS if kind == "nominal" else REAL_MONTHS
    return {str(m): m for m in months}


def ingest_yields(path, kind: str, month_map: dict | None = None,
                  date_column: str = "date") -> YieldDataset:
    """Parse a wide CSV of daily yields into a YieldDataset.

    The file has one date column and one column per maturity; headers map
    to month counts through `month_map` (default: the month count itself).
    Rows whose yields are all missing are dropped and counted; a malformed
    date or a non-numeric cell is collected into a row-level error report.
    """
    if kind not in ("nominal", "real"):
        raise ValueError("kind must be 'nominal' or 'real'")
    month_map = default_month_map(kind) if month_map is None else dict(month_map)
    allowed = set(NOMINAL_MONTHS if kind == "nominal" else REAL_MONTHS)
    df = pd.read_csv(path, dtype=str)
    if date_column not in df.columns:
        raise ValueError(f"missing date column {date_column!r}")
    cols = [c for c in df.columns if c != date_column]
    for c in cols:
        if c not in month_map:
            raise ValueError(f"unknown maturity column {c!r}")
        if month_map[c] not in allowed:
            raise ValueError(f"column {c!r} maps to month {month_map[c]}, not a {kind} maturity")
    order = np.argsort([month_map[c] for c in cols])
    cols = [cols[i] for i in order]
    months = np.array([month_map[c] for c in cols], dtype=int)

    report = []
    dates, rows = [], []
    n_dropped = 0
    for i in range(len(df)):
        raw_date = df[date_column].iloc[i]
        try:
            when = np.datetime64(str(raw_date).strip(), "D")
        except ValueError:
            report.append((i, f"unparseable date {raw_date!r}"))
            continue
        vals = np.full(months.size, np.nan)
        bad = False
        for j, c in enumerate(cols):
            cell = df[c].iloc[i]
            if cell is None or (isinstance(cell, float) and np.isnan(cell)):
                continue
            cell = str(cell).strip()
            if cell in ("", "NA", "ND", "nan"):
                continue
            try:
                vals[j] = float(cell)
            except ValueError:
                report.append((i, f"non-numeric cell {cell!r} in column {c!r}"))
                bad = True
                break
        if bad:
            continue
        if np.isnan(vals).all():
            n_dropped += 1
            continue
        dates.append(when)
        rows.append(vals)
    if report:
        raise IngestError(report)
    if not rows:
        raise ValueError("no usable rows")
    dates = np.array(dates, dtype="datetime64[D]")
    values = np.array(rows)
    order = np.argsort(dates, kind="stable")
    return YieldDataset(kind, dates[order], months, values[order], n_dropped)


def write_yields(dataset: YieldDataset, path) -> None:
    """Inverse of `ingest_yields` under the default month map."""
    cols = {"date": [str(d) for d in dataset.dates]}
    for j, m in enumerate(dataset.months):
        col = dataset.values[:, j]
        cols[str(m)] = ["" if np.isnan(v) else repr(float(v)) for v in col]
    pd.DataFrame(cols).to_csv(path, index=False)


# ---------------------------------------------------------------------------
# generic dataset files: long-format observations plus a JSON meta block


def save_dataset(dirpath, obs: ObservationSet, meta: dict | None = None,
                 truth: np.ndarray | None = None, oracle: np.ndarray | None = None) -> Path:
    """Write an observation set (and optional latent truth) to a directory.

    obs.csv holds one row per observed cell (time, point, value) at full
    float precision; meta.json carries the grid and any caller metadata;
    truth.csv / oracle.csv are matrices on the grid when given.
    """
    out = Path(dirpath)
    out.mkdir(parents=True, exist_ok=True)
    times = np.concatenate([np.full(p.size, t) for t, p in enumerate(obs.points)])
    pts = np.concatenate(obs.points)
    vals = np.concatenate(obs.values)
    pd.DataFrame({"time": times.astype(int), "point": pts, "value": vals}).to_csv(
        out / "obs.csv", index=False, float_format="%.17g"
    )
    blob = dict(meta or {})
    blob["grid_points"] = [float(x) for x in obs.grid.points]
    blob["n_times"] = obs.n_times
    (out / "meta.json").write_text(json.dumps(blob, indent=2, sort_keys=True))
    header = ",".join(f"{x:.17g}" for x in obs.grid.points)
    if truth is not None:
        np.savetxt(out / "truth.csv", truth, delimiter=",", header=header, fmt="%.17g")
    if oracle is not None:
        np.savetxt(out / "oracle.csv", oracle, delimiter=",", header=header, fmt="%.17g")
    return out


def load_dataset(dirpath) -> dict:
    """Read a dataset directory back; inverse of `save_dataset`."""
    src = Path(dirpath)
    meta = json.loads((src / "meta.json").read_text())
    grid = EvaluationGrid(np.array(meta["grid_points"], dtype=float))
    frame = pd.read_csv(src / "obs.csv", float_precision="round_trip")
    T = int(meta["n_times"])
    pts: list = [np.empty(0)] * T
    vals: list = [np.empty(0)] * T
    times = frame["time"].to_numpy()
    for t in range(T):
        sel = times == t
        pts[t] = frame["point"].to_numpy()[sel]
        vals[t] = frame["value"].to_numpy()[sel]
    out = {"obs": ObservationSet(grid, pts, vals), "meta": meta}
    for name in ("truth", "oracle"):
        f = src / f"{name}.csv"
        if f.exists():
            out[name] = np.atleast_2d(np.loadtxt(f, delimiter=",", skiprows=1))
    return out


# ---------------------------------------------------------------------------
# columnar draw storage: one binary blob plus a JSON schema sidecar

_DRAW_FIELDS = (
    "mean_coefs",
    "obs_vars",
    "kernel_coefs",
    "kernel_scales",
    "penalty_mix",
    "lag_on",
    "last_curves",
    "curve_mean",
    "kernel_mean",
    "loading_coefs",
    "factor_vars",
    "nuggets",
    "matern_params",
    "predictive",
    "curves",
)


def save_draws(dirpath, draws: GibbsDraws, config: dict | None = None) -> Path:
    """Serialize retained draws to draws.bin + draws.json.

    The binary file is a concatenation of C-order little-endian arrays, one
    per stored field; the sidecar records name, dtype, shape, and byte
    offset of each, so any implementation can map the file without this
    package.
    """
    out = Path(dirpath)
    out.mkdir(parents=True, exist_ok=True)
    columns = []
    chunks = []
    offset = 0
    for name in _DRAW_FIELDS:
        arr = getattr(draws, name)
        if arr is None:
            continue
        kind = "<i1" if arr.dtype == np.int8 else "<f8"
        raw = np.ascontiguousarray(arr).astype(kind).tobytes()
        columns.append({
            "name": name,
            "dtype": kind,
            "shape": list(arr.shape),
            "offset": offset,
            "nbytes": len(raw),
        })
        chunks.append(raw)
        offset += len(raw)
    sidecar = {
        "columns": columns,
        "seconds_per_1000": draws.seconds_per_1000,
        "meta": draws.meta,
        "config": config or {},
    }
    (out / "draws.bin").write_bytes(b"".join(chunks))
    (out / "draws.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))
    return out


def load_draws(dirpath) -> GibbsDraws:
    """Reconstruct GibbsDraws from a draw directory; inverse of `save_draws`."""
    src = Path(dirpath)
    sidecar = json.loads((src / "draws.json").read_text())
    blob = (src / "draws.bin").read_bytes()
    fields: dict = {name: None for name in _DRAW_FIELDS}
    for col in sidecar["columns"]:
        raw = blob[col["offset"]:col["offset"] + col["nbytes"]]
        arr = np.frombuffer(raw, dtype=col["dtype"]).reshape(col["shape"]).copy()
        if col["dtype"] == "<i1":
            arr = arr.astype(np.int8)
        fields[col["name"]] = arr
    meta = dict(sidecar["meta"])
    if sidecar.get("config"):
        meta["config"] = sidecar["config"]
    return GibbsDraws(
        seconds_per_1000=float(sidecar["seconds_per_1000"]),
        meta=meta,
        **fields,
    )
