"""Figure rendering for forecasts, studies, and the quadrature table."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")  # file output only, no display server in scope

import matplotlib.pyplot as plt
import numpy as np

__all__ = [
    "render_forecast_bands",
    "render_study_rows",
    "render_quad_decay",
]


def render_forecast_bands(path, grid_points, bands, observed=None, title=None):
    """One forecast curve with its pointwise and simultaneous bands."""
    x = np.asarray(grid_points, dtype=float)
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.fill_between(x, bands.simultaneous_lower, bands.simultaneous_upper,
                    color="0.85", label="simultaneous")
    ax.fill_between(x, bands.pointwise_lower, bands.pointwise_upper,
                    color="0.65", label="pointwise")
    ax.plot(x, bands.mean, color="k", lw=1.5, label="forecast")
    if observed is not None:
        pts, vals = observed
        ax.plot(pts, vals, "o", color="C3", ms=4, label="last observed")
    ax.set_xlabel("domain")
    ax.set_ylabel("value")
    if title:
        ax.set_title(title)
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_study_rows(path, rows, metric="rmsfe"):
    """Average metric by method, one panel per horizon."""
    keep = [r for r in rows if r.metric == metric]
    if not keep:
        raise ValueError(f"no rows with metric {metric!r}")
    horizons = sorted({r.horizon for r in keep})
    methods = sorted({r.method for r in keep})
    fig, axes = plt.subplots(1, len(horizons), figsize=(4 * len(horizons), 3.5),
                             squeeze=False)
    for ax, h in zip(axes[0], horizons):
        means = []
        for m in methods:
            vals = [r.value for r in keep if r.method == m and r.horizon == h]
            means.append(np.mean(vals) if vals else np.nan)
        ax.bar(range(len(methods)), means, color="0.6")
        ax.set_xticks(range(len(methods)))
        ax.set_xticklabels(methods, rotation=45, ha="right", fontsize=8)
        ax.set_title(f"h = {h}")
        ax.set_ylabel(metric)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_quad_decay(path, m_list, curves):
    """Median quadrature error against grid size, one line per labeled case."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, vals in curves.items():
        ax.plot(m_list, vals, "o-", label=label)
    ax.set_xlabel("grid size")
    ax.set_ylabel("median error")
    ax.set_yscale("log")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
