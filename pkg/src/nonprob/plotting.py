"""PNG figures for Monte Carlo summaries."""

from __future__ import annotations

import math
from pathlib import Path

from matplotlib.figure import Figure

from .simharness.engine import McSummary

_PNG_META = {"Software": None}


def _by_estimator(summary: McSummary):
    series = {}
    for r in summary.rows:
        series.setdefault(r.estimator, []).append(r)
    return series


def plot_bias(summary: McSummary, path) -> Path:
    """Bias against N with +-2 MC standard error bars."""
    fig = Figure(figsize=(6, 4))
    ax = fig.subplots()
    for name, rows in _by_estimator(summary).items():
        ns = [r.N for r in rows]
        ax.errorbar(ns, [r.bias for r in rows], yerr=[2 * r.mc_se for r in rows], marker="o", capsize=3, label=name)
    ax.axhline(0.0, color="grey", lw=0.8)
    if len(summary.config.grid) > 1:
        ax.set_xscale("log")
    ax.set_xlabel("N")
    ax.set_ylabel("bias (mean scale)")
    ax.set_title(summary.scenario)
    ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(path, metadata=_PNG_META)
    return Path(path)


def plot_rmse(summary: McSummary, path) -> Path:
    fig = Figure(figsize=(6, 4))
    ax = fig.subplots()
    for name, rows in _by_estimator(summary).items():
        ax.plot([r.N for r in rows], [r.rmse for r in rows], marker="o", label=name)
    if len(summary.config.grid) > 1:
        ax.set_xscale("log")
        ax.set_yscale("log")
    ax.set_xlabel("N")
    ax.set_ylabel("RMSE")
    ax.set_title(summary.scenario)
    ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(path, metadata=_PNG_META)
    return Path(path)


def plot_coverage(summary: McSummary, path):
    """Empirical interval coverage per estimator and N; None when no estimator has a variance."""
    rows = [r for r in summary.rows if not math.isnan(r.coverage)]
    if not rows:
        return None
    fig = Figure(figsize=(6, 4))
    ax = fig.subplots()
    labels = [f"{r.estimator}\nN={r.N}" for r in rows]
    ax.bar(range(len(rows)), [r.coverage for r in rows], color="tab:blue")
    ax.axhline(summary.config.level, color="tab:red", ls="--", label=f"nominal {summary.config.level:g}")
    ax.set_xticks(range(len(rows)), labels, fontsize="small")
    ax.set_ylim(min(0.8, min(r.coverage for r in rows) - 0.02), 1.0)
    ax.set_ylabel("coverage")
    ax.set_title(summary.scenario)
    ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(path, metadata=_PNG_META)
    return Path(path)


def render_summary(summary: McSummary, out_dir) -> list:
    out_dir = Path(out_dir)
    written = [
        plot_bias(summary, out_dir / f"{summary.scenario}_bias.png"),
        plot_rmse(summary, out_dir / f"{summary.scenario}_rmse.png"),
    ]
    cov = plot_coverage(summary, out_dir / f"{summary.scenario}_coverage.png")
    if cov is not None:
        written.append(cov)
    return written
