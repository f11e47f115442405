"""Figure rendering for run artifacts.

The ``report`` CLI path scans a run directory for known artifacts (metrics
tables, convergence logs, KPI comparisons, models) and renders one PNG per
artifact next to a small summary CSV. Figures are deliberately plain
matplotlib; they exist so a run can be eyeballed without loading anything
into a notebook.
"""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

from .model import InvalidInputError  # noqa: E402

_SAVE_KW = {"dpi": 110, "bbox_inches": "tight"}


def _read_csv(path: Path) -> tuple[list[str], list[list[str]]]:
    lines = path.read_text().strip().split("\n")
    header = lines[0].split(",")
    rows = [line.split(",") for line in lines[1:]]
    return header, rows


def render_metrics_figure(metrics_csv: Path, out_png: Path) -> None:
    """Grouped bars of MAE/RMSE per model and split from a metrics table."""
    header, rows = _read_csv(metrics_csv)
    idx = {name: i for i, name in enumerate(header)}
    models = sorted({r[idx["model"]] for r in rows})
    splits = ("train", "validation", "test")
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    for ax, metric in zip(axes, ("mae", "rmse")):
        width = 0.8 / len(splits)
        x = np.arange(len(models))
        for k, split in enumerate(splits):
            vals = []
            for m in models:
                match = [r for r in rows if r[idx["model"]] == m and r[idx["set"]] == split]
                vals.append(float(match[0][idx[metric]]) if match else np.nan)
            ax.bar(x + k * width, vals, width, label=split)
        ax.set_xticks(x + width)
        ax.set_xticklabels(models, rotation=20, ha="right")
        ax.set_ylabel(f"{metric.upper()} (min)")
        ax.legend(fontsize=8)
    fig.suptitle("Forecast error by model and split")
    fig.savefig(out_png, **_SAVE_KW)
    plt.close(fig)


def render_convergence_figure(convergence_csv: Path, out_png: Path) -> None:
    header, rows = _read_csv(convergence_csv)
    idx = {name: i for i, name in enumerate(header)}
    gens = [int(r[idx["generation"]]) for r in rows]
    fig, axes = plt.subplots(2, 2, figsize=(9, 6), sharex=True)
    panels = (
        ("best_travel", "travel cost"),
        ("best_tardiness", "tardiness (min)"),
        ("best_overtime", "overtime (min)"),
        ("max_served", "served"),
    )
    for ax, (col, label) in zip(axes.ravel(), panels):
        ax.plot(gens, [float(r[idx[col]]) for r in rows])
        ax.set_ylabel(label)
        ax.set_xlabel("generation")
    fig.suptitle("Solver convergence")
    fig.tight_layout()
    fig.savefig(out_png, **_SAVE_KW)
    plt.close(fig)


def render_kpi_figure(monthly_csv: Path, out_png: Path) -> None:
    """Per-strategy bars for the monthly KPI summary."""
    header, rows = _read_csv(monthly_csv)
    idx = {name: i for i, name in enumerate(header)}
    strategies = [r[idx["strategy"]] for r in rows]
    metrics = ("completion_rate", "utilization", "operators_used", "overtime")
    fig, axes = plt.subplots(1, len(metrics), figsize=(3.2 * len(metrics), 3.6))
    for ax, metric in zip(axes, metrics):
        vals = [float(r[idx[metric]]) for r in rows]
        ax.bar(strategies, vals, color=["#4477aa", "#ee6677", "#228833"][: len(rows)])
        ax.set_title(metric.replace("_", " "))
        ax.tick_params(axis="x", rotation=15)
    fig.suptitle("Monthly KPI comparison by duration strategy")
    fig.tight_layout()
    fig.savefig(out_png, **_SAVE_KW)
    plt.close(fig)


def render_daily_kpi_figure(daily_csvs: dict[str, Path], out_png: Path) -> None:
    fig, axes = plt.subplots(1, 2, figsize=(10, 4), sharex=True)
    for strategy in sorted(daily_csvs):
        header, rows = _read_csv(daily_csvs[strategy])
        idx = {name: i for i, name in enumerate(header)}
        days = [int(r[idx["day"]]) for r in rows]
        axes[0].plot(days, [float(r[idx["completion_rate"]]) for r in rows],
                     marker="o", ms=3, label=strategy)
        axes[1].plot(days, [float(r[idx["utilization"]]) for r in rows],
                     marker="o", ms=3, label=strategy)
    axes[0].set_ylabel("completion rate")
    axes[1].set_ylabel("utilization")
    for ax in axes:
        ax.set_xlabel("day")
        ax.legend(fontsize=8)
    fig.suptitle("Daily KPIs by duration strategy")
    fig.tight_layout()
    fig.savefig(out_png, **_SAVE_KW)
    plt.close(fig)


def render_importance_figure(model_json: Path, out_png: Path, top: int = 15) -> None:
    from .forecast import ForecastModel

    model = ForecastModel.load(model_json)
    importances = model.importances()
    fig, axes = plt.subplots(1, len(importances),
                             figsize=(5.5 * len(importances), 4.5), squeeze=False)
    for ax, (name, scores) in zip(axes[0], sorted(importances.items())):
        ranked = sorted(scores.items(), key=lambda kv: kv[1], reverse=True)[:top]
        labels = [k for k, _ in ranked][::-1]
        vals = [v for _, v in ranked][::-1]
        ax.barh(labels, vals)
        ax.set_title(f"gain importance: {name}")
        ax.tick_params(labelsize=7)
    fig.tight_layout()
    fig.savefig(out_png, **_SAVE_KW)
    plt.close(fig)


def render_run(run_dir: str | Path, out_dir: str | Path) -> list[str]:
    """Render every recognised artifact in ``run_dir``; returns the list of
    figures written (also recorded in report_summary.csv)."""
    run = Path(run_dir)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not run.is_dir():
        raise InvalidInputError(f"not a run directory: {run}")
    written: list[str] = []

    metrics = run / "metrics.csv"
    if metrics.exists():
        render_metrics_figure(metrics, out / "metrics.png")
        written.append("metrics.png")
    for conv in sorted(run.glob("convergence*.csv")):
        png = out / (conv.stem + ".png")
        render_convergence_figure(conv, png)
        written.append(png.name)
    monthly = run / "kpi_monthly.csv"
    if monthly.exists():
        render_kpi_figure(monthly, out / "kpi_monthly.png")
        written.append("kpi_monthly.png")
    daily = {
        p.stem.replace("kpi_daily_", ""): p for p in sorted(run.glob("kpi_daily_*.csv"))
    }
    if daily:
        render_daily_kpi_figure(daily, out / "kpi_daily.png")
        written.append("kpi_daily.png")
    model = run / "model.json"
    if model.exists():
        render_importance_figure(model, out / "importance.png")
        written.append("importance.png")

    summary = out / "report_summary.csv"
    lines = ["figure,source"]
    sources = {
        "metrics.png": "metrics.csv",
        "kpi_monthly.png": "kpi_monthly.csv",
        "kpi_daily.png": "kpi_daily_*.csv",
        "importance.png": "model.json",
    }
    for name in written:
        src = sources.get(name, name.replace(".png", ".csv"))
        lines.append(f"{name},{src}")
    summary.write_text("\n".join(lines) + "\n")
    return written
