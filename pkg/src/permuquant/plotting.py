"""Figures rendered next to a calibration report."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from .formats import CalibrationReport

STYLE = {
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
}


def _new_figure(width=6.0, height=3.2) -> Figure:
    fig = Figure(figsize=(width, height), dpi=120)
    FigureCanvasAgg(fig)
    return fig


def _save(fig: Figure, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    return path


def plot_layer_errors(report: CalibrationReport, path) -> Path:
    """Bar chart of identity-order vs deployed calibration error per layer."""
    layers = [lr for lr in report.layers if lr.ok]
    fig = _new_figure(max(4.0, 0.35 * len(layers) + 2.0))
    ax = fig.add_subplot()
    pos = np.arange(len(layers))
    ax.bar(pos - 0.2, [lr.e_orig for lr in layers], 0.4, label="original order", color="0.6")
    ax.bar(pos + 0.2, [lr.e_deployed for lr in layers], 0.4, label="deployed", color="C0")
    for p, lr in zip(pos, layers):
        if lr.accepted:
            ax.annotate(f"a={lr.alpha:g}", (p + 0.2, lr.e_deployed), ha="center", va="bottom",
                        fontsize=6, rotation=90)
    ax.set_xticks(pos, [lr.name for lr in layers], rotation=60, ha="right", fontsize=7)
    ax.set_ylabel("calibration output error")
    if layers and min(lr.e_deployed for lr in layers) > 0:
        ax.set_yscale("log")
    c = report.config
    ax.set_title(f"W{c.bits}A{c.bits}, g={c.group_size}, hadamard={'on' if c.hadamard else 'off'}")
    ax.legend()
    return _save(fig, path)


def plot_peak_ratio_cdf(report: CalibrationReport, path) -> Path:
    """Empirical CDF of the per-group extremal ratio over all layers."""
    chunks = [np.asarray(lr.peak_ratio) for lr in report.layers if lr.ok]
    peak_ratio = np.sort(np.concatenate(chunks or [np.zeros(0)]))
    fig = _new_figure(4.5, 3.2)
    ax = fig.add_subplot()
    if peak_ratio.size:
        ax.step(peak_ratio, np.arange(1, peak_ratio.size + 1) / peak_ratio.size, where="post")
    ax.set_xlabel("group peak ratio")
    ax.set_ylabel("fraction of groups")
    ax.set_ylim(0, 1.02)
    ax.grid(alpha=0.3)
    return _save(fig, path)


def plot_alpha_sweep(report: CalibrationReport, path) -> Path:
    """Calibration error of each alpha candidate, normalised by the original-order error."""
    fig = _new_figure(4.5, 3.2)
    ax = fig.add_subplot()
    for lr in report.layers:
        if not lr.ok or not lr.e_orig:
            continue
        alphas = [c["alpha"] for c in lr.candidates]
        rel = [c["error"] / lr.e_orig for c in lr.candidates]
        ax.plot(alphas, rel, marker="o", ms=2, lw=0.8, alpha=0.7)
    ax.axhline(1.0, color="k", lw=0.8, ls="--")
    ax.set_xlabel("alpha")
    ax.set_ylabel("error / original-order error")
    return _save(fig, path)


def render_report_figures(report: CalibrationReport, report_path) -> list[Path]:
    """Write the standard figures beside ``report_path`` and return their paths."""
    import matplotlib

    base = Path(report_path)
    stem = base.with_suffix("")
    with matplotlib.rc_context(STYLE):
        return [
            plot_layer_errors(report, f"{stem}_errors.png"),
            plot_peak_ratio_cdf(report, f"{stem}_peak_ratio_cdf.png"),
            plot_alpha_sweep(report, f"{stem}_alpha_sweep.png"),
        ]
