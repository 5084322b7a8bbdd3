"""Render convergence comparisons and trajectory panels from experiment CSVs.

Styling is fixed (stable color cycle, no timestamps), so identical inputs
produce identical figure content.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .io import CurveData, CurveSpec, load_curves, load_trajectory

_COLORS = ("tab:blue", "tab:orange", "tab:green", "tab:red", "tab:purple", "tab:brown")


def _color(index: int) -> str:
    return _COLORS[index % len(_COLORS)]


def plot_convergence(
    curve_specs: Sequence[CurveSpec],
    output_path,
    log_scale: bool = False,
    zoom_window: Optional[tuple] = None,
) -> Path:
    """Cost-vs-iteration curves with optional ensemble bands and zoom inset.

    All sources are validated before the figure is created, so a malformed
    CSV never leaves a file behind.  Returns the written path.
    """
    curves: list[CurveData] = []
    for spec in curve_specs:
        curves.extend(load_curves(spec))
    if not curves:
        raise ValueError("nothing to plot")

    fig, ax = plt.subplots(figsize=(7.0, 4.5))
    for index, curve in enumerate(curves):
        color = _color(curve.color_index if curve.color_index is not None else index)
        ax.plot(curve.iterations, curve.mean, label=curve.label, color=color, linewidth=1.8)
        if curve.std is not None:
            ax.fill_between(
                curve.iterations,
                curve.mean - curve.std,
                curve.mean + curve.std,
                color=color,
                alpha=0.2,
                linewidth=0,
            )
    ax.set_xlabel("iteration")
    ax.set_ylabel("cost")
    if log_scale:
        ax.set_yscale("log")
    ax.legend(loc="upper right", fontsize=9)
    ax.grid(alpha=0.3)

    if zoom_window is not None:
        lo, hi = zoom_window
        inset = ax.inset_axes([0.45, 0.45, 0.5, 0.4])
        for index, curve in enumerate(curves):
            color = _color(curve.color_index if curve.color_index is not None else index)
            mask = (curve.iterations >= lo) & (curve.iterations <= hi)
            inset.plot(curve.iterations[mask], curve.mean[mask], color=color, linewidth=1.2)
        inset.set_xlim(lo, hi)
        inset.tick_params(labelsize=7)
        inset.grid(alpha=0.3)

    output_path = Path(output_path)
    output_path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(output_path, dpi=150)
    plt.close(fig)
    return output_path


def plot_trajectory(trajectory_csv, output_path) -> Path:
    """State, control, and measurement time series of one final nominal."""
    frame = load_trajectory(trajectory_csv)
    state_cols = [c for c in frame.columns if c.startswith("x")]
    control_cols = [c for c in frame.columns if c.startswith("u")]
    meas_cols = [c for c in frame.columns if c.startswith("z")]

    fig, axes = plt.subplots(3, 1, figsize=(7.0, 7.5), sharex=True)
    for column in state_cols:
        axes[0].plot(frame["t"], frame[column], label=column, linewidth=1.4)
    axes[0].set_ylabel("state")
    axes[0].legend(fontsize=8)
    axes[0].grid(alpha=0.3)
    for column in control_cols:
        axes[1].plot(frame["t"], frame[column], label=column, linewidth=1.4)
    axes[1].set_ylabel("control")
    axes[1].legend(fontsize=8)
    axes[1].grid(alpha=0.3)
    for column in meas_cols:
        axes[2].plot(frame["t"], frame[column], label=column, linewidth=1.4)
    axes[2].set_ylabel("measurement")
    axes[2].set_xlabel("timestep")
    axes[2].legend(fontsize=8)
    axes[2].grid(alpha=0.3)

    output_path = Path(output_path)
    output_path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(output_path, dpi=150)
    plt.close(fig)
    return output_path
