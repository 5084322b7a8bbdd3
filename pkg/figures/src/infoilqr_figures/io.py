"""Schema-validated loading of the experiment CSV outputs.

Three layouts are understood, distinguished by their columns:

- per-run convergence curves: ``iteration, cost, alpha, residual, rollouts,
  millis``,
- ensemble summaries: the same prefixed by ``seed`` (plus ``padded``),
- combined comparisons: additionally prefixed by ``scenario``.

Loading never mutates the source files; malformed inputs raise
``SchemaError`` naming the first missing column before any figure is
created.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import pandas as pd

CURVE_COLUMNS = ("iteration", "cost")
TRAJECTORY_REQUIRED = ("t", "x0", "u0", "z0")


class SchemaError(ValueError):
    """Input CSV does not match any documented schema."""


@dataclass(frozen=True)
class CurveSpec:
    """One convergence curve to draw: a labelled CSV source."""

    label: str
    source: str
    band: bool = True        # draw a mean +- std band when seeds are present
    color_index: Optional[int] = None


@dataclass
class CurveData:
    label: str
    iterations: "pd.Series"
    mean: "pd.Series"
    std: Optional["pd.Series"]
    color_index: Optional[int] = None


def _read_csv(path) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"{path}: file does not exist")
    try:
        frame = pd.read_csv(path)
    except pd.errors.EmptyDataError:
        raise SchemaError(f"{path}: empty file") from None
    if frame.empty:
        raise SchemaError(f"{path}: no data rows")
    return frame


def _require(frame: pd.DataFrame, columns, path) -> None:
    for column in columns:
        if column not in frame.columns:
            raise SchemaError(f"{path}: missing column '{column}'")


def _aggregate(label: str, frame: pd.DataFrame, band: bool, color_index) -> CurveData:
    if "seed" in frame.columns and frame["seed"].nunique() > 1:
        grouped = frame.groupby("iteration")["cost"]
        mean = grouped.mean()
        std = grouped.std(ddof=0) if band else None
        return CurveData(label, mean.index.to_series(), mean, std, color_index)
    ordered = frame.sort_values("iteration")
    return CurveData(label, ordered["iteration"], ordered["cost"], None, color_index)


def load_curves(spec: CurveSpec) -> list[CurveData]:
    """Load one source; a comparison CSV expands into one curve per scenario."""
    frame = _read_csv(spec.source)
    _require(frame, CURVE_COLUMNS, spec.source)
    if "scenario" in frame.columns:
        curves = []
        for scenario, block in frame.groupby("scenario", sort=False):
            label = scenario if spec.label == "" else f"{spec.label}{scenario}"
            curves.append(_aggregate(label, block, spec.band, spec.color_index))
        return curves
    return [_aggregate(spec.label or Path(spec.source).stem, frame, spec.band, spec.color_index)]


def load_trajectory(path) -> pd.DataFrame:
    frame = _read_csv(path)
    _require(frame, TRAJECTORY_REQUIRED, path)
    return frame
