"""Plotting companion for infoilqr experiment CSVs.

Consumes only the documented CSV schemas (convergence, summary, compare,
trajectory); the experiment package runs without this one installed and
vice versa.
"""

from .io import CurveSpec, SchemaError, load_curves, load_trajectory
from .plots import plot_convergence, plot_trajectory

__all__ = [
    "CurveSpec",
    "SchemaError",
    "load_curves",
    "load_trajectory",
    "plot_convergence",
    "plot_trajectory",
]

__version__ = "0.1.0"
