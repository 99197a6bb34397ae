"""Regenerate benchmark figures and tables from harness CSV outputs.

Everything here is a pure function of input CSV files and a seed: no metric
is recomputed, no network is touched.
"""

from .results import ResultsTable
from .plots import (plot_multistep_rmse, plot_rmse_vs_gamma,
                    project_representations)
from .tables import render_selection_table

__all__ = ["ResultsTable", "plot_rmse_vs_gamma", "plot_multistep_rmse",
           "project_representations", "render_selection_table"]
__version__ = "0.1.0"
