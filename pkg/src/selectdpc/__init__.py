"""Data-driven predictive control with per-step data selection.

Subpackages and modules:

* :mod:`selectdpc.trajectory_data` trajectory windows, Hankel blocks, dataset I/O
* :mod:`selectdpc.predictor` explicit least-squares predictor
* :mod:`selectdpc.qp` convex QP solver
* :mod:`selectdpc.deepc` the regularised DeePC problem
* :mod:`selectdpc.selection` norm, manifold and random data selection
* :mod:`selectdpc.isomap` Isomap embedding
* :mod:`selectdpc.controller` Select-DPC and the baseline controllers
* :mod:`selectdpc.plants` simulated plants
* :mod:`selectdpc.harness` configs, data generation, experiments and the CLI
"""
__version__ = "0.1.0"

from .controller import (FullDeePC, OuterLoopSettings, SelectDPC, TimeWindowedDeePC,  # noqa: E402
                         combination_profile, run_closed_loop)
from .deepc import ConfigError, DeePCController, DPCConfig  # noqa: E402
from .selection import SelectionMethod  # noqa: E402
from .trajectory_data import Dataset, Trajectory, extract_trajectories  # noqa: E402

__all__ = [
    "ConfigError", "DPCConfig", "Dataset", "DeePCController", "FullDeePC", "OuterLoopSettings",
    "SelectDPC", "SelectionMethod", "TimeWindowedDeePC", "Trajectory", "combination_profile",
    "extract_trajectories", "run_closed_loop", "__version__",
]
