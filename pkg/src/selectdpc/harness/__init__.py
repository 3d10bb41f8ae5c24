"""Experiment configuration, data generation, sweeps and the command line."""
from .config import ExperimentConfig, load_config, shipped_configs
from .data import generate_data, generate_demonstrations, holdout_dataset
from .experiments import OverlapError, contrast_curve, cost_sweep, isomap_grid, residual_sweep

__all__ = ["ExperimentConfig", "OverlapError", "contrast_curve", "cost_sweep", "generate_data",
           "generate_demonstrations", "holdout_dataset", "isomap_grid", "load_config", "residual_sweep",
           "shipped_configs"]
