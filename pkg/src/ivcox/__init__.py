"""Presmoothing estimation of a Cox model with an endogenous discrete treatment."""
from .config import EstimatorConfig, RunConfig
from .coxph import CoxFit, fit_cox, naive_cox
from .dataset import Dataset
from .errors import ConfigError, DataError, IVCoxError, NumericalError
from .inference import bootstrap_ci, bootstrap_sd, normal_ci
from .pipeline import PresmoothingFit, estimate_naive, estimate_proposed
from .phi_solver import QuantileMap
from .simharness import DESIGNS, generate_design, run_monte_carlo

__all__ = [
    "ConfigError", "CoxFit", "DESIGNS", "DataError", "Dataset", "EstimatorConfig", "IVCoxError",
    "NumericalError", "PresmoothingFit", "QuantileMap", "RunConfig", "bootstrap_ci",
    "bootstrap_sd", "estimate_naive", "estimate_proposed", "fit_cox", "generate_design",
    "naive_cox", "normal_ci", "run_monte_carlo",
]
__version__ = "0.1.0"
