"""Hierarchical multitask learning.

Joint regression over super-tasks (e.g. climate variables), each made of
sub-tasks (e.g. locations) whose weight vectors are coupled through sparse
precision matrices that share their support across super-tasks.
"""

__version__ = "0.1.0"

from .core import (
    DomainError,
    FitReport,
    HierarchicalDataset,
    HmtlModel,
    Hyperparams,
    InvalidInputError,
    SolverError,
    SubTaskData,
    hmtl_objective,
    predict,
    rmse,
    sample_covariance,
)
from .driver import DriverConfig, fit_hmtl, fit_mssl, load_model, save_model
from .estimators import (
    BestESMRegressor,
    HMTLRegressor,
    MMARegressor,
    MSSLRegressor,
    OLSRegressor,
    S2M2RRegressor,
)
from .omega import AdmmConfig, solve_omega_step
from .theta import ThetaSolveConfig, solve_theta_step

__all__ = [
    "AdmmConfig", "BestESMRegressor", "DomainError", "DriverConfig", "FitReport",
    "HMTLRegressor", "HierarchicalDataset", "HmtlModel", "Hyperparams", "InvalidInputError",
    "MMARegressor", "MSSLRegressor", "OLSRegressor", "S2M2RRegressor", "SolverError",
    "SubTaskData", "ThetaSolveConfig", "fit_hmtl", "fit_mssl", "hmtl_objective", "load_model",
    "predict", "rmse", "sample_covariance", "save_model", "solve_omega_step", "solve_theta_step",
]
