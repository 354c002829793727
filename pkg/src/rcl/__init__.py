"""Multi-treatment average treatment effect estimation with RCL and classic baselines."""

__version__ = "0.1.0"

from .data import DataError, ObservationSet, SplitIndex, TreatmentSpace, read_csv, relabel, split, validate, write_csv
from .estimators import AteMatrix, EstimatorSpec, LevelEstimate, ate_matrix, estimate_all_levels
from .learners import ClassifierSpec, FixedNuisance, NuisanceFit, RegressorSpec, fit_nuisances
from .metrics import aggregate, epsilon_ate_single, reduction_ratios
from .runner import ExperimentConfig, load_config, run
from .scores import ScoreKind, rcl_coefficients, rcl_coefficients_oracle, residual_moments, score_value, weight_A
from .simulate import DgpConfig, GroundTruth, corrupt_nuisances, generate
from .verify import PerturbationDirection, consistency_sweep, fd_orthogonality, mc_moment_check

__all__ = [
    "AteMatrix", "ClassifierSpec", "DataError", "DgpConfig", "EstimatorSpec", "ExperimentConfig", "FixedNuisance",
    "GroundTruth", "LevelEstimate", "NuisanceFit", "ObservationSet", "PerturbationDirection", "RegressorSpec",
    "ScoreKind", "SplitIndex", "TreatmentSpace", "aggregate", "ate_matrix", "consistency_sweep", "corrupt_nuisances",
    "epsilon_ate_single", "estimate_all_levels", "fd_orthogonality", "fit_nuisances", "generate", "load_config",
    "mc_moment_check", "rcl_coefficients", "rcl_coefficients_oracle", "read_csv", "reduction_ratios", "relabel",
    "residual_moments", "run", "score_value", "split", "validate", "weight_A", "write_csv",
]
