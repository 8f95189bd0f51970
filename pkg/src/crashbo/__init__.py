"""Bayesian optimization under crash constraints.

A failed experiment returns no objective or constraint values, only a failure
label.  The constraint is modeled with a Gaussian process conditioned on both
real-valued observations and failure labels, whose threshold is learned as a
hyperparameter, and the objective is optimized with constrained expected
improvement.
"""

__version__ = "0.1.0"

from .core_math import KernelHyper, NumericalError, UnivariateGaussian
from .gp_regression import GPDataset, GPModel
from .gpcr import EPOptions, GPCRHyper, GPCRModel, HybridDataset
from .hyperopt import BetaPrior, GammaPrior, MapOptions, PriorSpec, map_fit_gpcr, map_fit_objective
from .acquisition import AcquisitionContext, AcquisitionOptions, best_guess, eic_value, expected_improvement, maximize
from .benchmarks import BenchmarkSpec, HybridObservation, get_benchmark
from .baselines import PenaltyStrategy, penalize
from .config import ExperimentConfig, load_config
from .harness import aggregate, run_baseline, run_eic2, run_experiment, simple_regret

__all__ = [
    "AcquisitionContext", "AcquisitionOptions", "BenchmarkSpec", "BetaPrior", "EPOptions",
    "ExperimentConfig", "GPCRHyper", "GPCRModel", "GPDataset", "GPModel", "GammaPrior",
    "HybridDataset", "HybridObservation", "KernelHyper", "MapOptions", "NumericalError",
    "PenaltyStrategy", "PriorSpec", "UnivariateGaussian", "aggregate", "best_guess",
    "eic_value", "expected_improvement", "get_benchmark", "load_config", "map_fit_gpcr",
    "map_fit_objective", "maximize", "penalize", "run_baseline", "run_eic2",
    "run_experiment", "simple_regret",
]
