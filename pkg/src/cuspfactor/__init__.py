"""Cumulative and exchangeable shrinkage priors for sparse Bayesian factor models."""
from .distributions import ParameterError, make_rng
from .factor_model import Dataset, ScenarioSpec, simulate_dataset
from .mcmc import ChainOutput, NumericalError, SamplerConfig, run_chain

__all__ = [
    "ChainOutput",
    "Dataset",
    "NumericalError",
    "ParameterError",
    "SamplerConfig",
    "ScenarioSpec",
    "make_rng",
    "run_chain",
    "simulate_dataset",
]
__version__ = "0.1.0"
