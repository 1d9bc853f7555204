"""Bayesian neural-network surrogates for stochastic boundary-value problems."""

from .config import ExperimentConfig, preset_config
from .ffn import FfnArch, FourierFeatureNet, MultiHeadNet
from .gmm import GaussianMixture
from .gp import GpSpec, Kernel, MeanFn, kl_dimension
from .numerics import Rng
from .posterior import Posterior
from .problem import ProblemSpec, SensorLayout, SnapshotDataset
from .solver import BayesianPdeSolver

__version__ = "0.1.0"

__all__ = [
    "BayesianPdeSolver",
    "ExperimentConfig",
    "FfnArch",
    "FourierFeatureNet",
    "GaussianMixture",
    "GpSpec",
    "Kernel",
    "MeanFn",
    "MultiHeadNet",
    "Posterior",
    "ProblemSpec",
    "Rng",
    "SensorLayout",
    "SnapshotDataset",
    "kl_dimension",
    "preset_config",
]
