"""Scalable Bayesian pairwise preference learning.

``GPPL`` learns one utility function from pairwise labels; ``CrowdGPPL``
adds per-user latent components on top of a shared consensus. Both are
trained by stochastic variational inference over inducing points.
"""
from .baselines import GPPLPerUser
from .crowd import CrowdGPPL, CrowdHyperparams, CrowdState, component_variance, crowd_fit, crowd_predict
from .data import PreferenceDataset, SimulationConfig, load_csv, save_csv, simulate_crowd, split_dataset
from .evaluation import accuracy, cross_entropy, kendall_tau, match_components, per_user_consensus
from .exceptions import (
    CrowdPrefError,
    DataLoadError,
    InternalConsistencyError,
    InvalidConfigError,
    InvalidInputError,
    NumericalFailure,
)
from .gppl import GPPL, GPPLState, gppl_fit, gppl_predict, gppl_predict_pairs
from .kernels import KernelConfig
from .svi import SviSchedule

__version__ = "0.1.0"

__all__ = [
    "GPPL",
    "GPPLState",
    "GPPLPerUser",
    "CrowdGPPL",
    "CrowdHyperparams",
    "CrowdState",
    "KernelConfig",
    "SviSchedule",
    "PreferenceDataset",
    "SimulationConfig",
    "simulate_crowd",
    "split_dataset",
    "load_csv",
    "save_csv",
    "gppl_fit",
    "gppl_predict",
    "gppl_predict_pairs",
    "crowd_fit",
    "crowd_predict",
    "component_variance",
    "accuracy",
    "cross_entropy",
    "kendall_tau",
    "match_components",
    "per_user_consensus",
    "CrowdPrefError",
    "InvalidInputError",
    "InvalidConfigError",
    "NumericalFailure",
    "InternalConsistencyError",
    "DataLoadError",
]
