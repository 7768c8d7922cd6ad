"""Discovering the neighbours of an unobserved spreader node in a stochastic
meta-population SIR epidemic from per-node case time series."""

from .discriminate import Thresholds, chauvenet_statistic, classify, kolmogorov_critical, ks_statistic
from .estimate import EstimatedParams, EstimationConfig, convert_deltaJ_to_I, estimate_parameters
from .evaluate import TrialConfig, optimal_threshold, roc_sweep, run_batch
from .moments import coefficients, propagate_moments, zscore_series
from .network import Mobility, Network, gamma_from_topology, generate_er, initial_populations
from .simulate import Dataset, Scenario, TransmissionParams, synthesize_dataset

__all__ = [
    "Dataset",
    "EstimatedParams",
    "EstimationConfig",
    "Mobility",
    "Network",
    "Scenario",
    "Thresholds",
    "TransmissionParams",
    "TrialConfig",
    "chauvenet_statistic",
    "classify",
    "coefficients",
    "convert_deltaJ_to_I",
    "estimate_parameters",
    "gamma_from_topology",
    "generate_er",
    "initial_populations",
    "kolmogorov_critical",
    "ks_statistic",
    "optimal_threshold",
    "propagate_moments",
    "roc_sweep",
    "run_batch",
    "synthesize_dataset",
    "zscore_series",
]
