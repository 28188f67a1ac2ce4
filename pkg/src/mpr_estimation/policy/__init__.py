"""Power-allocation policies: greedy, decoupled thresholds, finite and infinite horizon."""

from .discretize import Discretization, discretize_states, kmeans_frobenius
from .dp import (FiniteHorizonPlan, NotConvergedError, finite_horizon_dp,
                 value_iteration)
from .greedy import (RegionThresholds, StageCost, baseline_simple_rc,
                     baseline_simple_tx, corollary_regions, decoupled_surrogate,
                     first_argmin, greedy_action, simple_tx_actions,
                     simple_tx_channel, thresholds)
from .table import PolicyTable, SolverConfig, dumps, load, loads, lookup, save

__all__ = [
    "Discretization", "FiniteHorizonPlan", "NotConvergedError", "PolicyTable",
    "RegionThresholds", "SolverConfig", "StageCost", "baseline_simple_rc",
    "baseline_simple_tx", "corollary_regions", "decoupled_surrogate",
    "discretize_states", "dumps", "finite_horizon_dp", "first_argmin",
    "greedy_action", "kmeans_frobenius", "load", "loads", "lookup", "save",
    "simple_tx_actions", "simple_tx_channel", "thresholds", "value_iteration",
]
