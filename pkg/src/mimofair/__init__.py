"""Large-system ergodic group rates for cooperative multi-cell MIMO downlinks."""

__version__ = "0.1.0"

from .errors import ConfigError, InvalidInputError, MimoFairError, SolverFailure
from .scenario import (ClusterProblem, Scenario, build_cluster_problems, hex7_scenario,
                       two_cell_scenario)
from .asymptotics import (algorithm1, asymptotic_logdet, group_rates, solve_gamma,
                          weight_order, weighted_objective)
from .fairness import FairnessOptions, RateReport, UtilitySpec, solve_cluster, solve_fairness
from .montecarlo import empirical_logdet, empirical_mmse, validate

__all__ = [
    "__version__", "MimoFairError", "InvalidInputError", "ConfigError", "SolverFailure",
    "Scenario", "ClusterProblem", "build_cluster_problems", "two_cell_scenario", "hex7_scenario",
    "weight_order", "solve_gamma", "asymptotic_logdet", "weighted_objective", "algorithm1",
    "group_rates", "UtilitySpec", "FairnessOptions", "RateReport", "solve_fairness",
    "solve_cluster", "empirical_logdet", "empirical_mmse", "validate",
]
