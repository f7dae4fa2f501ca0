"""Inequality-capped price discovery auction for one divisible token.

The mechanism sells a fixed supply at a single price while guaranteeing
that the Gini index of the resulting allocation never exceeds a
configured cap.  Submodules:

* :mod:`gini_auction.core` - the mechanism engine: Gini index, minimum
  inequality allocations, price search, investment bounds.
* :mod:`gini_auction.equilibrium` - strategy classification, allocation
  curves, best-response dynamics, and the full-information optimum.
* :mod:`gini_auction.data` - token sale dataset schema and observer
  generation.
* :mod:`gini_auction.service` - live auction HTTP service.
* :mod:`gini_auction.cli` - batch command line.
"""

from .core import (
    Allocation,
    BudgetProfile,
    MechanismInfeasible,
    MechanismParams,
    ParameterError,
    PriceSolution,
    derivative_bound,
    g_star,
    gini_index,
    investment_bounds,
    lorenz_points,
    max_price_k,
    min_gini_allocation,
    run_mechanism,
)
from .equilibrium import (
    Agent,
    AllocationCurve,
    EquilibriumReport,
    StrategyClass,
    StrategyKind,
    asymptotic_trial,
    best_response,
    build_allocation_curve,
    classify,
    first_best,
    iterate_equilibrium,
    repair_concave,
)

__version__ = "0.1.0"

__all__ = [
    "Allocation",
    "Agent",
    "AllocationCurve",
    "BudgetProfile",
    "EquilibriumReport",
    "MechanismInfeasible",
    "MechanismParams",
    "ParameterError",
    "PriceSolution",
    "StrategyClass",
    "StrategyKind",
    "asymptotic_trial",
    "best_response",
    "build_allocation_curve",
    "classify",
    "derivative_bound",
    "first_best",
    "g_star",
    "gini_index",
    "investment_bounds",
    "iterate_equilibrium",
    "lorenz_points",
    "max_price_k",
    "min_gini_allocation",
    "repair_concave",
    "run_mechanism",
]
