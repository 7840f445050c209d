"""Game-option pricing and hedging on a defaultable lattice."""

from .errors import (
    AuditFailure,
    BarrierViolation,
    DensityNotPositive,
    EmptyGrid,
    GameHedgeError,
    InvalidParams,
    MismatchedInstances,
    NegativeDividend,
    NoContraction,
    NuOutOfRange,
    ParamsInvalid,
    PicardDivergence,
    PreconditionViolated,
    ScenarioError,
    TooLarge,
    UnknownNode,
)
from .lattice import (
    LatticeParams,
    MarketParams,
    Node,
    NodeField,
    Lattice,
    StepContext,
    Transition,
    build_lattice,
)
from .drivers import (
    AmbiguityFamily,
    AuditReport,
    AuditSpec,
    Driver,
    audit_driver,
    audit_family,
    make_builtin_driver,
    sup_driver,
    theta_coefficients,
)
from .bsde import (
    BsdeSolution,
    buyer_european_price,
    comparison_region_ok,
    implicit_continuation,
    linear_price_oracle,
    require_contraction,
    solve_bsde,
    terminal_layers,
)
from .drbsde import (
    DrbsdeSolution,
    DynkinResult,
    PayoffSpec,
    dynkin_bruteforce,
    enumerate_stopping_rules,
    price_at_node,
    solve_drbsde,
    solve_with_dividends,
    stopped_pair_values,
)
from .hedging import (
    BuyerHedge,
    StoppingRule,
    Strategy,
    WealthReport,
    buyer_superhedge,
    extract_strategy,
    integrands_of,
    rule_from_flags,
    sigma_bar_rule,
    simulate_wealth,
    stopping_time,
)
from .robust import (
    InterchangeReport,
    RobustResult,
    TOL_ROBUST,
    default_ambiguity_family,
    frozen_control_driver,
    interchange_check,
    robust_buyer_price,
    robust_certificate,
    robust_seller_price,
)
from .scenario import (
    BuiltScenario,
    Scenario,
    parse_payoff_expression,
)
from .validation import (
    AprioriReport,
    EstimateParams,
    OdeCompareReport,
    apriori_check,
    ode_compare,
)

__all__ = [
    "AmbiguityFamily",
    "AprioriReport",
    "AuditFailure",
    "AuditReport",
    "AuditSpec",
    "BarrierViolation",
    "BsdeSolution",
    "BuiltScenario",
    "BuyerHedge",
    "DensityNotPositive",
    "DrbsdeSolution",
    "Driver",
    "DynkinResult",
    "EmptyGrid",
    "EstimateParams",
    "GameHedgeError",
    "InterchangeReport",
    "InvalidParams",
    "Lattice",
    "LatticeParams",
    "MarketParams",
    "MismatchedInstances",
    "NegativeDividend",
    "NoContraction",
    "Node",
    "NodeField",
    "NuOutOfRange",
    "OdeCompareReport",
    "ParamsInvalid",
    "PayoffSpec",
    "PicardDivergence",
    "PreconditionViolated",
    "RobustResult",
    "Scenario",
    "ScenarioError",
    "StepContext",
    "StoppingRule",
    "Strategy",
    "TOL_ROBUST",
    "TooLarge",
    "Transition",
    "UnknownNode",
    "WealthReport",
    "apriori_check",
    "audit_driver",
    "audit_family",
    "build_lattice",
    "buyer_european_price",
    "buyer_superhedge",
    "comparison_region_ok",
    "default_ambiguity_family",
    "dynkin_bruteforce",
    "enumerate_stopping_rules",
    "extract_strategy",
    "frozen_control_driver",
    "implicit_continuation",
    "integrands_of",
    "interchange_check",
    "linear_price_oracle",
    "make_builtin_driver",
    "ode_compare",
    "parse_payoff_expression",
    "price_at_node",
    "require_contraction",
    "robust_buyer_price",
    "robust_certificate",
    "robust_seller_price",
    "rule_from_flags",
    "sigma_bar_rule",
    "simulate_wealth",
    "solve_bsde",
    "solve_drbsde",
    "solve_with_dividends",
    "stopped_pair_values",
    "stopping_time",
    "sup_driver",
    "terminal_layers",
    "theta_coefficients",
]
