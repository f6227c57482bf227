"""Sequential aggregation of specialized (sleeping) experts."""

from expertagg.core import (
    Bounds,
    ForecastRound,
    LossSpec,
    aggregate_prediction,
    condition,
    loss_eval,
    loss_subgradient,
)
from expertagg.rules import (
    EWA,
    FixedShare,
    RuleState,
    Specialist,
    make_rule,
)

__version__ = "0.1.0"

__all__ = [
    "Bounds",
    "EWA",
    "FixedShare",
    "ForecastRound",
    "LossSpec",
    "RuleState",
    "Specialist",
    "aggregate_prediction",
    "condition",
    "loss_eval",
    "loss_subgradient",
    "make_rule",
]
