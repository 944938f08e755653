"""Online false discovery rate control by generalized alpha-investing."""

__version__ = "0.1.0"

from .core import (
    TOL,
    ConfigError,
    ContractViolation,
    DecisionHistory,
    NumericError,
    OnlineRule,
    RuleParams,
    StepOutcome,
    Violation,
    WealthLedger,
    advance,
    check_g1,
    check_g2,
    check_monotone,
    check_monotone_exhaustive,
    replay,
)
from .rules import RULE_IDS, RuleSpec, make_rule

__all__ = [
    "TOL",
    "ConfigError",
    "ContractViolation",
    "DecisionHistory",
    "NumericError",
    "OnlineRule",
    "RULE_IDS",
    "RuleParams",
    "RuleSpec",
    "StepOutcome",
    "Violation",
    "WealthLedger",
    "__version__",
    "advance",
    "check_g1",
    "check_g2",
    "check_monotone",
    "check_monotone_exhaustive",
    "make_rule",
    "replay",
]
