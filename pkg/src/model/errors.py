"""
Error types shared by the solver packages
Each error carries a short `kind` tag so reports and exit codes can tell failures apart
"""

from typing import Optional


class ModelError(ValueError):
    """Base class for all model errors."""

    kind = "model-error"

    def __init__(self, message: str, kind: Optional[str] = None):
        super().__init__(message)
        if kind is not None:
            self.kind = kind


class MarketValidationError(ModelError):
    """Market violates one of its invariants (payoff-sign, prior-range, cohort-order, negative-rate)."""

    kind = "invalid-market"


class DegenerateRateError(ModelError):
    kind = "rate-degenerate"


class StepTooLargeError(ModelError):
    kind = "step-too-large"


class UnsupportedPolicyError(ModelError):
    kind = "unsupported-policy"


class HorizonTooShortError(ModelError):
    kind = "horizon-too-short"


class InfeasibleReleaseError(ModelError):
    kind = "infeasible-release"


class ConstraintViolationError(ModelError):
    kind = "constraint-violation"


class ConfigError(ModelError):
    kind = "config-error"
