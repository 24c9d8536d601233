"""
Market Primitives
Payoffs, prior, evidence rates and discount cohorts, with validity checks
"""

import bisect
import logging
from itertools import accumulate
from typing import Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from model.errors import MarketValidationError

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]


class Cohort(BaseModel):
    """Agents sharing one discount rate."""

    model_config = ConfigDict(frozen=True)

    discount: float = Field(gt=0, allow_inf_nan=False)
    mass: float = Field(gt=0, allow_inf_nan=False)


class Market(BaseModel):
    """
    All model primitives.

    Cohorts are ordered from least to most patient; the cumulative
    masses and the marginal cohort and discount at a stock q derive from them.
    """

    model_config = ConfigDict(frozen=True)

    v_good: float = Field(allow_inf_nan=False)
    v_bad: float = Field(allow_inf_nan=False)
    prior: float = Field(allow_inf_nan=False)
    rate_good: float = Field(allow_inf_nan=False)
    rate_bad: float = Field(allow_inf_nan=False)
    cohorts: Tuple[Cohort, ...] = Field(min_length=1)

    @property
    def n(self) -> int:
        return len(self.cohorts)

    @property
    def total_mass(self) -> float:
        return self.cumulative_masses[-1]

    @property
    def cumulative_masses(self) -> Tuple[float, ...]:
        """(F_1, ..., F_n)."""
        return tuple(accumulate(c.mass for c in self.cohorts))

    def cohort(self, index: int) -> Cohort:
        """Cohort by 1-based index."""
        if not 1 <= index <= self.n:
            raise IndexError(f"cohort index {index} outside 1..{self.n}")
        return self.cohorts[index - 1]

    def cumulative_mass(self, index: int) -> float:
        """Mass of cohorts 1..i (0 for i = 0)."""
        if index <= 0:
            return 0.0
        return self.cumulative_masses[min(index, self.n) - 1]

    def cohort_at(self, q: float) -> int:
        """Marginal cohort i(q): the cohort whose agents invest once q agents have."""
        return min(bisect.bisect_right(self.cumulative_masses, q) + 1, self.n)

    def discount_at(self, q: float) -> float:
        """Marginal discount rate r(q)."""
        return self.cohort(self.cohort_at(q)).discount


def validate(market: Market) -> None:
    """
    Check the standing assumptions of the model.

    Raises:
        MarketValidationError: with kind payoff-sign, negative-rate,
            prior-range or cohort-order
    """
    if not market.v_good > 0 > market.v_bad:
        raise MarketValidationError(
            f"payoffs must satisfy v_good > 0 > v_bad, got ({market.v_good}, {market.v_bad})",
            kind="payoff-sign",
        )
    if market.rate_good < 0 or market.rate_bad < 0:
        raise MarketValidationError(
            f"evidence rates must be nonnegative, got ({market.rate_good}, {market.rate_bad})",
            kind="negative-rate",
        )
    threshold = myopic_threshold(market)
    if not threshold < market.prior <= 1.0:
        raise MarketValidationError(
            f"prior {market.prior} must lie in ({threshold:.6f}, 1]",
            kind="prior-range",
        )
    discounts = [c.discount for c in market.cohorts]
    if any(later >= earlier for earlier, later in zip(discounts, discounts[1:])):
        raise MarketValidationError(
            f"cohort discounts must be strictly decreasing, got {discounts}",
            kind="cohort-order",
        )


def myopic_threshold(market: Market) -> float:
    """Belief at which investing now has zero expected value."""
    return -market.v_bad / (market.v_good - market.v_bad)


def expected_value(x: ArrayLike, market: Market) -> ArrayLike:
    """V(x) = x v_good + (1 - x) v_bad."""
    return x * market.v_good + (1.0 - x) * market.v_bad
