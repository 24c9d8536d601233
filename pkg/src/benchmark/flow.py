"""
Indifference Flow
Closed-form investment flow that keeps the marginal cohort indifferent while bad news is public
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit, logit

from model.errors import DegenerateRateError
from model.market import ArrayLike, Market, expected_value

logger = logging.getLogger(__name__)

EQUAL_RATE_TOLERANCE = 1e-14
INVERSION_TOLERANCE = 1e-12


def flow_rate(market: Market, cohort_index: int, x: float) -> float:
    """
    Investment flow keeping cohort i indifferent between investing now and
    waiting an instant for bad news.

    Args:
        market: Market primitives
        cohort_index: 1-based marginal cohort
        x: Current no-news belief

    Returns:
        Nonnegative flow dq/dt
    """
    if market.rate_bad <= 0 or x >= 1.0:
        raise DegenerateRateError(
            f"flow is unbounded for rate_bad={market.rate_bad}, x={x}; treat as an atom"
        )
    discount = market.cohort(cohort_index).discount
    value = max(expected_value(x, market), 0.0)
    return discount * value / (market.rate_bad * (1.0 - x) * (-market.v_bad))


@dataclass(frozen=True)
class FlowSegment:
    """
    One cohort's indifference flow from (t_start, q_start, x_start).

    rate_good is the effective good-news rate: the market rate while good
    news is disclosed as it arrives, 0 while it is withheld.
    """

    t_start: float
    q_start: float
    x_start: float
    discount: float
    rate_good: float
    rate_bad: float
    v_good: float
    v_bad: float

    def __post_init__(self):
        if self.rate_bad <= 0 or self.x_start >= 1.0:
            raise DegenerateRateError(
                f"no indifference flow for rate_bad={self.rate_bad}, x_start={self.x_start}"
            )

    @classmethod
    def for_cohort(
        cls,
        market: Market,
        cohort_index: int,
        t_start: float,
        q_start: float,
        x_start: float,
        good_disclosed: bool = True,
    ) -> "FlowSegment":
        return cls(
            t_start=t_start,
            q_start=q_start,
            x_start=x_start,
            discount=market.cohort(cohort_index).discount,
            rate_good=market.rate_good if good_disclosed else 0.0,
            rate_bad=market.rate_bad,
            v_good=market.v_good,
            v_bad=market.v_bad,
        )

    @property
    def a(self) -> float:
        return (1.0 - self.x_start) * (-self.v_bad)

    @property
    def b(self) -> float:
        return self.x_start * self.v_good

    @property
    def v0(self) -> float:
        return self.b - self.a

    @property
    def exponent_ratio(self) -> float:
        return self.discount * self.rate_good / self.rate_bad

    @property
    def rate_gap(self) -> float:
        """rate_bad - rate_good; the no-news log-odds drift per unit of invested mass."""
        return self.rate_bad - self.rate_good

    @property
    def growth(self) -> float:
        return self.discount * self.rate_gap / self.rate_bad

    @property
    def equal_rates(self) -> bool:
        return abs(self.rate_gap) <= EQUAL_RATE_TOLERANCE * self.rate_bad

    @property
    def stalled(self) -> bool:
        return self.v0 <= 0.0

    @property
    def asymptote(self) -> float:
        """Mass level the flow approaches but never reaches (inf unless good news dominates)."""
        if self.stalled:
            return self.q_start
        if self.rate_gap < 0 and not self.equal_rates:
            return self.q_start + math.log(self.b / self.a) / (-self.rate_gap)
        return math.inf

    def mass_at(self, t: ArrayLike) -> ArrayLike:
        """Invested mass at time t (t before t_start maps to q_start)."""
        elapsed = np.maximum(np.asarray(t, dtype=float) - self.t_start, 0.0)
        if self.stalled:
            q = np.full_like(elapsed, self.q_start)
        elif self.equal_rates:
            q = self.q_start + (self.discount / self.rate_bad) * (self.v0 / self.a) * elapsed
        else:
            with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                argument = -(self.v0 / self.a) * np.expm1(self.growth * elapsed)
                q = np.where(
                    argument > -1.0,
                    self.q_start - np.log1p(np.maximum(argument, -1.0 + 1e-300)) / self.rate_gap,
                    np.inf,
                )
        return float(q) if np.ndim(q) == 0 else q

    def rate_at(self, t: ArrayLike) -> ArrayLike:
        """Flow dq/dt at time t."""
        elapsed = np.maximum(np.asarray(t, dtype=float) - self.t_start, 0.0)
        if self.stalled:
            rate = np.zeros_like(elapsed)
        else:
            with np.errstate(over="ignore"):
                growth_factor = np.exp(self.growth * elapsed)
                denominator = self.a - self.v0 * np.expm1(self.growth * elapsed)
            rate = (self.discount / self.rate_bad) * self.v0 * growth_factor / denominator
        return float(rate) if np.ndim(rate) == 0 else rate

    def belief_at(self, t: ArrayLike) -> ArrayLike:
        """No-news belief along the segment."""
        q = np.asarray(self.mass_at(t), dtype=float)
        x = expit(logit(self.x_start) + self.rate_gap * (q - self.q_start))
        return float(x) if np.ndim(x) == 0 else x

    def time_to_mass(self, q_target: ArrayLike) -> ArrayLike:
        """
        First time the flow reaches q_target; inf when it never does.

        Uses the closed-form inversion and falls back to bisection when the
        inversion residual is not within tolerance.
        """
        target = np.asarray(q_target, dtype=float)
        fill = target - self.q_start
        if self.stalled:
            elapsed = np.where(fill <= 0, 0.0, np.inf)
        elif self.equal_rates:
            elapsed = np.maximum(fill, 0.0) * self.a * self.rate_bad / (self.discount * self.v0)
        else:
            with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                argument = -(self.a / self.v0) * np.expm1(-self.rate_gap * np.maximum(fill, 0.0))
                elapsed = np.where(
                    argument > -1.0,
                    np.log1p(np.maximum(argument, -1.0 + 1e-300)) / self.growth,
                    np.inf,
                )
        elapsed = np.where(fill <= 0, 0.0, elapsed)

        if np.ndim(elapsed) == 0:
            return self._refine(float(target), self.t_start + float(elapsed))
        return self.t_start + elapsed

    def _refine(self, target: float, t_guess: float) -> float:
        if not math.isfinite(t_guess) or target <= self.q_start:
            return t_guess
        residual = self.mass_at(t_guess) - target
        if abs(residual) <= INVERSION_TOLERANCE * max(1.0, abs(target)):
            return t_guess

        logger.debug(f"Refining flow inversion by bisection (residual {residual:.3e})")
        lower, upper = self.t_start, max(t_guess, self.t_start + 1e-12)
        while self.mass_at(upper) < target:
            upper = self.t_start + 2.0 * (upper - self.t_start)
            if upper - self.t_start > 1e12:
                return math.inf
        return brentq(lambda t: self.mass_at(t) - target, lower, upper, xtol=INVERSION_TOLERANCE)
