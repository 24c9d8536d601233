"""
No-News Beliefs
Posterior that the state is good given the disclosed evidence amounts, computed in log-odds
"""

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.special import expit, logit

from model.market import ArrayLike, Market


class BeliefState(BaseModel):
    """Public state after a disclosure history: belief and revealed evidence amounts."""

    model_config = ConfigDict(frozen=True)

    belief: float = Field(ge=0.0, le=1.0)
    revealed_good: float = Field(ge=0.0)
    revealed_bad: float = Field(ge=0.0)

    @classmethod
    def from_evidence(cls, market: Market, z_good: float, z_bad: float) -> "BeliefState":
        return cls(
            belief=float(posterior_no_news(market, z_good, z_bad)),
            revealed_good=z_good,
            revealed_bad=z_bad,
        )


def _scalar_or_array(value: np.ndarray) -> ArrayLike:
    return float(value) if np.ndim(value) == 0 else value


def posterior_no_news(market: Market, z_good: ArrayLike, z_bad: ArrayLike) -> ArrayLike:
    """
    Belief that the state is good when z_good and z_bad units of evidence
    generating investment have been disclosed without news.

    Args:
        market: Market primitives
        z_good: Revealed good-channel amount (scalar or array)
        z_bad: Revealed bad-channel amount (scalar or array)

    Returns:
        Posterior probability, same shape as the inputs
    """
    z_good = np.asarray(z_good, dtype=float)
    z_bad = np.asarray(z_bad, dtype=float)
    if np.any(z_good < 0) or np.any(z_bad < 0):
        raise ValueError("revealed evidence amounts must be nonnegative")
    if market.prior >= 1.0:
        return _scalar_or_array(np.ones(np.broadcast(z_good, z_bad).shape))
    log_odds = logit(market.prior) - market.rate_good * z_good + market.rate_bad * z_bad
    return _scalar_or_array(expit(log_odds))


def transparency_belief(market: Market, q: ArrayLike) -> ArrayLike:
    """No-news belief when every unit of evidence is disclosed on both channels."""
    return posterior_no_news(market, q, q)


def no_news_probability(market: Market, z_good: ArrayLike, z_bad: ArrayLike) -> ArrayLike:
    """Probability that no evidence has been disclosed after (z_good, z_bad)."""
    probability = (
        market.prior * np.exp(-market.rate_good * np.asarray(z_good, dtype=float))
        + (1.0 - market.prior) * np.exp(-market.rate_bad * np.asarray(z_bad, dtype=float))
    )
    return _scalar_or_array(probability)


def no_news_value(market: Market, z_good: ArrayLike, z_bad: ArrayLike) -> ArrayLike:
    """
    Time-0 (undiscounted) value of investing absent news after (z_good, z_bad):
    the no-news probability times V of the no-news belief.
    """
    value = (
        market.prior * market.v_good * np.exp(-market.rate_good * np.asarray(z_good, dtype=float))
        + (1.0 - market.prior) * market.v_bad * np.exp(-market.rate_bad * np.asarray(z_bad, dtype=float))
    )
    return _scalar_or_array(value)
