"""
Welfare Evaluation
Time-0 expected payoff of every cohort along an adoption path, and the conditional
value of the deviation "invest at a fixed time absent news"
"""

import logging
import math
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Tuple

import numpy as np
import pandas as pd
from scipy.integrate import quad

from disclosure.path import MASS_EPS, EquilibriumPath, EventKind, Segment, SegmentKind
from model.belief import no_news_probability, no_news_value, posterior_no_news
from model.market import Market, expected_value

logger = logging.getLogger(__name__)

QUAD_OPTIONS = {"epsabs": 1e-13, "epsrel": 1e-11, "limit": 200}


class WelfareTerms(NamedTuple):
    good_release: float
    no_news_invest: float
    atom: float


@dataclass(frozen=True)
class WelfareReport:
    """Per-cohort welfare (payoff per unit mass times mass) and its three-part decomposition."""

    per_cohort: Tuple[float, ...]
    total: float
    decomposition: WelfareTerms

    def per_unit(self, market: Market) -> Tuple[float, ...]:
        return tuple(w / c.mass for w, c in zip(self.per_cohort, market.cohorts))

    def to_frame(self, market: Market) -> pd.DataFrame:
        rows = [
            {"cohort": i + 1, "mass": c.mass, "welfare": w, "per_unit": w / c.mass}
            for i, (w, c) in enumerate(zip(self.per_cohort, market.cohorts))
        ]
        rows.append({"cohort": "total", "mass": market.total_mass, "welfare": self.total, "per_unit": np.nan})
        return pd.DataFrame(rows, columns=["cohort", "mass", "welfare", "per_unit"])


def good_news_pickup(market: Market, good_before: float, good_after: float) -> float:
    """Unconditional value of the good news first disclosed while z_good moves between the two levels."""
    return market.prior * market.v_good * (
        math.exp(-market.rate_good * good_before) - math.exp(-market.rate_good * good_after)
    )


def remaining_mass(market: Market, q: float) -> np.ndarray:
    """Mass of each cohort that has not invested once the stock is q."""
    upper = np.asarray(market.cumulative_masses)
    lower = upper - np.array([c.mass for c in market.cohorts])
    return np.clip(upper - np.maximum(q, lower), 0.0, None)


def _cohort_pieces(market: Market, segment: Segment) -> List[Tuple[int, float, float]]:
    """Split an investing segment into (cohort, t_from, t_to) pieces with a single marginal cohort."""
    if segment.kind != SegmentKind.SAMPLED or segment.slope <= 0:
        return [(segment.cohort_index, segment.t_start, segment.t_end)]
    pieces = []
    t_from = segment.t_start
    cohort = segment.cohort_index
    while cohort <= market.n:
        boundary = market.cumulative_mass(cohort)
        if boundary >= segment.q_end - MASS_EPS:
            pieces.append((cohort, t_from, segment.t_end))
            break
        t_cross = segment.t_start + (boundary - segment.q_start) / segment.slope
        pieces.append((cohort, t_from, t_cross))
        t_from, cohort = t_cross, cohort + 1
    return pieces


def _good_flow_integral(market: Market, segment: Segment, weight, lo: float, hi: float) -> float:
    """Integral of weight(t) times the density of good news disclosed along a tracking segment."""
    if hi <= lo or market.rate_good <= 0:
        return 0.0

    def integrand(t):
        q = segment.mass_at(t)
        density = market.prior * market.v_good * market.rate_good * math.exp(-market.rate_good * q)
        return weight(t, q) * density * segment.rate_at(t)

    value, _ = quad(integrand, lo, hi, **QUAD_OPTIONS)
    return value


def welfare(market: Market, path: EquilibriumPath) -> WelfareReport:
    """
    Evaluate the designer's objective on a path.

    Args:
        market: Market the path was built for
        path: Adoption path absent news

    Returns:
        WelfareReport with per-cohort values and the good-release, no-news
        investment and atom terms
    """
    discounts = np.array([c.discount for c in market.cohorts])
    good_release = np.zeros(market.n)
    no_news = np.zeros(market.n)
    atoms = np.zeros(market.n)

    for event in path.events:
        if event.kind == EventKind.RELEASE and event.good_after > event.good_before and math.isfinite(event.time):
            weights = np.exp(-discounts * event.time) * remaining_mass(market, event.mass)
            good_release += good_news_pickup(market, event.good_before, event.good_after) * weights
        elif event.kind == EventKind.INVESTMENT:
            j = event.cohort_index - 1
            atoms[j] += event.amount * math.exp(-discounts[j] * event.time) * no_news_value(
                market, event.good_before, event.bad_before
            )

    for segment in path.segments:
        if not segment.invests:
            continue
        for cohort, lo, hi in _cohort_pieces(market, segment):
            r = discounts[cohort - 1]

            def flow_value(t, seg=segment, r=r):
                return math.exp(-r * t) * no_news_value(market, *seg.revealed_at(t)) * seg.rate_at(t)

            value, _ = quad(flow_value, lo, hi, **QUAD_OPTIONS)
            no_news[cohort - 1] += value

        if segment.good_tracks:
            for j in range(market.n):

                def weight(t, q, j=j):
                    return math.exp(-discounts[j] * t) * remaining_mass(market, q)[j]

                good_release[j] += _good_flow_integral(market, segment, weight, segment.t_start, segment.t_end)

    per_cohort = good_release + no_news + atoms
    terms = WelfareTerms(float(good_release.sum()), float(no_news.sum()), float(atoms.sum()))
    total = float(per_cohort.sum())
    logger.info(f"Welfare {total:.6f} (good release {terms.good_release:.6f}, flow {terms.no_news_invest:.6f}, atoms {terms.atom:.6f})")
    return WelfareReport(per_cohort=tuple(float(w) for w in per_cohort), total=total, decomposition=terms)


def continuation_value(
    market: Market,
    path: EquilibriumPath,
    discount: float,
    start: float,
    levels: Tuple[float, float],
    stop: float,
    first_event: Optional[int] = None,
) -> float:
    """
    Conditional value at `start` of investing at `stop` absent news, investing on
    good news and never after bad news.

    Args:
        levels: Revealed (good, bad) amounts the agent conditions on at `start`
        first_event: Index of the first event at `start` that is still ahead of
            the agent; None means every event at `start` is already reflected in levels
    """
    value = 0.0
    for k, event in enumerate(path.events):
        if event.kind != EventKind.RELEASE or event.good_after <= event.good_before:
            continue
        if event.time < start or event.time > stop:
            continue
        if event.time == start and (first_event is None or k < first_event):
            continue
        value += math.exp(-discount * (event.time - start)) * good_news_pickup(
            market, event.good_before, event.good_after
        )

    for segment in path.segments:
        if segment.good_tracks and segment.invests:
            value += _good_flow_integral(
                market,
                segment,
                lambda t, q: math.exp(-discount * (t - start)),
                max(segment.t_start, start),
                min(segment.t_end, stop),
            )

    if math.isfinite(stop):
        value += math.exp(-discount * (stop - start)) * no_news_value(market, *path.revealed_at(stop))
    return value / no_news_probability(market, *levels)


def stopping_value(
    market: Market,
    path: EquilibriumPath,
    cohort_index: int,
    from_time: float,
    stop_time: float,
) -> float:
    """
    Expected discounted payoff, conditional on no news by from_time, of
    investing at stop_time absent news (stop_time = inf means never).

    Both times see every disclosure made at that instant.
    """
    if stop_time < from_time:
        raise ValueError(f"stop_time {stop_time} precedes from_time {from_time}")
    discount = market.cohort(cohort_index).discount
    levels = path.revealed_at(from_time)
    if stop_time == from_time:
        return float(expected_value(posterior_no_news(market, *levels), market))
    return continuation_value(market, path, discount, from_time, levels, stop_time)
