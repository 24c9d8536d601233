"""
Incentive Checks
Samples the investing and waiting decisions along a path and compares them with
every deviation stop time on a grid
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import pandas as pd

from disclosure.path import MASS_EPS, EquilibriumPath, EventKind
from disclosure.policy import DisclosurePolicy
from disclosure.welfare import continuation_value
from model.belief import posterior_no_news
from model.market import Market, expected_value

logger = logging.getLogger(__name__)

FLOW_SAMPLES = 5
DRYOUT_SAMPLE_SPACING = 1.0


@dataclass(frozen=True)
class ICSample:
    cohort_index: int
    decision_time: float
    deviation_stop_time: float
    slack: float
    kind: str


@dataclass(frozen=True)
class ICReport:
    """
    Slack of every sampled decision against every sampled deviation.

    Investing samples record V(invest now) minus the deviation value;
    waiting samples record the best continuation minus V(x_{t-}).
    """

    samples: List[ICSample] = field(default_factory=list)
    min_slack: float = math.inf
    passed: bool = True
    tolerance: float = 1e-8

    def worst(self, count: int = 5) -> List[ICSample]:
        return sorted(self.samples, key=lambda s: s.slack)[:count]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [vars(s) for s in self.samples],
            columns=["cohort_index", "decision_time", "deviation_stop_time", "slack", "kind"],
        )


def _flow_decision_times(path: EquilibriumPath) -> List[float]:
    times = []
    for segment in path.segments:
        if not segment.invests:
            continue
        if math.isfinite(segment.t_end):
            span = segment.t_end - segment.t_start
            times.extend(segment.t_start + span * k / FLOW_SAMPLES for k in range(FLOW_SAMPLES))
        else:
            times.extend(segment.t_start + DRYOUT_SAMPLE_SPACING * k for k in range(FLOW_SAMPLES))
    return times


def verify_ic(
    market: Market,
    policy: DisclosurePolicy,
    path: EquilibriumPath,
    deviation_grid: Sequence[float],
    tolerance: Optional[float] = None,
) -> ICReport:
    """
    Check that investing agents do not gain by delaying and waiting agents do
    not gain by investing right away.

    Args:
        market: Market primitives
        policy: Policy the path was built under
        path: Adoption path
        deviation_grid: Candidate stop times; path breakpoints and "never" are added
        tolerance: Slack tolerance (defaults to settings)

    Returns:
        ICReport
    """
    if len(deviation_grid) == 0:
        raise ValueError("deviation grid must be nonempty")
    if tolerance is None:
        from utils.config import get_settings

        tolerance = get_settings().tolerance

    if path.policy != policy:
        logger.warning("Checking a path that was built under a different policy")

    grid = sorted({float(t) for t in deviation_grid if t >= 0} | set(path.breakpoints()))
    stops = grid + [math.inf]
    samples: List[ICSample] = []

    for t in _flow_decision_times(path):
        cohort = market.cohort_at(path.mass_at(t))
        levels = path.revealed_at(t)
        invest_now = float(expected_value(posterior_no_news(market, *levels), market))
        discount = market.cohort(cohort).discount
        for stop in stops:
            if stop > t:
                deviation = continuation_value(market, path, discount, t, levels, stop)
                samples.append(ICSample(cohort, t, stop, invest_now - deviation, "invest"))

    for k, event in enumerate(path.events):
        if event.kind != EventKind.INVESTMENT:
            continue
        levels = (event.good_before, event.bad_before)
        invest_now = float(expected_value(posterior_no_news(market, *levels), market))
        discount = market.cohort(event.cohort_index).discount
        for stop in stops:
            if stop >= event.time:
                deviation = continuation_value(market, path, discount, event.time, levels, stop, first_event=k + 1)
                samples.append(ICSample(event.cohort_index, event.time, stop, invest_now - deviation, "atom"))

    for t in grid:
        q_after = path.mass_at(t)
        levels = path.revealed_before(t)
        invest_now = float(expected_value(posterior_no_news(market, *levels), market))
        for cohort in range(1, market.n + 1):
            if market.cumulative_mass(cohort) <= q_after + MASS_EPS:
                continue
            discount = market.cohort(cohort).discount
            values = [
                continuation_value(market, path, discount, t, levels, stop, first_event=0)
                for stop in stops
                if stop > t
            ]
            best = max(values)
            samples.append(ICSample(cohort, t, math.nan, best - invest_now, "wait"))

    min_slack = min((s.slack for s in samples), default=math.inf)
    passed = bool(min_slack >= -tolerance)
    if passed:
        logger.info(f"IC holds on {len(samples)} samples (min slack {min_slack:.3e})")
    else:
        worst = min(samples, key=lambda s: s.slack)
        logger.warning(
            f"IC violated: cohort {worst.cohort_index} at t={worst.decision_time:.6f} "
            f"vs stop {worst.deviation_stop_time:.6f}, slack {worst.slack:.3e}"
        )
    return ICReport(samples=samples, min_slack=float(min_slack), passed=passed, tolerance=tolerance)
