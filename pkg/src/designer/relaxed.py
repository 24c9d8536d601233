"""
Relaxed Designer Problem
Closed-form phase durations, the delayed good-news release time and the finite
objective over phase times and cumulative good-news releases
"""

import logging
import math
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from model.belief import posterior_no_news
from model.errors import ConstraintViolationError, InfeasibleReleaseError, ModelError
from model.market import Market, expected_value

logger = logging.getLogger(__name__)

LEVEL_TOLERANCE = 1e-12


def designer_phase_duration(market: Market, cohort_index: int, x_start: float) -> float:
    """
    Length of cohort i's phase when good news is hidden and bad news is transparent.

    Args:
        market: Market primitives
        cohort_index: 1-based cohort
        x_start: No-news belief at the start of the phase

    Returns:
        Duration (1/r_i) ln((x v_G + (1 - x) v_B e^{-lambda_B f_i}) / V(x))
    """
    value = expected_value(x_start, market)
    if value <= 0:
        raise ModelError(f"phase of cohort {cohort_index} needs V(x_start) > 0, got {value:.6g}", kind="nonpositive-argument")
    cohort = market.cohort(cohort_index)
    numerator = x_start * market.v_good + (1.0 - x_start) * market.v_bad * math.exp(-market.rate_bad * cohort.mass)
    ratio = numerator / value
    assert ratio >= 1.0 - 1e-15, f"log argument {ratio} below 1"
    return math.log(max(ratio, 1.0)) / cohort.discount


def phase_start_belief(market: Market, cohort_index: int) -> float:
    """No-news belief when cohort i starts investing, updated by bad news only."""
    return posterior_no_news(market, 0.0, market.cumulative_mass(cohort_index - 1))


def designer_phase_times(market: Market, last_cohort: int) -> Tuple[float, ...]:
    """(T_0, ..., T_last) chained from the designer phase durations."""
    times = [0.0]
    for i in range(1, last_cohort + 1):
        times.append(times[-1] + designer_phase_duration(market, i, phase_start_belief(market, i)))
    return tuple(times)


def final_release_time(market: Market, hat_i: int, t_prev: float, x_prev: float) -> float:
    """
    Release time of all good news generated by cohorts 1..hat_i that leaves
    cohort hat_i indifferent between investing at t_prev and waiting for it.

    Raises:
        InfeasibleReleaseError: if waiting for the release cannot match investing now
    """
    waiting = x_prev * -math.expm1(-market.rate_good * market.cumulative_mass(hat_i)) * market.v_good
    investing = expected_value(x_prev, market)
    if investing <= 0 or waiting < investing:
        raise InfeasibleReleaseError(
            f"no release time makes cohort {hat_i} indifferent "
            f"(waiting value {waiting:.6f} vs investing {investing:.6f})"
        )
    return t_prev + math.log(waiting / investing) / market.cohort(hat_i).discount


def release_time_derivative(market: Market, hat_i: int, x_prev: float, z: float) -> float:
    """dT/dz of the indifference release time; x_prev cancels out."""
    if z <= 0:
        return math.inf
    rate = market.rate_good
    return rate * math.exp(-rate * z) / (market.cohort(hat_i).discount * -math.expm1(-rate * z))


@dataclass(frozen=True)
class RelaxedTerms:
    """
    Pieces of the relaxed objective.

    unconditional_start[i] and unconditional_end[i] are the unconditional
    no-news values at the start and end of cohort i+1's phase; ic_slack[i]
    is the slack of that cohort's constraint between investing at its phase
    start and waiting for the next phase time (nan when that time is open).
    """

    objective: float
    release_term: float
    invest_term: float
    per_cohort: Tuple[float, ...]
    unconditional_start: Tuple[float, ...]
    unconditional_end: Tuple[float, ...]
    ic_slack: Tuple[float, ...]


def _check_levels(market: Market, hat_i: int, z_levels: Sequence[float], t_levels: Sequence[float]) -> None:
    if not 1 <= hat_i <= market.n:
        raise ConstraintViolationError(f"hat_i {hat_i} outside 1..{market.n}")
    if len(z_levels) != hat_i or len(t_levels) not in (hat_i - 1, hat_i):
        raise ConstraintViolationError(
            f"need {hat_i} release levels and {hat_i - 1} or {hat_i} times, got {len(z_levels)} and {len(t_levels)}"
        )
    previous = 0.0
    for i, z in enumerate(z_levels, start=1):
        if z < previous - LEVEL_TOLERANCE or z > market.cumulative_mass(i) + LEVEL_TOLERANCE:
            raise ConstraintViolationError(f"release level z_{i} = {z} violates z_{i - 1} <= z_{i} <= F_{i}")
        previous = z
    if any(t < 0 for t in t_levels) or any(b < a for a, b in zip(t_levels, t_levels[1:])):
        raise ConstraintViolationError(f"phase times must be nonnegative and nondecreasing, got {list(t_levels)}")
    if len(t_levels) == hat_i - 1 and hat_i < market.n and z_levels[-1] > (z_levels[-2] if hat_i > 1 else 0.0):
        raise ConstraintViolationError("a good-news release needs its release time")


def relaxed_terms(
    market: Market,
    hat_i: int,
    z_levels: Sequence[float],
    t_levels: Sequence[float],
) -> RelaxedTerms:
    """
    Evaluate the relaxed objective with its per-cohort attribution.

    Args:
        market: Market primitives
        hat_i: Last cohort investing absent news
        z_levels: Cumulative good-news releases (z_1, ..., z_hat_i)
        t_levels: Phase times (T_1, ..., T_hat_i); T_hat_i may be omitted when
            no good news is released at the end of the last phase

    Returns:
        RelaxedTerms
    """
    _check_levels(market, hat_i, z_levels, t_levels)
    discounts = np.array([c.discount for c in market.cohorts])
    masses = np.array([c.mass for c in market.cohorts])
    z = [0.0] + [float(v) for v in z_levels]
    times = [0.0] + [float(v) for v in t_levels]
    good = market.prior * market.v_good
    bad = (1.0 - market.prior) * market.v_bad

    per_cohort = np.zeros(market.n)
    release_term = 0.0
    invest_term = 0.0
    starts, ends, slacks = [], [], []
    for i in range(1, hat_i + 1):
        r = discounts[i - 1]
        start_value = good * math.exp(-market.rate_good * z[i - 1]) + bad * math.exp(-market.rate_bad * market.cumulative_mass(i - 1))
        end_value = good * math.exp(-market.rate_good * z[i - 1]) + bad * math.exp(-market.rate_bad * market.cumulative_mass(i))
        starts.append(start_value)
        ends.append(end_value)

        invest = masses[i - 1] * math.exp(-r * times[i - 1]) * start_value
        per_cohort[i - 1] += invest
        invest_term += invest

        pickup = good * (math.exp(-market.rate_good * z[i - 1]) - math.exp(-market.rate_good * z[i]))
        if i < len(times):
            later = np.arange(i, market.n)
            shares = pickup * masses[later] * np.exp(-discounts[later] * times[i])
            per_cohort[later] += shares
            release_term += float(shares.sum())
            after = good * math.exp(-market.rate_good * z[i]) + bad * math.exp(-market.rate_bad * market.cumulative_mass(i))
            slacks.append(math.exp(-r * times[i - 1]) * start_value - math.exp(-r * times[i]) * (pickup + max(after, 0.0)))
        else:
            slacks.append(math.nan)

    objective = float(per_cohort.sum())
    return RelaxedTerms(
        objective=objective,
        release_term=release_term,
        invest_term=invest_term,
        per_cohort=tuple(float(v) for v in per_cohort),
        unconditional_start=tuple(starts),
        unconditional_end=tuple(ends),
        ic_slack=tuple(slacks),
    )


def relaxed_objective(
    market: Market,
    hat_i: int,
    z_levels: Sequence[float],
    t_levels: Sequence[float],
) -> float:
    """Designer welfare as a function of phase times and cumulative good-news releases."""
    return relaxed_terms(market, hat_i, z_levels, t_levels).objective


def homogeneous_lower_bound(market: Market) -> float:
    """
    Earliest time at which full revelation can be reached with a single cohort
    and symmetric evidence rates.
    """
    if market.n != 1 or not math.isclose(market.rate_good, market.rate_bad, rel_tol=0.0, abs_tol=1e-12):
        raise ModelError("the homogeneous bound needs one cohort and equal evidence rates", kind="not-homogeneous")
    return designer_phase_duration(market, 1, market.prior)
