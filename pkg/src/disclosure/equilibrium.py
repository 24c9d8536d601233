"""
Equilibrium Construction
Event-driven adoption path under a disclosure policy: indifference flows while bad news
is public, atoms while it is withheld, belief jumps at scheduled releases
"""

import logging
import math
import sys
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.optimize import brentq

sys.path.append(str(Path(__file__).parent.parent))

from benchmark.flow import FlowSegment
from disclosure.path import MASS_EPS, EquilibriumPath, Event, EventKind, PathRecorder, SegmentKind
from disclosure.policy import DelayUntil, DisclosurePolicy, StepCaps, Transparent
from model.belief import no_news_probability, no_news_value
from model.errors import HorizonTooShortError, ModelError, UnsupportedPolicyError
from model.market import Market, expected_value, validate

logger = logging.getLogger(__name__)

VALUE_EPS = 1e-12
TIME_EPS = 1e-12
SCAN_POINTS = 64
MAX_STEPS = 100_000


def waiting_value(
    market: Market,
    policy: DisclosurePolicy,
    cohort_index: int,
    t: float,
    q_level: float,
    z_good: float,
    z_bad: float,
) -> float:
    """
    Best conditional value of holding off until one of the upcoming releases,
    assuming nobody invests in the meantime.

    Args:
        market: Market primitives
        policy: Disclosure policy
        cohort_index: Cohort whose discount rate applies
        t: Current time
        q_level: Invested stock during the wait
        z_good: Revealed good amount now
        z_bad: Revealed bad amount now

    Returns:
        Maximum over future release times T of good-news pickups up to T plus
        the discounted no-news value of investing at T; 0 if nothing is scheduled
    """
    discount = market.cohort(cohort_index).discount
    best = 0.0
    pickup = 0.0
    good_prev = z_good
    for release_time in policy.change_times():
        if release_time <= t:
            continue
        cap_good, cap_bad = policy.caps_at(release_time)
        good = max(z_good, min(cap_good, q_level))
        bad = max(z_bad, min(cap_bad, q_level))
        factor = math.exp(-discount * (release_time - t))
        pickup += factor * market.prior * market.v_good * (
            math.exp(-market.rate_good * good_prev) - math.exp(-market.rate_good * good)
        )
        good_prev = good
        best = max(best, pickup + factor * max(no_news_value(market, good, bad), 0.0))
    return best / no_news_probability(market, z_good, z_bad)


def _check_supported(policy: DisclosurePolicy) -> None:
    if not isinstance(policy.bad, (Transparent, StepCaps, DelayUntil)):
        raise UnsupportedPolicyError(f"bad-news schedule '{policy.bad.kind}' is not supported")


class _EquilibriumBuilder:
    """Forward construction of the adoption path, one event at a time."""

    def __init__(self, market: Market, policy: DisclosurePolicy, horizon: float):
        self.market = market
        self.policy = policy
        self.horizon = horizon
        self.rec = PathRecorder(market, policy)
        self.tol = 1e-10 * max(1.0, market.v_good, -market.v_bad)
        self._hold = False

    def build(self) -> EquilibriumPath:
        rec = self.rec
        rec.release()
        for _ in range(MAX_STEPS):
            if rec.complete:
                return rec.finish("complete")
            if math.isinf(rec.t):
                return rec.finish("dryout")

            next_change = self.policy.next_change(rec.t)
            x = rec.belief
            if expected_value(x, self.market) <= VALUE_EPS:
                if self._bad_news_pending():
                    self._stall(next_change)
                    continue
                return rec.finish("no-news")

            if self._hold:
                self._hold = False
                if not self._stall(next_change):
                    return rec.finish("stall")
                continue

            cap_good, cap_bad = self.policy.caps_at(rec.t)
            if cap_bad > rec.q + MASS_EPS and self.market.rate_bad > 0 and x < 1.0:
                cohort = self.market.cohort_at(rec.q)
                gap = expected_value(x, self.market) - waiting_value(
                    self.market, self.policy, cohort, rec.t, rec.q, rec.z_good, rec.z_bad
                )
                if gap < -self.tol:
                    self._stall(next_change)
                else:
                    self._flow(cohort, cap_good, cap_bad, next_change)
            else:
                q_before = rec.q
                self._atom(x)
                rec.release()
                if not rec.complete and (rec.q > q_before or not math.isfinite(next_change)):
                    self._hold = True
                elif not rec.complete:
                    self._stall(next_change)
        raise ModelError("equilibrium construction did not terminate")

    def _bad_news_pending(self) -> bool:
        rec = self.rec
        if rec.z_bad >= rec.q - MASS_EPS:
            return False
        return any(
            self.policy.bad.cap_at(change) > rec.z_bad + MASS_EPS
            for change in self.policy.change_times()
            if change > rec.t
        )

    def _stall(self, until: float) -> bool:
        if not math.isfinite(until):
            return False
        if until > self.horizon:
            raise HorizonTooShortError(
                f"path incomplete at horizon {self.horizon} (next release at {until:.6f})"
            )
        logger.debug(f"Stall from {self.rec.t:.6f} until release at {until:.6f}")
        self.rec.stall_until(until)
        return True

    def _gap_along(self, cohort: int, flow: FlowSegment, good_tracks: bool):
        z_good = self.rec.z_good

        def gap(s: float) -> float:
            q = flow.mass_at(s)
            revealed_good = q if good_tracks else z_good
            return expected_value(flow.belief_at(s), self.market) - waiting_value(
                self.market, self.policy, cohort, s, q, revealed_good, q
            )

        return gap

    def _gap_crossing(self, cohort: int, flow: FlowSegment, good_tracks: bool, t_end: float) -> float:
        """First time the marginal cohort would rather wait for a release than keep investing."""
        if not math.isfinite(t_end) or not math.isfinite(self.policy.next_change(self.rec.t)):
            return math.inf
        gap = self._gap_along(cohort, flow, good_tracks)
        previous = self.rec.t
        for s in np.linspace(self.rec.t, t_end, SCAN_POINTS + 1)[1:]:
            if gap(s) < -self.tol:
                if gap(previous) > 0:
                    return brentq(gap, previous, s, xtol=TIME_EPS)
                return previous
            previous = s
        return math.inf

    def _flow(self, cohort: int, cap_good: float, cap_bad: float, next_change: float) -> None:
        rec = self.rec
        good_tracks = cap_good > rec.q + MASS_EPS
        flow = FlowSegment.for_cohort(
            self.market, cohort, rec.t, rec.q, rec.belief, good_disclosed=good_tracks
        )
        target = self.market.cumulative_mass(cohort)
        ends = [(flow.time_to_mass(target), target)]
        if good_tracks and cap_good < target:
            ends.append((flow.time_to_mass(cap_good), cap_good))
        if cap_bad < target:
            ends.append((flow.time_to_mass(cap_bad), cap_bad))
        t_end, q_end = min(ends)

        if next_change < t_end - TIME_EPS:
            t_end, q_end = next_change, flow.mass_at(next_change)
        elif abs(next_change - t_end) <= TIME_EPS:
            t_end = next_change

        crossing = self._gap_crossing(cohort, flow, good_tracks, t_end)
        if crossing < t_end:
            logger.info(f"Cohort {cohort} stops investing at t={crossing:.6f} to wait for a release")
            t_end, q_end = crossing, flow.mass_at(crossing)
            self._hold = True

        if not math.isfinite(t_end):
            level = flow.asymptote
            rec.add_segment(math.inf, SegmentKind.FLOW, level, good_tracks, True, flow)
            rec.events.append(Event(time=math.inf, kind=EventKind.STALL, mass=level, amount=level, detail="dryout"))
            logger.info(f"Investment dries out at q = {level:.6f}")
            return
        if t_end > self.horizon:
            raise HorizonTooShortError(f"path incomplete at horizon {self.horizon}")

        rec.add_segment(t_end, SegmentKind.FLOW, q_end, good_tracks, True, flow)
        if t_end == next_change:
            rec.release()

    def _atom(self, x: float) -> None:
        """Invest until waiting for the next release becomes as good as investing."""
        rec = self.rec
        value = expected_value(x, self.market)
        level = rec.q
        while level < self.market.total_mass - MASS_EPS:
            cohort = self.market.cohort_at(level)
            upper = self.market.cumulative_mass(cohort)

            def slack(candidate: float, cohort=cohort) -> float:
                return value - waiting_value(
                    self.market, self.policy, cohort, rec.t, candidate, rec.z_good, rec.z_bad
                )

            if slack(upper) >= -self.tol:
                level = upper
                continue
            if slack(level) > 0:
                level = brentq(slack, level, upper, xtol=MASS_EPS)
            break
        rec.invest_atom(level)


def solve_equilibrium(
    market: Market,
    policy: DisclosurePolicy,
    horizon: Optional[float] = None,
) -> EquilibriumPath:
    """
    Construct the adoption path absent news under a disclosure policy.

    Args:
        market: Valid market
        policy: Bad news transparent, step-capped or delayed; good news any schedule
        horizon: Latest time the construction may need (defaults to settings)

    Returns:
        EquilibriumPath
    """
    validate(market)
    _check_supported(policy)
    if horizon is None:
        from utils.config import get_settings

        horizon = get_settings().horizon
    logger.info(f"Solving equilibrium: good={policy.good.kind}, bad={policy.bad.kind}, horizon={horizon}")
    return _EquilibriumBuilder(market, policy, horizon).build()


def main():
    from model.loader import load_market

    logging.basicConfig(level=logging.INFO)
    market = load_market(Path(__file__).parent.parent.parent / "config" / "two_cohort_market.yaml")
    path = solve_equilibrium(market, DisclosurePolicy.transparent())
    print(path.to_frame().iloc[::20].to_string(index=False))


if __name__ == "__main__":
    main()
