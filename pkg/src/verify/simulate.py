"""
Monte Carlo Welfare Estimate
Replays an adoption path against simulated evidence arrivals and averages the
discounted payoffs of all cohorts
"""

import logging
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import List, Tuple

import numpy as np
from numpy.random import Generator, Philox, SeedSequence
from pydantic import BaseModel, ConfigDict, Field

sys.path.append(str(Path(__file__).parent.parent))

from disclosure.path import EquilibriumPath, EventKind
from disclosure.policy import DisclosurePolicy
from model.market import Market

logger = logging.getLogger(__name__)

TAIL_DISCOUNT_SPAN = 50.0


class SimConfig(BaseModel):
    """Replication count, seed and tape resolution for one estimate."""

    model_config = ConfigDict(frozen=True)

    n_paths: int = Field(default=100_000, ge=1)
    seed: int = Field(default=0, ge=0)
    time_step: float = Field(default=1e-3, gt=0)
    block_size: int = Field(default=10_000, ge=1)
    condition_on_state: bool = False

    @classmethod
    def from_settings(cls, **overrides) -> "SimConfig":
        from utils.config import get_settings

        settings = get_settings()
        values = {"n_paths": settings.n_paths, "seed": settings.seed, "block_size": settings.block_size}
        values.update(overrides)
        return cls(**values)


@dataclass(frozen=True)
class SimEstimate:
    mean_total: float
    std_error: float
    per_cohort_mean: Tuple[float, ...]
    n_paths: int
    good_disclosed_share: float
    bad_disclosed_share: float

    def within(self, value: float, sigmas: float = 3.0) -> bool:
        """True when value lies within `sigmas` standard errors of the estimate."""
        return abs(self.mean_total - value) <= sigmas * self.std_error + 1e-12


@dataclass(frozen=True)
class _Tape:
    """
    Chronological records of the path absent news.

    invested[k] is the per-cohort discounted mass that has invested up to
    and including record k; jump marks records created by an instantaneous
    event rather than a flow step.
    """

    t: np.ndarray
    q: np.ndarray
    z_good: np.ndarray
    z_bad: np.ndarray
    invested: np.ndarray
    jump: np.ndarray


def _cohort_portions(market: Market, q_from: float, q_to: float) -> np.ndarray:
    upper = np.asarray(market.cumulative_masses)
    lower = upper - np.array([c.mass for c in market.cohorts])
    return np.clip(np.minimum(q_to, upper) - np.maximum(q_from, lower), 0.0, None)


def _remaining(market: Market, q: np.ndarray) -> np.ndarray:
    upper = np.asarray(market.cumulative_masses)
    lower = upper - np.array([c.mass for c in market.cohorts])
    return np.clip(upper[None, :] - np.maximum(q[:, None], lower[None, :]), 0.0, None)


def build_tape(market: Market, path: EquilibriumPath, time_step: float) -> _Tape:
    """Walk the path's segments and events in order and record every change."""
    discounts = np.array([c.discount for c in market.cohorts])
    invested = np.zeros(market.n)
    rows: List[tuple] = [(0.0, 0.0, 0.0, 0.0, invested.copy(), True)]

    def push(t, q, good, bad, jump):
        rows.append((t, q, good, bad, invested.copy(), jump))

    events = [e for e in path.events if math.isfinite(e.time)]
    k = 0
    tail = TAIL_DISCOUNT_SPAN / float(discounts.min())
    for segment in path.segments:
        while k < len(events) and events[k].time <= segment.t_start:
            event = events[k]
            if event.kind == EventKind.RELEASE:
                push(event.time, event.mass, event.good_after, event.bad_after, True)
            elif event.kind == EventKind.INVESTMENT:
                j = event.cohort_index - 1
                invested[j] += event.amount * math.exp(-discounts[j] * event.time)
                push(event.time, event.mass + event.amount, event.good_before, event.bad_before, True)
            k += 1
        if not segment.invests:
            continue

        t_end = segment.t_end if math.isfinite(segment.t_end) else segment.t_start + tail
        steps = max(1, math.ceil((t_end - segment.t_start) / time_step))
        grid = np.linspace(segment.t_start, t_end, steps + 1)
        for a, b in zip(grid[:-1], grid[1:]):
            q_a, q_b = segment.mass_at(a), segment.mass_at(b)
            invested += np.exp(-discounts * 0.5 * (a + b)) * _cohort_portions(market, q_a, q_b)
            push(float(b), q_b, *segment.revealed_at(b), False)

    t, q, good, bad, inv, jump = zip(*rows)
    logger.debug(f"Tape with {len(rows)} records up to t={t[-1]:.6f}")
    return _Tape(
        t=np.array(t),
        q=np.array(q),
        z_good=np.array(good),
        z_bad=np.array(bad),
        invested=np.vstack(inv),
        jump=np.array(jump, dtype=bool),
    )


def _first_disclosure(tape: _Tape, levels: np.ndarray, thresholds: np.ndarray):
    """
    Locate the disclosure of evidence generated at each threshold (in invested-mass units).

    Returns:
        (disclosed mask, disclosure time, stock at disclosure, discounted
        investment strictly before disclosure)
    """
    size = len(tape.t)
    k = np.searchsorted(levels, thresholds, side="left")
    disclosed = k < size
    kk = np.clip(k, 1, size - 1)
    prev = kk - 1

    span = levels[kk] - levels[prev]
    theta = np.where(tape.jump[kk] | (span <= 0), 1.0, (thresholds - levels[prev]) / np.where(span > 0, span, 1.0))
    theta = np.clip(theta, 0.0, 1.0)
    t_d = tape.t[prev] + theta * (tape.t[kk] - tape.t[prev])
    q_d = tape.q[prev] + theta * (tape.q[kk] - tape.q[prev])
    step = np.where(tape.jump[kk][:, None], 0.0, theta[:, None]) * (tape.invested[kk] - tape.invested[prev])
    invested = tape.invested[prev] + step
    invested = np.where(disclosed[:, None], invested, tape.invested[-1][None, :])
    return disclosed, t_d, q_d, invested


def _state_payoffs(market: Market, tape: _Tape, good_state: bool, exponentials: np.ndarray):
    """Per-cohort payoffs of every replication in one state, and its disclosure indicator."""
    rate = market.rate_good if good_state else market.rate_bad
    levels = tape.z_good if good_state else tape.z_bad
    with np.errstate(divide="ignore"):
        thresholds = exponentials / rate if rate > 0 else np.full_like(exponentials, np.inf)
    disclosed, t_d, q_d, invested = _first_disclosure(tape, levels, thresholds)
    if not good_state:
        return market.v_bad * invested, disclosed

    discounts = np.array([c.discount for c in market.cohorts])
    rush = np.exp(-discounts[None, :] * t_d[:, None]) * _remaining(market, q_d)
    payoff = market.v_good * (invested + np.where(disclosed[:, None], rush, 0.0))
    return payoff, disclosed


def _run_block(market: Market, tape: _Tape, rng: Generator, size: int, condition_on_state: bool):
    exponentials = rng.standard_exponential(size)
    if condition_on_state:
        good, good_disclosed = _state_payoffs(market, tape, True, exponentials)
        bad, bad_disclosed = _state_payoffs(market, tape, False, exponentials)
        payoff = market.prior * good + (1.0 - market.prior) * bad
        return payoff, good_disclosed.astype(float), bad_disclosed.astype(float), np.ones(size, bool), np.ones(size, bool)

    is_good = rng.random(size) < market.prior
    good, good_disclosed = _state_payoffs(market, tape, True, exponentials)
    bad, bad_disclosed = _state_payoffs(market, tape, False, exponentials)
    payoff = np.where(is_good[:, None], good, bad)
    return payoff, good_disclosed.astype(float), bad_disclosed.astype(float), is_good, ~is_good


def simulate(
    market: Market,
    policy: DisclosurePolicy,
    path: EquilibriumPath,
    config: SimConfig,
) -> SimEstimate:
    """
    Estimate total welfare by simulating the state and evidence arrivals.

    Evidence of the true state is generated when the invested stock crosses
    an exponential threshold scaled by the evidence rate; it becomes public
    once the policy has revealed that much of the channel. Agents follow the
    path absent news, all invest on good news and none invest after bad news.

    Args:
        market: Market primitives
        policy: Policy the path was built under
        path: Adoption path absent news
        config: Replications, seed and tape resolution

    Returns:
        SimEstimate; identical for identical (seed, config)
    """
    if path.policy != policy:
        logger.warning("Simulating a path that was built under a different policy")
    tape = build_tape(market, path, config.time_step)

    n_blocks = math.ceil(config.n_paths / config.block_size)
    streams = SeedSequence(config.seed).spawn(n_blocks)
    payoffs, good_hits, bad_hits, good_masks, bad_masks = [], [], [], [], []
    for b, child in enumerate(streams):
        size = min(config.block_size, config.n_paths - b * config.block_size)
        rng = Generator(Philox(child))
        payoff, good_disclosed, bad_disclosed, good_mask, bad_mask = _run_block(
            market, tape, rng, size, config.condition_on_state
        )
        payoffs.append(payoff)
        good_hits.append(good_disclosed[good_mask])
        bad_hits.append(bad_disclosed[bad_mask])

    per_path = np.vstack(payoffs)
    totals = per_path.sum(axis=1)
    n = len(totals)
    std_error = float(np.std(totals, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    good_hits_all = np.concatenate(good_hits)
    bad_hits_all = np.concatenate(bad_hits)

    estimate = SimEstimate(
        mean_total=float(totals.mean()),
        std_error=std_error,
        per_cohort_mean=tuple(float(v) for v in per_path.mean(axis=0)),
        n_paths=n,
        good_disclosed_share=float(good_hits_all.mean()) if good_hits_all.size else math.nan,
        bad_disclosed_share=float(bad_hits_all.mean()) if bad_hits_all.size else math.nan,
    )
    logger.info(f"Simulated welfare {estimate.mean_total:.6f} +/- {estimate.std_error:.6f} over {n} paths")
    return estimate


def main():
    from designer.optimal import optimal_policy
    from disclosure.equilibrium import solve_equilibrium
    from model.loader import load_market

    logging.basicConfig(level=logging.INFO)
    market = load_market(Path(__file__).parent.parent.parent / "config" / "two_cohort_market.yaml")
    plan = optimal_policy(market)
    policy = plan.policy
    path = solve_equilibrium(market, policy)
    estimate = simulate(market, policy, path, SimConfig(n_paths=20_000, seed=7))
    print(f"simulated {estimate.mean_total:.5f} +/- {estimate.std_error:.5f} vs plan {plan.welfare:.5f}")


if __name__ == "__main__":
    main()
