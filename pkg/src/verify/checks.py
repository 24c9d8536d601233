"""
Property Checks
Bad-news bound under sampled capped policies, the release-lottery contraction
inequality and the single-cohort full-revelation observations
"""

import itertools
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np
import pandas as pd
from numpy.random import Generator, Philox, SeedSequence

sys.path.append(str(Path(__file__).parent.parent))

from designer.relaxed import designer_phase_duration, homogeneous_lower_bound
from disclosure.equilibrium import solve_equilibrium
from disclosure.incentives import verify_ic
from disclosure.path import EquilibriumPath, path_from_schedule
from disclosure.policy import CapPoint, DelayUntil, DisclosurePolicy, StepCaps, Transparent
from disclosure.welfare import stopping_value
from model.errors import DegenerateRateError, ModelError
from model.market import Market, expected_value, validate

logger = logging.getLogger(__name__)

BOUND_GRID_POINTS = 10
OBSERVATION_LEVELS = 5


@dataclass(frozen=True)
class CheckReport:
    """Outcome of one property check with per-case rows."""

    name: str
    passed: bool
    summary: Dict[str, Any] = field(default_factory=dict)
    rows: List[Dict[str, Any]] = field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows)


def audit_bad_news_path(
    market: Market,
    policy: DisclosurePolicy,
    path: EquilibriumPath,
    reference: EquilibriumPath,
    grid: Sequence[float],
    tolerance: float = 1e-6,
) -> Tuple[str, float, float]:
    """
    Classify a path against the transparent-breakdowns reference.

    Returns:
        (status, IC slack, largest excess of revealed bad news over the
        reference stock); status is "ic-infeasible", "violation" or "ok"
    """
    report = verify_ic(market, policy, path, grid)
    gaps = np.asarray(path.revealed_bad(np.asarray(grid)), dtype=float) - np.asarray(
        reference.mass_at(np.asarray(grid)), dtype=float
    )
    gap = float(gaps.max())
    if not report.passed:
        return "ic-infeasible", report.min_slack, gap
    if gap > tolerance:
        return "violation", report.min_slack, gap
    return "ok", report.min_slack, gap


def _sample_caps(rng: Generator, times: np.ndarray, total: float) -> StepCaps:
    increments = rng.dirichlet(np.ones(len(times)))
    caps = np.maximum.accumulate(rng.uniform() * total * np.cumsum(increments))
    return StepCaps(points=tuple(CapPoint(time=float(t), cap=float(c)) for t, c in zip(times, caps)))


def check_breakdown_bound(
    market: Market,
    exogenous_good,
    samples: int,
    seed: int,
    tolerance: float = 1e-6,
    grid_points: int = BOUND_GRID_POINTS,
) -> CheckReport:
    """
    Sample capped bad-news schedules and confirm that none of the incentive
    compatible ones reveals more bad news than the stock of the
    transparent-breakdowns path with the same good-news schedule.

    Args:
        market: Valid market
        exogenous_good: Fixed good-news schedule
        samples: Number of sampled bad-news schedules
        seed: Seed of the sampler
        tolerance: Allowed excess over the reference stock
        grid_points: Cap change times per sampled schedule

    Returns:
        CheckReport with one row per sample
    """
    validate(market)
    reference = solve_equilibrium(market, DisclosurePolicy(good=exogenous_good, bad=Transparent()))
    end = reference.terminal_time if math.isfinite(reference.terminal_time) and reference.terminal_time > 0 else None
    if end is None:
        from utils.config import get_settings

        end = get_settings().grid_horizon
    times = np.linspace(0.0, 1.5 * end, grid_points + 1)[1:]
    grid = np.concatenate([[0.0], times])

    rng = Generator(Philox(SeedSequence(seed)))
    rows = []
    for k in range(samples):
        policy = DisclosurePolicy(good=exogenous_good, bad=_sample_caps(rng, times, market.total_mass))
        try:
            path = solve_equilibrium(market, policy)
        except ModelError as e:
            logger.debug(f"Sample {k} has no equilibrium path: {e}")
            rows.append({"sample": k, "status": "ic-infeasible", "ic_slack": math.nan, "gap": math.nan})
            continue
        status, slack, gap = audit_bad_news_path(market, policy, path, reference, grid, tolerance)
        rows.append({"sample": k, "status": status, "ic_slack": slack, "gap": gap})

    statuses = [row["status"] for row in rows]
    violations = statuses.count("violation")
    summary = {
        "samples": samples,
        "ic_feasible": statuses.count("ok") + violations,
        "ic_infeasible": statuses.count("ic-infeasible"),
        "violations": violations,
        "max_gap": max((row["gap"] for row in rows if row["status"] != "ic-infeasible"), default=-math.inf),
    }
    if violations:
        worst = max((row for row in rows if row["status"] == "violation"), key=lambda row: row["gap"])
        logger.warning(f"Bad-news bound violated by sample {worst['sample']} (gap {worst['gap']:.3e})")
    else:
        logger.info(f"Bad-news bound holds on {summary['ic_feasible']} IC samples of {samples}")
    return CheckReport("breakdown-bound", violations == 0, summary, rows)


def contraction_time(discount: float, times: Sequence[float], probabilities: Sequence[float]) -> float:
    """Certain time with the same expected discount factor as the lottery."""
    expected = float(np.dot(probabilities, np.exp(-discount * np.asarray(times))))
    return -math.log(expected) / discount


def jensen_margin(discount: float, t_hat: float, times: Sequence[float], probabilities: Sequence[float]) -> float:
    """Discount factor at t_hat minus the lottery's expected discount factor."""
    return math.exp(-discount * t_hat) - float(np.dot(probabilities, np.exp(-discount * np.asarray(times))))


def jensen_contraction_check(market: Market, random_instances: int, seed: int) -> CheckReport:
    """
    Replacing a release lottery by the certain time that leaves one cohort
    indifferent helps every more patient cohort and hurts every less patient one.

    Raises:
        DegenerateRateError: if good news never arrives
    """
    if market.rate_good <= 0:
        raise DegenerateRateError("release lotteries need a positive good-news rate")
    try:
        span = designer_phase_duration(market, 1, market.prior) or 1.0
    except ModelError:
        span = 1.0

    rng = Generator(Philox(SeedSequence(seed)))
    rows = []
    for k in range(random_instances):
        times = rng.uniform(0.0, span, size=2)
        weight = rng.uniform()
        probabilities = [weight, 1.0 - weight]
        r_i = rng.uniform(0.5, 5.0)
        r_patient = r_i * rng.uniform(0.05, 0.95)
        r_impatient = r_i * rng.uniform(1.05, 3.0)
        t_hat = contraction_time(r_i, times, probabilities)
        rows.append(
            {
                "instance": k,
                "t_hat": t_hat,
                "patient_margin": jensen_margin(r_patient, t_hat, times, probabilities),
                "impatient_margin": jensen_margin(r_impatient, t_hat, times, probabilities),
            }
        )

    frame = pd.DataFrame(rows)
    passed = bool(
        (frame["patient_margin"] > 0).all() and (frame["impatient_margin"] < 0).all()
    )
    summary = {
        "instances": random_instances,
        "min_patient_margin": float(frame["patient_margin"].min()),
        "max_impatient_margin": float(frame["impatient_margin"].max()),
    }
    logger.info(f"Release contraction: {'holds' if passed else 'fails'} on {random_instances} instances")
    return CheckReport("jensen-contraction", passed, summary, rows)


def _good_wait_values(market: Market, t_star: float, times: np.ndarray, paths: np.ndarray) -> np.ndarray:
    """Value of waiting until t_star for every good-news path (rows) revealed on `times`."""
    rate, good = market.rate_good, market.prior * market.v_good
    total = market.total_mass
    previous = np.hstack([np.zeros((paths.shape[0], 1)), paths[:, :-1]])
    pickups = good * (np.exp(-rate * previous) - np.exp(-rate * paths))
    discounted = (pickups * np.exp(-market.cohorts[0].discount * times)[None, :]).sum(axis=1)
    factor = math.exp(-market.cohorts[0].discount * t_star)
    final = good * (np.exp(-rate * paths[:, -1]) - math.exp(-rate * total))
    full = good * math.exp(-rate * total) + (1.0 - market.prior) * market.v_bad * math.exp(-market.rate_bad * total)
    return discounted + factor * (final + full)


def observation_checks(market: Market, n_steps: int = 20) -> CheckReport:
    """
    Single-cohort, symmetric-rate checks of full revelation by the earliest time.

    (a) revealing any good news before that time makes waiting for full
    revelation strictly better than investing at t=0; (b) transparent bad news
    reveals the most bad news at every time among grid paths agents accept;
    the timing of bad news does not change the value of waiting for full
    revelation; and no full-revelation path exists on a shorter horizon.

    Raises:
        ModelError: kind not-homogeneous for other markets
    """
    t_star = homogeneous_lower_bound(market)
    rows: List[Dict[str, Any]] = []
    if market.rate_good == 0 or t_star <= 0:
        logger.info("No evidence to reveal: the full-revelation checks hold trivially")
        return CheckReport("observations", True, {"t_star": t_star, "degenerate": True}, rows)

    total = market.total_mass
    r = market.cohorts[0].discount
    invest_now = float(expected_value(market.prior, market))
    times = np.linspace(0.0, t_star, n_steps + 1)
    levels = np.linspace(0.0, total, OBSERVATION_LEVELS)
    step = levels[1] - levels[0]
    paths = np.array(list(itertools.combinations_with_replacement(range(OBSERVATION_LEVELS), n_steps)))
    level_paths = levels[paths]

    # (a) good news before the earliest time
    values = _good_wait_values(market, t_star, times[:-1], level_paths)
    early = level_paths.max(axis=1) > 0
    good_ok = bool(np.all(values[early] > invest_now + 1e-12)) and bool(
        np.all(np.abs(values[~early] - invest_now) <= 1e-9)
    )
    rows.append(
        {
            "check": "good-news-delay",
            "passed": good_ok,
            "value": float(values[early].min() - invest_now) if early.any() else math.nan,
            "cases": int(len(paths)),
        }
    )

    # (b) transparent bad news is the pointwise maximum
    stop_values = np.exp(-r * times[:-1])[None, :] * (
        market.prior * market.v_good
        + (1.0 - market.prior) * market.v_bad * np.exp(-market.rate_bad * level_paths)
    )
    feasible = np.all(stop_values <= invest_now + 1e-12, axis=1)
    breakdowns = solve_equilibrium(market, DisclosurePolicy.delayed_good_news(t_star), horizon=max(10.0, 2 * t_star))
    reference = np.asarray(breakdowns.revealed_bad(times[:-1]), dtype=float)
    accepted = level_paths[feasible]
    best = accepted.max(axis=0)
    below = bool(np.all(accepted <= reference[None, :] + 1e-9))
    lag = bool(np.all(best >= reference - step - 1e-9))
    reach = abs(breakdowns.phase_times[-1] - t_star) if len(breakdowns.phase_times) > 1 else math.inf
    rows.append({"check": "breakdowns-dominate", "passed": below, "value": float(np.max(accepted - reference[None, :])), "cases": int(feasible.sum())})
    rows.append({"check": "breakdowns-one-cell", "passed": lag, "value": float(np.min(best - reference)), "cases": n_steps})
    rows.append({"check": "breakdowns-reach", "passed": bool(reach <= 1e-6), "value": float(reach), "cases": 1})

    # bad-news timing leaves the value of waiting for full revelation unchanged
    neutral = []
    for level in levels:
        bad = StepCaps(points=(CapPoint(time=float(times[1]), cap=float(level)), CapPoint(time=float(t_star), cap=float(total))))
        policy = DisclosurePolicy(good=DelayUntil(release_time=t_star), bad=bad)
        path = path_from_schedule(market, policy, [0.0], [total])
        neutral.append(stopping_value(market, path, 1, 0.0, t_star))
    spread = float(np.max(np.abs(np.array(neutral) - invest_now)))
    rows.append({"check": "bad-news-timing", "passed": bool(spread <= 1e-9), "value": spread, "cases": len(levels)})

    # a shorter horizon cannot reach full revelation
    shorter = times[-2]
    shortfall = math.exp(-r * shorter) * (
        market.prior * market.v_good + (1.0 - market.prior) * market.v_bad * math.exp(-market.rate_bad * total)
    ) - invest_now
    rows.append({"check": "below-bound-infeasible", "passed": bool(shortfall > 0), "value": shortfall, "cases": 1})

    passed = all(row["passed"] for row in rows)
    logger.info(f"Full-revelation checks at t_star = {t_star:.6f}: {'pass' if passed else 'fail'}")
    return CheckReport("observations", passed, {"t_star": t_star, "degenerate": False}, rows)


def main():
    from disclosure.policy import Silent
    from model.loader import load_market

    logging.basicConfig(level=logging.INFO)
    config = Path(__file__).parent.parent.parent / "config"
    report = observation_checks(load_market(config / "homogeneous_market.yaml"))
    print(report.to_frame().to_string(index=False))
    bound = check_breakdown_bound(load_market(config / "two_cohort_market.yaml"), Silent(), samples=20, seed=1)
    print(bound.summary)


if __name__ == "__main__":
    main()
