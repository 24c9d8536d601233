"""
Optimal Disclosure Plan
Enumerates the last no-news cohort, builds each candidate's phase times and
release, and keeps the welfare maximizer
"""

import logging
import math
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple

sys.path.append(str(Path(__file__).parent.parent))

from designer.relaxed import (
    designer_phase_times,
    final_release_time,
    phase_start_belief,
    relaxed_terms,
    release_time_derivative,
)
from disclosure.policy import DisclosurePolicy
from model.belief import transparency_belief
from model.errors import InfeasibleReleaseError, ModelError
from model.market import Market, myopic_threshold, validate

logger = logging.getLogger(__name__)

TIE_TOLERANCE = 1e-12
FIRST_ORDER_TOLERANCE = 1e-10
IC_TOLERANCE = 1e-9


@dataclass(frozen=True)
class OptimalPlan:
    """
    Welfare-maximizing plan: bad news transparent, good news hidden until t_bar.

    release_time is the time all good news of cohorts 1..hat_i is disclosed
    when hat_i < n. policy is the schedule whose equilibrium is the plan:
    good news held to release_time when there is one, otherwise to t_bar.
    """

    hat_i: int
    phase_times: Tuple[float, ...]
    release_time: Optional[float]
    policy: DisclosurePolicy
    welfare: float
    per_cohort: Tuple[float, ...]
    z_levels: Tuple[float, ...]
    candidates: Dict[int, Optional[float]] = field(default_factory=dict)

    @property
    def t_bar(self) -> float:
        return self.phase_times[-1]

    @property
    def t_levels(self) -> Tuple[float, ...]:
        """Phase times T_1, ... handed to the relaxed objective."""
        times = self.phase_times[1:]
        return times + (self.release_time,) if self.release_time is not None else times


def _candidate(market: Market, k: int) -> Optional[OptimalPlan]:
    """Plan in which cohort k is the last to invest absent news (None if infeasible)."""
    try:
        times = designer_phase_times(market, k - 1)
    except ModelError as e:
        logger.debug(f"Candidate {k} rejected: {e}")
        return None

    if k == market.n:
        z_levels = (0.0,) * k
        release_time = None
    else:
        if transparency_belief(market, market.cumulative_mass(k)) > myopic_threshold(market):
            logger.debug(f"Candidate {k} rejected: the release does not stop cohort {k + 1}")
            return None
        try:
            release_time = final_release_time(market, k, times[-1], phase_start_belief(market, k))
        except InfeasibleReleaseError as e:
            logger.debug(f"Candidate {k} rejected: {e}")
            return None
        z_levels = (0.0,) * (k - 1) + (market.cumulative_mass(k),)

    t_levels = times[1:] + ((release_time,) if release_time is not None else ())
    terms = relaxed_terms(market, k, z_levels, t_levels)
    return OptimalPlan(
        hat_i=k,
        phase_times=times,
        release_time=release_time,
        policy=DisclosurePolicy.delayed_good_news(times[-1] if release_time is None else release_time),
        welfare=terms.objective,
        per_cohort=terms.per_cohort,
        z_levels=z_levels,
    )


def optimal_policy(market: Market) -> OptimalPlan:
    """
    Find the optimal plan over every candidate last no-news cohort.

    Args:
        market: Valid market

    Returns:
        OptimalPlan of the best candidate; ties go to the larger cohort index
    """
    validate(market)
    best: Optional[OptimalPlan] = None
    candidates: Dict[int, Optional[float]] = {}
    for k in range(1, market.n + 1):
        plan = _candidate(market, k)
        candidates[k] = plan.welfare if plan is not None else None
        if plan is not None and (best is None or plan.welfare >= best.welfare - TIE_TOLERANCE):
            best = plan
    logger.info(f"Candidate welfare: {candidates}")

    if best is None:
        raise ModelError("no feasible candidate plan")
    best = replace(best, candidates=candidates)
    logger.info(
        f"Optimal plan: hat_i={best.hat_i}, t_bar={best.t_bar:.6f}, "
        f"release={best.release_time}, welfare={best.welfare:.6f}"
    )
    return best


@dataclass(frozen=True)
class Perturbation:
    name: str
    feasible: bool
    change: float


@dataclass(frozen=True)
class FirstOrderReport:
    perturbations: List[Perturbation]
    passed: bool

    @property
    def counterexamples(self) -> List[Perturbation]:
        return [p for p in self.perturbations if p.feasible and p.change > FIRST_ORDER_TOLERANCE]


def first_order_check(market: Market, plan: OptimalPlan, epsilon: float = 1e-6) -> FirstOrderReport:
    """
    Perturb the plan's release levels and phase times and confirm that no
    feasible perturbation raises the relaxed objective.

    Perturbations that break a cohort's investing-versus-waiting constraint
    are reported as infeasible.
    """
    k = plan.hat_i
    base_z = list(plan.z_levels)
    base_t = list(plan.t_levels)
    base = relaxed_terms(market, k, base_z, base_t).objective

    trials = []
    for i in range(1, k):
        z = [v if j < i - 1 else max(v, base_z[i - 1] + epsilon) for j, v in enumerate(base_z)]
        trials.append((f"raise z_{i}", z, base_t))
    if k < market.n:
        z = base_z[:-1] + [base_z[-1] - epsilon]
        shift = release_time_derivative(market, k, phase_start_belief(market, k), base_z[-1]) * epsilon
        t = base_t[:-1] + [base_t[-1] - shift]
        trials.append((f"lower z_{k} with its release time", z, t))
    for i in range(1, len(base_t) + 1):
        for sign, label in ((1.0, "+"), (-1.0, "-")):
            t = list(base_t)
            t[i - 1] += sign * epsilon
            trials.append((f"T_{i} {label} eps", base_z, t))

    perturbations = []
    for name, z, t in trials:
        try:
            terms = relaxed_terms(market, k, z, t)
        except ModelError:
            perturbations.append(Perturbation(name, False, math.nan))
            continue
        feasible = all(math.isnan(s) or s >= -IC_TOLERANCE for s in terms.ic_slack)
        perturbations.append(Perturbation(name, feasible, terms.objective - base))

    report = FirstOrderReport(perturbations, passed=True)
    if report.counterexamples:
        report = FirstOrderReport(perturbations, passed=False)
        for p in report.counterexamples:
            logger.warning(f"First-order check failed: {p.name} raises welfare by {p.change:.3e}")
    return report


def main():
    from model.loader import load_market

    logging.basicConfig(level=logging.INFO)
    market = load_market(Path(__file__).parent.parent.parent / "config" / "two_cohort_market.yaml")
    plan = optimal_policy(market)
    print(f"hat_i = {plan.hat_i}, t_bar = {plan.t_bar:.6f}, welfare = {plan.welfare:.6f}")
    print(f"per cohort: {[round(w, 6) for w in plan.per_cohort]}")


if __name__ == "__main__":
    main()
