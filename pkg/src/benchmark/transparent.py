"""
Transparent Benchmark
Gradual-investment equilibrium when every piece of evidence is disclosed as it arrives,
in closed form per phase and by independent ODE integration
"""

import logging
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, Optional, Tuple

import numpy as np
import pandas as pd
from scipy.integrate import solve_ivp

sys.path.append(str(Path(__file__).parent.parent))

from benchmark.flow import FlowSegment, flow_rate
from model.belief import transparency_belief
from model.errors import ModelError, StepTooLargeError
from model.market import ArrayLike, Market, expected_value, validate

logger = logging.getLogger(__name__)

BOUNDARY_TOLERANCE = 1e-9
PATH_COLUMNS = ["t", "q", "z_good", "z_bad", "x", "phase_index"]


@dataclass(frozen=True)
class PhaseSolution:
    """
    Interval on which a single cohort invests absent news.

    Closed-form phases carry their FlowSegment; integrated phases carry the
    solver's dense output instead. An atom phase has neither.
    """

    cohort_index: int
    t_start: float
    t_end: float
    q_start: float
    q_end: float
    x_start: float
    segment: Optional[FlowSegment] = None
    dense: Optional[Callable[[np.ndarray], np.ndarray]] = None

    @property
    def is_atom(self) -> bool:
        return self.segment is None and self.dense is None

    @property
    def coefficients(self) -> Dict[str, float]:
        """Closed-form constants a, b, V0 and the exponent ratio."""
        if self.segment is None:
            return {}
        return {
            "a": self.segment.a,
            "b": self.segment.b,
            "v0": self.segment.v0,
            "exponent_ratio": self.segment.exponent_ratio,
        }

    def mass_at(self, t: ArrayLike) -> ArrayLike:
        t = np.asarray(t, dtype=float)
        if self.is_atom:
            q = np.where(t >= self.t_start, self.q_end, self.q_start)
        elif self.dense is not None:
            q = self.dense(np.clip(t, self.t_start, self.t_end))
        else:
            q = self.segment.mass_at(np.minimum(t, self.t_end))
        q = np.minimum(q, self.q_end)
        return float(q) if np.ndim(q) == 0 else q


@dataclass(frozen=True)
class BenchmarkPath:
    """Transparent equilibrium path; q(t) is continuous except for the degenerate time-0 atom."""

    market: Market
    phases: Tuple[PhaseSolution, ...]
    dryout: Optional[float]
    terminal_time: float

    @property
    def phase_times(self) -> Tuple[float, ...]:
        return tuple(phase.t_end for phase in self.phases)

    def mass_at(self, t: ArrayLike) -> ArrayLike:
        t = np.asarray(t, dtype=float)
        q = np.zeros_like(t)
        for phase in self.phases:
            q = np.where(t >= phase.t_start, phase.mass_at(t), q)
        return float(q) if np.ndim(q) == 0 else q

    def belief_at(self, t: ArrayLike) -> ArrayLike:
        return transparency_belief(self.market, self.mass_at(t))

    def phase_index_at(self, t: ArrayLike) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        index = np.ones(t.shape, dtype=int)
        for phase in self.phases:
            index = np.where(t >= phase.t_start, phase.cohort_index, index)
        return index

    def sample_times(self, n_points: int = 201, until: Optional[float] = None) -> np.ndarray:
        """Uniform grid merged with the phase boundaries."""
        if until is None:
            finite_ends = [p.t_end for p in self.phases if math.isfinite(p.t_end)]
            last = max(finite_ends, default=0.0)
            until = last if math.isfinite(self.terminal_time) else last + 5.0
        until = max(until, 1e-9)
        boundaries = [p.t_start for p in self.phases] + [p.t_end for p in self.phases]
        extra = [b for b in boundaries if math.isfinite(b) and b <= until]
        return np.unique(np.concatenate([np.linspace(0.0, until, n_points), extra]))

    def to_frame(self, times: Optional[np.ndarray] = None) -> pd.DataFrame:
        times = self.sample_times() if times is None else np.asarray(times, dtype=float)
        q = np.asarray(self.mass_at(times), dtype=float)
        return pd.DataFrame(
            {
                "t": times,
                "q": q,
                "z_good": q,
                "z_bad": q,
                "x": np.asarray(transparency_belief(self.market, q), dtype=float),
                "phase_index": self.phase_index_at(times),
            },
            columns=PATH_COLUMNS,
        )


def phase_closed_form(phase: PhaseSolution, t: float) -> float:
    """
    Invested mass at time t inside a closed-form phase.

    The equal-rates case reduces to the linear path inside FlowSegment.
    """
    if phase.segment is None:
        raise ValueError("phase has no closed form (atom or integrated phase)")
    if not phase.t_start <= t <= phase.t_end:
        raise ValueError(f"t={t} outside phase [{phase.t_start}, {phase.t_end}]")
    return min(phase.segment.mass_at(t), phase.q_end)


def dryout_level(market: Market) -> float:
    """Mass at which the transparent no-news belief reaches the myopic threshold (inf if never)."""
    if market.rate_good <= market.rate_bad or market.prior >= 1.0:
        return math.inf
    ratio = market.prior * market.v_good / ((1.0 - market.prior) * (-market.v_bad))
    return math.log(ratio) / (market.rate_good - market.rate_bad)


def _atom_path(market: Market) -> BenchmarkPath:
    logger.info("Waiting has no value under transparency: every agent invests at t=0")
    phase = PhaseSolution(
        cohort_index=1,
        t_start=0.0,
        t_end=0.0,
        q_start=0.0,
        q_end=market.total_mass,
        x_start=market.prior,
    )
    return BenchmarkPath(market=market, phases=(phase,), dryout=None, terminal_time=0.0)


def _is_degenerate(market: Market) -> bool:
    return market.rate_bad <= 0 or market.prior >= 1.0


def solve_transparent(market: Market) -> BenchmarkPath:
    """
    Build the transparent equilibrium phase by phase from the closed form.

    Args:
        market: Valid market

    Returns:
        BenchmarkPath; ends in a dryout when the asymptote binds before F_n
    """
    validate(market)
    if _is_degenerate(market):
        return _atom_path(market)

    q_bar = dryout_level(market)
    phases = []
    t = 0.0
    for i in range(1, market.n + 1):
        q_start = market.cumulative_mass(i - 1)
        target = market.cumulative_mass(i)
        segment = FlowSegment.for_cohort(market, i, t, q_start, transparency_belief(market, q_start))
        t_end = segment.time_to_mass(target)
        q_end = target if math.isfinite(t_end) else min(q_bar, target)
        phases.append(
            PhaseSolution(
                cohort_index=i,
                t_start=t,
                t_end=t_end,
                q_start=q_start,
                q_end=q_end,
                x_start=segment.x_start,
                segment=segment,
            )
        )
        logger.info(f"Transparent phase {i}: [{t:.6f}, {t_end:.6f}], mass {q_start} -> {q_end}")
        if not math.isfinite(t_end):
            break
        t = t_end

    dryout = q_bar if q_bar < market.total_mass else None
    if dryout is not None:
        logger.info(f"Investment dries out at q = {dryout:.6f} < F_n = {market.total_mass}")
    return BenchmarkPath(market=market, phases=tuple(phases), dryout=dryout, terminal_time=phases[-1].t_end)


def integrate_transparent(market: Market, step: float, span: Optional[float] = None) -> BenchmarkPath:
    """
    Integrate the indifference ODE numerically, phase by phase.

    Args:
        market: Valid market
        step: Maximum integration step
        span: Longest time integrated per phase before declaring a dryout

    Returns:
        BenchmarkPath with integrated (dense-output) phases
    """
    validate(market)
    if step <= 0:
        raise ValueError(f"step must be positive, got {step}")
    if span is None:
        from utils.config import get_settings

        span = get_settings().integration_span
    if step >= span:
        raise StepTooLargeError(f"step {step} is not smaller than the integration span {span}")
    if _is_degenerate(market):
        return _atom_path(market)

    q_bar = dryout_level(market)
    phases = []
    t = 0.0
    for i in range(1, market.n + 1):
        q_start = market.cumulative_mass(i - 1)
        target = market.cumulative_mass(i)

        def rhs(_t, y, cohort=i):
            x = transparency_belief(market, max(y[0], 0.0))
            return [flow_rate(market, cohort, x)]

        def reach(_t, y, level=target):
            return y[0] - level

        reach.terminal = True
        reach.direction = 1

        sol = solve_ivp(
            rhs,
            (t, t + span),
            [q_start],
            method="RK45",
            max_step=step,
            rtol=1e-10,
            atol=1e-12,
            events=reach,
            dense_output=True,
        )
        if sol.status < 0:
            raise ModelError(f"integration failed in phase {i}: {sol.message}")

        if sol.status == 1:
            t_end = float(sol.t_events[0][0])
            q_hit = float(sol.y_events[0][0][0])
            if abs(q_hit - target) > BOUNDARY_TOLERANCE:
                raise StepTooLargeError(f"phase {i} boundary overshoot {q_hit - target:.3e} with step {step}")
            q_end = target
        else:
            t_end = math.inf
            q_end = min(float(sol.y[0, -1]), q_bar)

        lower, upper = t, float(sol.t[-1])
        dense = (lambda s, f=sol.sol, lo=lower, hi=upper: f(np.clip(s, lo, hi))[0])
        phases.append(
            PhaseSolution(
                cohort_index=i,
                t_start=t,
                t_end=t_end,
                q_start=q_start,
                q_end=q_end,
                x_start=transparency_belief(market, q_start),
                dense=dense,
            )
        )
        logger.info(f"Integrated phase {i}: ends at {t_end:.6f} after {sol.t.size} steps")
        if not math.isfinite(t_end):
            break
        t = t_end

    dryout = q_bar if q_bar < market.total_mass else None
    return BenchmarkPath(market=market, phases=tuple(phases), dryout=dryout, terminal_time=phases[-1].t_end)


def main():
    from model.loader import load_market

    logging.basicConfig(level=logging.INFO)
    market = load_market(Path(__file__).parent.parent.parent / "config" / "two_cohort_market.yaml")
    path = solve_transparent(market)
    for phase in path.phases:
        print(f"cohort {phase.cohort_index}: T = {phase.t_end:.6f}, V0 = {expected_value(phase.x_start, market):.6f}")


if __name__ == "__main__":
    main()
