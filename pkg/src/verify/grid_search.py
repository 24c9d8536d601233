"""
Grid Oracle
Brute-force search over monotone step paths of investment and disclosure on a
time and mass grid, subject to the discrete investing and waiting constraints
"""

import logging
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

sys.path.append(str(Path(__file__).parent.parent))

from disclosure.incentives import ICReport, ICSample
from disclosure.path import PATH_COLUMNS
from model.belief import no_news_probability, no_news_value, posterior_no_news
from model.errors import ConstraintViolationError
from model.market import Market, validate

logger = logging.getLogger(__name__)

IC_TOLERANCE = 1e-12
LEVEL_DECIMALS = 12
DEFAULT_LABEL_BUDGET = 400_000


class GridSpec(BaseModel):
    """Time step, horizon and mass resolution of the search grid."""

    model_config = ConfigDict(frozen=True)

    dt: float = Field(gt=0, allow_inf_nan=False)
    horizon: float = Field(ge=0, allow_inf_nan=False)
    mass_step: float = Field(gt=0, allow_inf_nan=False)

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))

    @classmethod
    def from_settings(cls, **overrides) -> "GridSpec":
        from utils.config import get_settings

        settings = get_settings()
        values = {"dt": settings.dt, "horizon": settings.grid_horizon, "mass_step": settings.mass_step}
        values.update(overrides)
        return cls(**values)


@dataclass(frozen=True)
class GridProblem:
    """
    A discrete path: stock and revealed amounts after each step k = 0..K.

    Step k first releases evidence generated up to step k-1, then agents
    invest with that information.
    """

    dt: float
    horizon: float
    q_grid: np.ndarray
    zg_grid: np.ndarray
    zb_grid: np.ndarray

    def __post_init__(self):
        for name in ("q_grid", "zg_grid", "zb_grid"):
            values = getattr(self, name)
            if np.any(np.diff(values) < -1e-12):
                raise ConstraintViolationError(f"{name} must be nondecreasing")
        previous_q = np.concatenate([[0.0], self.q_grid[:-1]])
        if np.any(self.zg_grid > previous_q + 1e-12) or np.any(self.zb_grid > previous_q + 1e-12):
            raise ConstraintViolationError("evidence can only be revealed after the investment generating it")

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(len(self.q_grid))

    def to_frame(self, market: Market) -> pd.DataFrame:
        """Same columns as the continuous path tables."""
        return pd.DataFrame(
            {
                "t": self.times,
                "q": self.q_grid,
                "z_good": self.zg_grid,
                "z_bad": self.zb_grid,
                "x": np.asarray(posterior_no_news(market, self.zg_grid, self.zb_grid), dtype=float),
                "phase_index": [market.cohort_at(max(float(q) - 1e-12, 0.0)) for q in self.q_grid],
            },
            columns=PATH_COLUMNS,
        )


class ShapeFlags(NamedTuple):
    bad_caps_slack_before_tbar: bool
    good_caps_zero_before_tbar: bool


@dataclass(frozen=True)
class GridSolution:
    paths: GridProblem
    welfare: float
    ic_ok: bool
    shape_flags: ShapeFlags
    exhaustive: bool
    per_cohort: Tuple[float, ...] = ()
    labels_explored: int = 0


def mass_levels(market: Market, mass_step: float) -> np.ndarray:
    """Multiples of mass_step up to F_n merged with every cohort boundary."""
    regular = np.arange(0.0, market.total_mass + 1e-12, mass_step)
    levels = np.concatenate([regular, [0.0], market.cumulative_masses])
    return np.unique(np.round(levels, LEVEL_DECIMALS))


def _portions(market: Market, q_from: float, q_to: float) -> Tuple[float, ...]:
    out = []
    for i in range(1, market.n + 1):
        lower, upper = market.cumulative_mass(i - 1), market.cumulative_mass(i)
        out.append(max(0.0, min(q_to, upper) - max(q_from, lower)))
    return tuple(out)


def _remaining(market: Market, q: float) -> Tuple[float, ...]:
    return _portions(market, q, market.total_mass)


class _Label(NamedTuple):
    welfare: float
    invest_bound: Tuple[float, ...]
    wait_bound: Tuple[float, ...]
    parent: Optional["_Label"]
    state: Tuple[int, int, int]


def _dominates(a: _Label, b: _Label) -> bool:
    return (
        a.welfare >= b.welfare
        and all(x >= y for x, y in zip(a.invest_bound, b.invest_bound))
        and all(x <= y for x, y in zip(a.wait_bound, b.wait_bound))
    )


def _insert(front: List[_Label], label: _Label) -> None:
    for existing in front:
        if _dominates(existing, label):
            return
    front[:] = [e for e in front if not _dominates(label, e)]
    front.append(label)


class _Tables:
    """Per-level and per-step constants of the search."""

    def __init__(self, market: Market, levels: np.ndarray, n_steps: int, dt: float):
        self.levels = levels
        m = len(levels)
        good = market.prior * market.v_good
        self.no_news = [[float(no_news_value(market, levels[g], levels[b])) for b in range(m)] for g in range(m)]
        self.pickup = [
            [good * (math.exp(-market.rate_good * levels[g]) - math.exp(-market.rate_good * levels[h])) for h in range(m)]
            for g in range(m)
        ]
        self.good_left = [good * math.exp(-market.rate_good * levels[g]) for g in range(m)]
        self.portions = [[_portions(market, levels[a], levels[b]) for b in range(m)] for a in range(m)]
        self.remaining = [_remaining(market, levels[a]) for a in range(m)]
        self.discounts = [
            tuple(math.exp(-c.discount * k * dt) for c in market.cohorts) for k in range(n_steps + 2)
        ]


def _reconstruct(label: _Label, levels: np.ndarray, spec: GridSpec) -> GridProblem:
    states = []
    while label is not None and label.parent is not None:
        states.append(label.state)
        label = label.parent
    states.reverse()
    q, zg, zb = (np.array([levels[s[i]] for s in states]) for i in range(3))
    return GridProblem(dt=spec.dt, horizon=spec.horizon, q_grid=q, zg_grid=zg, zb_grid=zb)


def grid_search(market: Market, spec: GridSpec, label_budget: int = DEFAULT_LABEL_BUDGET) -> GridSolution:
    """
    Find the welfare-maximal feasible discrete path.

    Labels at each state (q, z_good, z_bad) keep the welfare so far and two
    per-cohort bounds: the smallest investing value so far, which later stop
    values may not exceed, and the largest value a waiting agent gave up,
    which some later stop must reach. Both are stored net of the good-news
    pickups accrued since. Dominated labels, labels whose wait bound exceeds
    their invest bound and labels whose welfare upper bound falls below
    investing everything at t=0 are dropped. After F_n is reached the
    disclosure state is frozen.

    Args:
        market: Valid market
        spec: Grid resolution
        label_budget: Labels kept per step before the search switches to a
            beam over the best upper bounds

    Returns:
        GridSolution; exhaustive is False when the budget was hit
    """
    validate(market)
    levels = mass_levels(market, spec.mass_step)
    n_steps = spec.n_steps
    tables = _Tables(market, levels, n_steps, spec.dt)
    m, n = len(levels), market.n
    lower_bound = sum(c.mass for c in market.cohorts) * tables.no_news[0][0] - 1e-12
    logger.info(f"Grid search: {n_steps + 1} steps, {m} mass levels, lower bound {lower_bound:.6f}")

    root = _Label(0.0, (math.inf,) * n, (-math.inf,) * n, None, (0, 0, 0))
    fronts: Dict[Tuple[int, int, int], List[_Label]] = {(0, 0, 0): [root]}
    exhaustive = True
    explored = 0

    for k in range(n_steps + 1):
        disc = tables.discounts[k]
        disc_next = tables.discounts[k + 1]
        last = k == n_steps
        new_fronts: Dict[Tuple[int, int, int], List[_Label]] = {}
        for (qi, gi, bi), labels in fronts.items():
            # once F_n is reached a release earns nothing and only raises later net stop values
            complete = qi == m - 1
            for g2 in ((gi,) if complete else range(gi, qi + 1)):
                pickup = tables.pickup[gi][g2]
                delta = tuple(d * pickup for d in disc)
                release_gain = pickup * sum(d * r for d, r in zip(disc, tables.remaining[qi]))
                for b2 in ((bi,) if complete else range(bi, qi + 1)):
                    value = tables.no_news[g2][b2]
                    stop = tuple(d * value for d in disc)
                    stop_last = tuple(max(s, 0.0) for s in stop) if last else stop
                    for label in labels:
                        invest_bound = tuple(a - d for a, d in zip(label.invest_bound, delta))
                        if any(s > a + IC_TOLERANCE for s, a in zip(stop_last, invest_bound)):
                            continue
                        wait_bound = tuple(
                            -math.inf if s >= w - d - IC_TOLERANCE else w - d
                            for s, w, d in zip(stop_last, label.wait_bound, delta)
                        )
                        for q2 in range(qi, m):
                            portion = tables.portions[qi][q2]
                            remaining = tables.remaining[q2]
                            welfare = label.welfare + release_gain + value * sum(
                                p * d for p, d in zip(portion, disc)
                            )
                            new_invest = tuple(
                                min(a, s) if p > 0 else a for a, s, p in zip(invest_bound, stop, portion)
                            )
                            new_wait = tuple(
                                max(w, s) if r > 0 else w for w, s, r in zip(wait_bound, stop, remaining)
                            )
                            # a later stop cannot both reach a cohort's wait bound and stay under its invest bound
                            if any(w > a + IC_TOLERANCE for w, a in zip(new_wait, new_invest)):
                                continue
                            if last:
                                if any(a < -IC_TOLERANCE for a in new_invest) or any(
                                    w > IC_TOLERANCE for w in new_wait
                                ):
                                    continue
                                future = 0.0
                            else:
                                future = tables.good_left[g2] * sum(d * r for d, r in zip(disc_next, remaining))
                            if welfare + future < lower_bound:
                                continue
                            explored += 1
                            key = (q2, g2, b2)
                            _insert(
                                new_fronts.setdefault(key, []),
                                _Label(welfare, new_invest, new_wait, label, key),
                            )
        fronts = new_fronts
        size = sum(len(f) for f in fronts.values())
        logger.debug(f"Step {k}: {len(fronts)} states, {size} labels")
        if size > label_budget:
            exhaustive = False
            logger.warning(f"Label budget exceeded at step {k} ({size} labels); continuing as a beam search")
            fronts = _beam(fronts, label_budget, tables, disc_next)

    finals = [label for front in fronts.values() for label in front]
    if not finals:
        raise ConstraintViolationError("no feasible grid path")
    best = max(finals, key=lambda label: label.welfare)
    problem = _reconstruct(best, levels, spec)
    per_cohort = grid_welfare(market, problem)
    report = discrete_ic_report(market, problem)
    flags = shape_flags(market, problem)
    logger.info(
        f"Grid optimum {best.welfare:.6f} ({'exhaustive' if exhaustive else 'beam'}), "
        f"IC {'ok' if report.passed else 'violated'}, shape {tuple(flags)}"
    )
    return GridSolution(
        paths=problem,
        welfare=best.welfare,
        ic_ok=report.passed,
        shape_flags=flags,
        exhaustive=exhaustive,
        per_cohort=per_cohort,
        labels_explored=explored,
    )


def _beam(fronts, budget: int, tables: _Tables, disc_next) -> Dict[Tuple[int, int, int], List[_Label]]:
    def bound(label: _Label) -> float:
        qi, gi, _ = label.state
        return label.welfare + tables.good_left[gi] * sum(d * r for d, r in zip(disc_next, tables.remaining[qi]))

    labels = [label for front in fronts.values() for label in front]
    # half by upper bound, the rest by welfare so far so some completed path survives
    by_bound = sorted(labels, key=bound, reverse=True)[: max(budget // 2, 1)]
    chosen = {id(label) for label in by_bound}
    by_welfare = [label for label in sorted(labels, key=lambda label: label.welfare, reverse=True) if id(label) not in chosen]
    kept = by_bound + by_welfare[: max(budget - len(by_bound), 0)]
    beam: Dict[Tuple[int, int, int], List[_Label]] = {}
    for label in kept:
        beam.setdefault(label.state, []).append(label)
    return beam


def _step_terms(market: Market, problem: GridProblem):
    """Per-step discount factors, pickups, no-news values and investing portions."""
    discounts = np.array([c.discount for c in market.cohorts])
    times = problem.times
    disc = np.exp(-np.outer(times, discounts))
    previous_g = np.concatenate([[0.0], problem.zg_grid[:-1]])
    pickups = market.prior * market.v_good * (
        np.exp(-market.rate_good * previous_g) - np.exp(-market.rate_good * problem.zg_grid)
    )
    values = np.asarray(no_news_value(market, problem.zg_grid, problem.zb_grid), dtype=float).reshape(-1)
    previous_q = np.concatenate([[0.0], problem.q_grid[:-1]])
    portions = np.array([_portions(market, a, b) for a, b in zip(previous_q, problem.q_grid)])
    before = np.array([_remaining(market, a) for a in previous_q])
    after = np.array([_remaining(market, b) for b in problem.q_grid])
    return disc, pickups, values, portions, before, after


def grid_welfare(market: Market, problem: GridProblem) -> Tuple[float, ...]:
    """Per-cohort welfare of a discrete path."""
    disc, pickups, values, portions, before, _ = _step_terms(market, problem)
    per_cohort = (disc * (pickups[:, None] * before + values[:, None] * portions)).sum(axis=0)
    return tuple(float(v) for v in per_cohort)


def discrete_ic_report(market: Market, problem: GridProblem, tolerance: float = 1e-9) -> ICReport:
    """
    Recheck a discrete path against every grid stop time by direct enumeration.

    Slacks are conditional on no news at the decision step, as in the
    continuous-time checker.
    """
    disc, pickups, values, portions, _, after = _step_terms(market, problem)
    K = len(problem.q_grid) - 1
    times = problem.times
    samples: List[ICSample] = []
    for j in range(market.n):
        accrued = np.cumsum(disc[:, j] * pickups)
        stops = disc[:, j] * values
        for k in range(K + 1):
            probability = float(no_news_probability(market, problem.zg_grid[k], problem.zb_grid[k]))
            later = accrued[k + 1:] - accrued[k] + stops[k + 1:]
            never = accrued[K] - accrued[k]
            if portions[k, j] > 0:
                for s, deviation in zip(range(k + 1, K + 1), later):
                    samples.append(ICSample(j + 1, times[k], times[s], (stops[k] - deviation) / probability, "invest"))
                samples.append(ICSample(j + 1, times[k], math.inf, (stops[k] - never) / probability, "invest"))
            if after[k, j] > 0:
                best = max(float(later.max()) if later.size else -math.inf, never)
                samples.append(ICSample(j + 1, times[k], math.nan, (best - stops[k]) / probability, "wait"))

    min_slack = min((s.slack for s in samples), default=math.inf)
    return ICReport(samples=samples, min_slack=float(min_slack), passed=bool(min_slack >= -tolerance), tolerance=tolerance)


def shape_flags(market: Market, problem: GridProblem) -> ShapeFlags:
    """
    Discrete shape conditions of the optimal plan, each allowed one grid cell of lag:
    the bad news of cohorts 1..i is out when cohort i+1 starts investing, and no good
    news is out before the last investing cohort's phase.
    """
    q = problem.q_grid
    hat_i = market.cohort_at(max(float(q[-1]) - 1e-12, 0.0)) if q[-1] > 0 else 1

    def start_step(cohort: int) -> Optional[int]:
        steps = np.nonzero(q > market.cumulative_mass(cohort - 1) + 1e-12)[0]
        return int(steps[0]) if steps.size else None

    bad_ok = True
    for i in range(1, hat_i):
        k = start_step(i + 1)
        # nothing can be released at step 0
        if not k:
            continue
        level = market.cumulative_mass(i) - 1e-12
        window = problem.zb_grid[k:k + 2]
        bad_ok = bad_ok and bool(np.any(window >= level))

    k_bar = start_step(hat_i) or 0
    good_ok = bool(np.all(problem.zg_grid[: max(k_bar - 1, 0)] <= 1e-12))
    return ShapeFlags(bad_caps_slack_before_tbar=bad_ok, good_caps_zero_before_tbar=good_ok)


@dataclass(frozen=True)
class RefinementReport:
    table: pd.DataFrame
    extrapolated: float
    monotone: bool


def grid_refinement(
    market: Market,
    dts: Sequence[float],
    horizon: float,
    mass_step: float,
    label_budget: int = DEFAULT_LABEL_BUDGET,
) -> RefinementReport:
    """
    Solve the grid problem for a sequence of time steps and extrapolate the
    optimum to dt -> 0 assuming first-order convergence.
    """
    rows = []
    for dt in sorted(dts, reverse=True):
        solution = grid_search(market, GridSpec(dt=dt, horizon=horizon, mass_step=mass_step), label_budget)
        rows.append(
            {
                "dt": dt,
                "welfare": solution.welfare,
                "exhaustive": solution.exhaustive,
                "ic_ok": solution.ic_ok,
                "bad_shape": solution.shape_flags.bad_caps_slack_before_tbar,
                "good_shape": solution.shape_flags.good_caps_zero_before_tbar,
            }
        )
    table = pd.DataFrame(rows)
    welfare = table["welfare"].to_numpy()
    steps = table["dt"].to_numpy()
    if len(rows) >= 2:
        h1, h2 = steps[-2], steps[-1]
        extrapolated = float((h1 * welfare[-1] - h2 * welfare[-2]) / (h1 - h2))
    else:
        extrapolated = float(welfare[-1])
    table["error_estimate"] = np.abs(extrapolated - welfare)
    monotone = bool(np.all(np.diff(welfare) >= -1e-12))
    logger.info(f"Grid refinement: extrapolated optimum {extrapolated:.6f}, monotone={monotone}")
    return RefinementReport(table=table, extrapolated=extrapolated, monotone=monotone)


def main():
    from model.loader import load_market

    logging.basicConfig(level=logging.INFO)
    market = load_market(Path(__file__).parent.parent.parent / "config" / "two_cohort_market.yaml")
    solution = grid_search(market, GridSpec(dt=0.02, horizon=0.12, mass_step=0.5))
    print(solution.paths.to_frame(market).to_string(index=False))
    print(f"welfare {solution.welfare:.6f}, IC ok {solution.ic_ok}, shape {tuple(solution.shape_flags)}")


if __name__ == "__main__":
    main()
