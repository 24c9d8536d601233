"""
Adoption Paths
Piecewise description of invested mass, revealed evidence and beliefs absent news,
plus the recorder both path builders use
"""

import bisect
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from benchmark.flow import FlowSegment
from disclosure.policy import DisclosurePolicy
from model.belief import posterior_no_news
from model.market import ArrayLike, Market

logger = logging.getLogger(__name__)

MASS_EPS = 1e-12
PATH_COLUMNS = ["t", "q", "z_good", "z_bad", "x", "phase_index"]


class SegmentKind(str, Enum):
    FLOW = "flow"
    STALL = "stall"
    SAMPLED = "sampled"


class EventKind(str, Enum):
    PHASE_CHANGE = "phase-change"
    RELEASE = "release-atom"
    INVESTMENT = "investment-atom"
    STALL = "stall"
    TERMINATION = "termination"


@dataclass(frozen=True)
class Segment:
    """
    Time interval [t_start, t_end) without atoms or releases.

    A channel that tracks reveals q(t) throughout; otherwise its revealed
    amount stays at the level it had when the segment started.
    """

    t_start: float
    t_end: float
    cohort_index: int
    kind: SegmentKind
    q_start: float
    q_end: float
    good_level: float
    bad_level: float
    good_tracks: bool
    bad_tracks: bool
    flow: Optional[FlowSegment] = None
    slope: float = 0.0

    def mass_at(self, t: float) -> float:
        if self.kind == SegmentKind.STALL:
            return self.q_start
        if self.kind == SegmentKind.FLOW:
            return min(self.flow.mass_at(min(t, self.t_end)), self.q_end)
        return min(self.q_start + self.slope * (min(t, self.t_end) - self.t_start), self.q_end)

    def rate_at(self, t: float) -> float:
        if self.kind == SegmentKind.STALL:
            return 0.0
        if self.kind == SegmentKind.FLOW:
            return self.flow.rate_at(t)
        return self.slope

    def revealed_at(self, t: float) -> Tuple[float, float]:
        q = self.mass_at(t)
        return (q if self.good_tracks else self.good_level, q if self.bad_tracks else self.bad_level)

    @property
    def invests(self) -> bool:
        return self.kind != SegmentKind.STALL and self.q_end > self.q_start


@dataclass(frozen=True)
class Event:
    """
    Instantaneous event. Levels are the revealed amounts just before and
    just after the event; investment atoms leave them unchanged.
    """

    time: float
    kind: EventKind
    mass: float
    amount: float = 0.0
    cohort_index: Optional[int] = None
    channel: Optional[str] = None
    good_before: float = 0.0
    good_after: float = 0.0
    bad_before: float = 0.0
    bad_after: float = 0.0
    prob_good_news: float = 0.0
    prob_bad_news: float = 0.0
    detail: str = ""


@dataclass(frozen=True)
class EquilibriumPath:
    """
    Adoption path absent news.

    Segments are contiguous and cover [0, inf); events are ordered by time
    and, at equal times, by the order in which they happen.
    """

    market: Market
    policy: DisclosurePolicy
    segments: Tuple[Segment, ...]
    events: Tuple[Event, ...]
    hat_i: int
    phase_times: Tuple[float, ...]
    terminal_time: float

    @property
    def _starts(self) -> List[float]:
        return [s.t_start for s in self.segments]

    def segment_at(self, t: float) -> Segment:
        """Segment whose interval [t_start, t_end) contains t."""
        k = bisect.bisect_right(self._starts, t) - 1
        return self.segments[max(k, 0)]

    def segment_before(self, t: float) -> Optional[Segment]:
        """Segment containing the instants just before t (None at t = 0)."""
        k = bisect.bisect_left(self._starts, t) - 1
        return self.segments[k] if k >= 0 else None

    def _map(self, fn, t: ArrayLike) -> ArrayLike:
        if np.ndim(t) == 0:
            return fn(float(t))
        return np.array([fn(float(s)) for s in np.asarray(t, dtype=float)])

    def mass_at(self, t: ArrayLike) -> ArrayLike:
        return self._map(lambda s: self.segment_at(s).mass_at(s), t)

    def revealed_at(self, t: float) -> Tuple[float, float]:
        return self.segment_at(t).revealed_at(t)

    def revealed_before(self, t: float) -> Tuple[float, float]:
        segment = self.segment_before(t)
        return segment.revealed_at(t) if segment is not None else (0.0, 0.0)

    def revealed_good(self, t: ArrayLike) -> ArrayLike:
        return self._map(lambda s: self.revealed_at(s)[0], t)

    def revealed_bad(self, t: ArrayLike) -> ArrayLike:
        return self._map(lambda s: self.revealed_at(s)[1], t)

    def belief_at(self, t: ArrayLike) -> ArrayLike:
        return self._map(lambda s: posterior_no_news(self.market, *self.revealed_at(s)), t)

    def phase_index_at(self, t: ArrayLike) -> ArrayLike:
        return self._map(lambda s: self.segment_at(s).cohort_index, t)

    def events_of(self, kind: EventKind) -> List[Event]:
        return [e for e in self.events if e.kind == kind]

    @property
    def final_mass(self) -> float:
        return self.segments[-1].q_end

    def event_times(self) -> List[float]:
        return sorted({e.time for e in self.events if math.isfinite(e.time)})

    def breakpoints(self) -> List[float]:
        """Segment starts and event times."""
        points = set(self.event_times()) | {s.t_start for s in self.segments}
        return sorted(p for p in points if math.isfinite(p))

    def sample_times(self, n_points: int = 201, until: Optional[float] = None) -> np.ndarray:
        """Uniform grid merged with every breakpoint up to `until`."""
        points = self.breakpoints()
        if until is None:
            last = max(points, default=0.0)
            until = last if math.isfinite(self.terminal_time) else last + 5.0
            until = max(until, 1e-6)
        extra = [p for p in points if p <= until]
        return np.unique(np.concatenate([np.linspace(0.0, until, n_points), extra]))

    def to_frame(self, times: Optional[np.ndarray] = None) -> pd.DataFrame:
        times = self.sample_times() if times is None else np.asarray(times, dtype=float)
        revealed = np.array([self.revealed_at(float(s)) for s in times]).reshape(-1, 2)
        return pd.DataFrame(
            {
                "t": times,
                "q": np.asarray(self.mass_at(times), dtype=float),
                "z_good": revealed[:, 0],
                "z_bad": revealed[:, 1],
                "x": np.asarray(posterior_no_news(self.market, revealed[:, 0], revealed[:, 1]), dtype=float),
                "phase_index": np.asarray(self.phase_index_at(times), dtype=int),
            },
            columns=PATH_COLUMNS,
        )


class PathRecorder:
    """
    Accumulates segments and events while a path is built forward in time.

    Ordering at a single instant is: disclosures due at that time, then
    investment atoms, then disclosure of evidence the atom itself generates.
    """

    def __init__(self, market: Market, policy: DisclosurePolicy):
        self.market = market
        self.policy = policy
        self.t = 0.0
        self.q = 0.0
        self.z_good = 0.0
        self.z_bad = 0.0
        self.segments: List[Segment] = []
        self.events: List[Event] = []
        self.phase_times: List[float] = [0.0]
        self.last_investment_time = 0.0
        self._next_boundary = 1

    @property
    def belief(self) -> float:
        return posterior_no_news(self.market, self.z_good, self.z_bad)

    @property
    def complete(self) -> bool:
        return self.q >= self.market.total_mass - MASS_EPS

    def _record_boundaries(self) -> None:
        while (
            self._next_boundary <= self.market.n
            and self.q >= self.market.cumulative_mass(self._next_boundary) - MASS_EPS
        ):
            level = self.market.cumulative_mass(self._next_boundary)
            self.q = max(self.q, level) if abs(self.q - level) <= MASS_EPS else self.q
            self.phase_times.append(self.t)
            if self._next_boundary < self.market.n:
                self.events.append(
                    Event(
                        time=self.t,
                        kind=EventKind.PHASE_CHANGE,
                        mass=level,
                        cohort_index=self._next_boundary + 1,
                    )
                )
                logger.info(f"Cohort {self._next_boundary} done at t={self.t:.6f}")
            self._next_boundary += 1

    def add_segment(
        self,
        t_end: float,
        kind: SegmentKind,
        q_end: float,
        good_tracks: bool = False,
        bad_tracks: bool = False,
        flow: Optional[FlowSegment] = None,
        slope: float = 0.0,
    ) -> None:
        if t_end > self.t:
            self.segments.append(
                Segment(
                    t_start=self.t,
                    t_end=t_end,
                    cohort_index=self.market.cohort_at(self.q),
                    kind=kind,
                    q_start=self.q,
                    q_end=q_end,
                    good_level=self.z_good,
                    bad_level=self.z_bad,
                    good_tracks=good_tracks,
                    bad_tracks=bad_tracks,
                    flow=flow,
                    slope=slope,
                )
            )
        if q_end > self.q + MASS_EPS:
            self.last_investment_time = t_end
        self.t = t_end
        self.q = max(self.q, q_end)
        if good_tracks:
            self.z_good = max(self.z_good, self.q)
        if bad_tracks:
            self.z_bad = max(self.z_bad, self.q)
        self._record_boundaries()

    def invest_atom(self, q_new: float) -> None:
        """Invest an atom up to q_new at the current time, split by cohort."""
        while self.q < q_new - MASS_EPS:
            j = self.market.cohort_at(self.q)
            upper = min(self.market.cumulative_mass(j), q_new)
            self.events.append(
                Event(
                    time=self.t,
                    kind=EventKind.INVESTMENT,
                    mass=self.q,
                    amount=upper - self.q,
                    cohort_index=j,
                    good_before=self.z_good,
                    good_after=self.z_good,
                    bad_before=self.z_bad,
                    bad_after=self.z_bad,
                )
            )
            logger.info(f"Atom of {upper - self.q:.6f} by cohort {j} at t={self.t:.6f}")
            self.q = upper
            self.last_investment_time = self.t
            self._record_boundaries()

    def release(self) -> None:
        """Disclose whatever the caps at the current time allow."""
        cap_good, cap_bad = self.policy.caps_at(self.t)
        good = max(self.z_good, min(cap_good, self.q))
        bad = max(self.z_bad, min(cap_bad, self.q))
        released_good, released_bad = good - self.z_good, bad - self.z_bad
        if released_good > MASS_EPS or released_bad > MASS_EPS:
            x = self.belief
            channel = "both" if released_good > MASS_EPS and released_bad > MASS_EPS else (
                "good" if released_good > MASS_EPS else "bad"
            )
            self.events.append(
                Event(
                    time=self.t,
                    kind=EventKind.RELEASE,
                    mass=self.q,
                    amount=released_good + released_bad,
                    channel=channel,
                    good_before=self.z_good,
                    good_after=good,
                    bad_before=self.z_bad,
                    bad_after=bad,
                    prob_good_news=x * -math.expm1(-self.market.rate_good * released_good),
                    prob_bad_news=(1.0 - x) * -math.expm1(-self.market.rate_bad * released_bad),
                )
            )
            logger.info(
                f"Release at t={self.t:.6f}: good +{released_good:.6f}, bad +{released_bad:.6f}"
            )
        self.z_good, self.z_bad = good, bad

    def stall_until(self, t_end: float) -> None:
        self.add_segment(t_end, SegmentKind.STALL, self.q)
        if math.isfinite(t_end):
            self.release()

    def finish(self, detail: str) -> EquilibriumPath:
        """Close the path: record its end, then any disclosures still scheduled."""
        if math.isfinite(self.t):
            self.events.append(Event(time=self.t, kind=EventKind.TERMINATION, mass=self.q, detail=detail))
            for change in self.policy.change_times():
                if change > self.t:
                    self.stall_until(change)
            self.add_segment(math.inf, SegmentKind.STALL, self.q)

        q_final = self.q
        hat_i = 0 if q_final <= MASS_EPS else min(
            bisect.bisect_left(self.market.cumulative_masses, q_final - MASS_EPS) + 1, self.market.n
        )
        logger.info(f"Path finished ({detail}): q = {q_final:.6f}, last no-news cohort {hat_i}")
        return EquilibriumPath(
            market=self.market,
            policy=self.policy,
            segments=tuple(self.segments),
            events=tuple(self.events),
            hat_i=hat_i,
            phase_times=tuple(self.phase_times),
            terminal_time=self.last_investment_time,
        )


def path_from_schedule(
    market: Market,
    policy: DisclosurePolicy,
    times: Sequence[float],
    masses: Sequence[float],
) -> EquilibriumPath:
    """
    Build a path from an explicit investment schedule.

    q(t) starts from the implicit knot (0, 0) and interpolates linearly
    between consecutive knots (times[k], masses[k]); repeated times mark
    atoms, and q stays constant after the last knot. The schedule need not be an equilibrium, which makes
    this the entry point for evaluating candidate or counterexample paths.
    """
    times = [float(t) for t in times]
    masses = [float(m) for m in masses]
    if len(times) != len(masses) or not times:
        raise ValueError("times and masses must be nonempty and of equal length")
    if any(b < a for a, b in zip(times, times[1:])) or any(b < a for a, b in zip(masses, masses[1:])):
        raise ValueError("times and masses must be nondecreasing")
    if times[0] < 0 or masses[0] < 0 or masses[-1] > market.total_mass + MASS_EPS:
        raise ValueError("schedule must start at t >= 0 and stay within [0, F_n]")

    rec = PathRecorder(market, policy)
    rec.release()
    knots = [(0.0, 0.0)] + list(zip(times, masses))
    for (t0, q0), (t1, q1) in zip(knots, knots[1:]):
        if t1 == t0 or t1 <= rec.t:
            if q1 > rec.q + MASS_EPS:
                rec.invest_atom(q1)
                rec.release()
            continue
        slope = (q1 - q0) / (t1 - t0)
        if q0 > rec.q + MASS_EPS:
            rec.invest_atom(q0)
            rec.release()
        _sampled_piece(rec, t1, q1, slope)
    rec.release()
    return rec.finish("schedule")


def _sampled_piece(rec: PathRecorder, t_end: float, q_end: float, slope: float) -> None:
    """Advance a linear piece, splitting at cap changes and cap crossings."""
    while rec.t < t_end:
        next_change = min(rec.policy.next_change(rec.t), t_end)
        cap_good, cap_bad = rec.policy.caps_at(rec.t)
        good_tracks = cap_good > rec.q + MASS_EPS
        bad_tracks = cap_bad > rec.q + MASS_EPS
        stop = next_change
        for cap, tracks in ((cap_good, good_tracks), (cap_bad, bad_tracks)):
            if tracks and math.isfinite(cap) and slope > 0:
                stop = min(stop, rec.t + (cap - rec.q) / slope)
        q_stop = min(rec.q + slope * (stop - rec.t), q_end)
        rec.add_segment(
            stop,
            SegmentKind.SAMPLED if slope > 0 else SegmentKind.STALL,
            q_stop,
            good_tracks=good_tracks,
            bad_tracks=bad_tracks,
            slope=slope,
        )
        rec.release()
