"""
Disclosure Policies
Per-channel release schedules (caps on revealed evidence) and their YAML format
"""

import bisect
import logging
import math
from pathlib import Path
from typing import Annotated, Any, List, Literal, Tuple, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from model.errors import ConfigError

logger = logging.getLogger(__name__)


class Transparent(BaseModel):
    """Every unit of evidence is disclosed when generated."""

    model_config = ConfigDict(frozen=True)
    kind: Literal["transparent"] = "transparent"

    def cap_at(self, t: float) -> float:
        return math.inf

    def cap_before(self, t: float) -> float:
        return math.inf

    def change_times(self) -> Tuple[float, ...]:
        return ()


class Silent(BaseModel):
    """Nothing is ever disclosed."""

    model_config = ConfigDict(frozen=True)
    kind: Literal["silent"] = "silent"

    def cap_at(self, t: float) -> float:
        return 0.0

    def cap_before(self, t: float) -> float:
        return 0.0

    def change_times(self) -> Tuple[float, ...]:
        return ()


class DelayUntil(BaseModel):
    """Everything generated before release_time is withheld, then disclosure is transparent."""

    model_config = ConfigDict(frozen=True)
    kind: Literal["delay_until"] = "delay_until"
    release_time: float = Field(ge=0, allow_inf_nan=False)

    def cap_at(self, t: float) -> float:
        return math.inf if t >= self.release_time else 0.0

    def cap_before(self, t: float) -> float:
        return math.inf if t > self.release_time else 0.0

    def change_times(self) -> Tuple[float, ...]:
        return (self.release_time,)


class CapPoint(BaseModel):
    model_config = ConfigDict(frozen=True)
    time: float = Field(ge=0, allow_inf_nan=False)
    cap: float = Field(ge=0)


class StepCaps(BaseModel):
    """Right-continuous step cap through the points; 0 before the first point."""

    model_config = ConfigDict(frozen=True)
    kind: Literal["step_caps"] = "step_caps"
    points: Tuple[CapPoint, ...] = Field(min_length=1)

    @field_validator("points")
    @classmethod
    def _check_points(cls, points):
        times = [p.time for p in points]
        caps = [p.cap for p in points]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError(f"step-cap times must be strictly increasing, got {times}")
        if any(b < a for a, b in zip(caps, caps[1:])):
            raise ValueError(f"step caps must be nondecreasing, got {caps}")
        return points

    @property
    def _times(self) -> List[float]:
        return [p.time for p in self.points]

    def cap_at(self, t: float) -> float:
        k = bisect.bisect_right(self._times, t)
        return self.points[k - 1].cap if k > 0 else 0.0

    def cap_before(self, t: float) -> float:
        k = bisect.bisect_left(self._times, t)
        return self.points[k - 1].cap if k > 0 else 0.0

    def change_times(self) -> Tuple[float, ...]:
        return tuple(self._times)


Schedule = Annotated[Union[Transparent, Silent, DelayUntil, StepCaps], Field(discriminator="kind")]


class DisclosurePolicy(BaseModel):
    """Release schedules for the good-news and bad-news channels."""

    model_config = ConfigDict(frozen=True)

    good: Schedule
    bad: Schedule

    def caps_at(self, t: float) -> Tuple[float, float]:
        return self.good.cap_at(t), self.bad.cap_at(t)

    def caps_before(self, t: float) -> Tuple[float, float]:
        return self.good.cap_before(t), self.bad.cap_before(t)

    def change_times(self) -> Tuple[float, ...]:
        return tuple(sorted(set(self.good.change_times()) | set(self.bad.change_times())))

    def next_change(self, t: float) -> float:
        """First change time strictly after t (inf if none)."""
        times = self.change_times()
        k = bisect.bisect_right(times, t)
        return times[k] if k < len(times) else math.inf

    @classmethod
    def transparent(cls) -> "DisclosurePolicy":
        return cls(good=Transparent(), bad=Transparent())

    @classmethod
    def delayed_good_news(cls, release_time: float) -> "DisclosurePolicy":
        """Transparent bad news with good news withheld until release_time."""
        return cls(good=DelayUntil(release_time=release_time), bad=Transparent())


def parse_schedule(raw: Any) -> Union[Transparent, Silent, DelayUntil, StepCaps]:
    """
    Parse one channel block: 'transparent', 'silent', {delay_until: T}
    or {step_caps: [{time, cap}, ...]}.
    """
    if raw == "transparent":
        return Transparent()
    if raw == "silent":
        return Silent()
    if isinstance(raw, dict) and len(raw) == 1:
        (key, value), = raw.items()
        if key == "delay_until":
            return DelayUntil(release_time=value)
        if key == "step_caps":
            return StepCaps(points=tuple(CapPoint(**point) for point in value))
    raise ConfigError(f"Unrecognized schedule block: {raw!r}")


def schedule_to_raw(schedule) -> Any:
    if isinstance(schedule, (Transparent, Silent)):
        return schedule.kind
    if isinstance(schedule, DelayUntil):
        return {"delay_until": schedule.release_time}
    return {"step_caps": [{"time": p.time, "cap": p.cap} for p in schedule.points]}


def parse_policy(raw: Any) -> DisclosurePolicy:
    if not isinstance(raw, dict) or set(raw) != {"good", "bad"}:
        raise ConfigError(f"policy must have exactly the channel blocks 'good' and 'bad', got {raw!r}")
    try:
        return DisclosurePolicy(good=parse_schedule(raw["good"]), bad=parse_schedule(raw["bad"]))
    except (ValidationError, TypeError) as e:
        raise ConfigError(f"Invalid policy: {e}") from e


def load_policy(path: Union[str, Path]) -> DisclosurePolicy:
    path = Path(path)
    try:
        with open(path, "r") as f:
            raw = yaml.safe_load(f)
    except OSError as e:
        raise ConfigError(f"Cannot read policy file {path}: {e}") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"Error parsing policy file {path}: {e}") from e
    policy = parse_policy(raw)
    logger.info(f"Loaded policy from {path}: good={policy.good.kind}, bad={policy.bad.kind}")
    return policy


def dump_policy(policy: DisclosurePolicy, path: Union[str, Path]) -> None:
    raw = {"good": schedule_to_raw(policy.good), "bad": schedule_to_raw(policy.bad)}
    with open(path, "w") as f:
        yaml.safe_dump(raw, f, sort_keys=False)
