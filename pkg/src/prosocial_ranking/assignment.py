"""Arm randomization, cohort bookkeeping and staggered start dates."""
from __future__ import annotations

import datetime as dt
import hashlib
import json
from dataclasses import dataclass, field
from typing import Mapping

from .feed import ContractViolation, Platform
from .rankers import TREATMENT_ARMS, RankerId

HOLDBACK_DAYS = 14
N_BUCKETS = 7

# bucket -> arm; two buckets of seven go to control
BUCKET_ARMS = (RankerId.CONTROL, RankerId.CONTROL) + TREATMENT_ARMS


def assign(user_id: str, seed: int) -> RankerId:
    h = hashlib.sha256(f"{seed}:{user_id}".encode("utf-8")).digest()
    return BUCKET_ARMS[int.from_bytes(h[:8], "big") % N_BUCKETS]


def _date(x) -> dt.date:
    return x if isinstance(x, dt.date) else dt.date.fromisoformat(str(x))


@dataclass(frozen=True)
class InterventionCalendar:
    """Earliest date each arm ran on each platform."""

    starts: Mapping[tuple[RankerId, Platform], dt.date]

    def start(self, arm: RankerId, platform: Platform) -> dt.date:
        try:
            return self.starts[(RankerId(arm), Platform(platform))]
        except KeyError:
            raise ContractViolation(f"no calendar start for {RankerId(arm).value} on {Platform(platform).value}") from None

    def earliest(self, platform: Platform | None = None) -> dt.date:
        vals = [d for (_, p), d in self.starts.items() if platform is None or p is Platform(platform)]
        return min(vals)

    def to_record(self) -> dict:
        return {f"{a.value}/{p.value}": d.isoformat() for (a, p), d in sorted(self.starts.items())}

    @classmethod
    def from_record(cls, rec: Mapping[str, str]) -> "InterventionCalendar":
        starts = {}
        for key, d in rec.items():
            arm, plat = key.split("/")
            starts[(RankerId(arm), Platform(plat))] = _date(d)
        return cls(starts)

    @classmethod
    def load(cls, path: str) -> "InterventionCalendar":
        with open(path, encoding="utf-8") as fp:
            return cls.from_record(json.load(fp))


def default_calendar() -> InterventionCalendar:
    early = dt.date(2024, 9, 6)
    starts = {}
    for p in Platform:
        starts[(RankerId.UPRANK_BRIDGING, p)] = early
        starts[(RankerId.UPRANK_BRIDGING_DOWNRANK_TOXIC, p)] = early
        late_fb = dt.date(2024, 10, 21)
        if p is Platform.FACEBOOK:
            starts[(RankerId.DIVERSE_APPROVAL, p)] = late_fb
            starts[(RankerId.ADD_NEWS, p)] = late_fb
            starts[(RankerId.CHALLENGING_STEREOTYPES, p)] = late_fb
        else:
            starts[(RankerId.DIVERSE_APPROVAL, p)] = dt.date(2024, 10, 5)
            starts[(RankerId.ADD_NEWS, p)] = dt.date(2024, 10, 5)
            starts[(RankerId.CHALLENGING_STEREOTYPES, p)] = dt.date(2024, 10, 6)
    return InterventionCalendar(starts)


@dataclass(frozen=True)
class Enrollment:
    user_id: str
    enrolled_at: dt.date
    arm: RankerId
    covariates: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "enrolled_at", _date(self.enrolled_at))
        object.__setattr__(self, "arm", RankerId(self.arm))

    @property
    def cohort(self) -> dt.date:
        return self.enrolled_at

    def to_record(self) -> dict:
        return {
            "user_id": self.user_id,
            "enrolled_at": self.enrolled_at.isoformat(),
            "arm": self.arm.value,
            "covariates": dict(self.covariates),
        }

    @classmethod
    def from_record(cls, rec: dict) -> "Enrollment":
        return cls(rec["user_id"], rec["enrolled_at"], rec["arm"], rec.get("covariates", {}))


def enroll(user_id: str, enrolled_at, seed: int, covariates: Mapping[str, float] | None = None) -> Enrollment:
    return Enrollment(user_id, _date(enrolled_at), assign(user_id, seed), dict(covariates or {}))


def holdback_end(e: Enrollment, days: int = HOLDBACK_DAYS) -> dt.date:
    return e.enrolled_at + dt.timedelta(days=days)


def treatment_start(
    e: Enrollment, calendar: InterventionCalendar, platform: Platform, holdback_days: int = HOLDBACK_DAYS
) -> dt.date:
    if e.arm is RankerId.CONTROL:
        raise ContractViolation("control users have no treatment start; use control_pseudo_start")
    return max(calendar.start(e.arm, platform), holdback_end(e, holdback_days))


def control_pseudo_start(
    e: Enrollment,
    calendar: InterventionCalendar,
    platform: Platform | None = None,
    versus: RankerId | None = None,
    holdback_days: int = HOLDBACK_DAYS,
) -> dt.date:
    """Counterfactual start for a control user.

    Pooled analyses use the earliest calendar start (on ``platform`` when
    given); a comparison against one arm uses that arm's start.
    """
    if versus is None:
        base = calendar.earliest(platform)
    else:
        base = calendar.start(versus, platform if platform is not None else Platform.TWITTER)
    return max(base, holdback_end(e, holdback_days))


def effective_start(
    e: Enrollment,
    calendar: InterventionCalendar,
    platform: Platform,
    versus: RankerId | None = None,
    holdback_days: int = HOLDBACK_DAYS,
) -> dt.date:
    """Treatment start for treated users, pseudo-start for controls."""
    if e.arm is RankerId.CONTROL:
        return control_pseudo_start(e, calendar, platform, versus, holdback_days)
    return treatment_start(e, calendar, platform, holdback_days)


def is_treated(e: Enrollment, calendar: InterventionCalendar, platform: Platform, day: dt.date) -> bool:
    return e.arm is not RankerId.CONTROL and _date(day) >= treatment_start(e, calendar, platform)
