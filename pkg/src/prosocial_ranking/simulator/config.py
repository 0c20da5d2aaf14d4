"""Simulation configuration and ground-truth effects."""
from __future__ import annotations

import copy
import datetime as dt
import json
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Mapping

from ..feed import Platform
from ..rankers import TREATMENT_ARMS, RankerId


class ConfigError(ValueError):
    """Inconsistent simulation configuration."""


# pooled per-platform active-time effects in minutes/day, applied to every arm by default
DEFAULT_TIME_EFFECTS = {"Facebook": -0.37, "Twitter": 0.32, "Reddit": -0.195}

SURVEY_INDICES = ("polarization", "wellbeing", "violence", "metaperception", "empathy", "knowledge", "neely", "trust")


def _per_arm(values: Mapping[str, float]) -> dict[str, dict[str, float]]:
    return {arm.value: dict(values) for arm in TREATMENT_ARMS}


@dataclass
class NoiseConfig:
    """Multiplicative noise on daily outcomes.

    ``kind="gamma"`` draws iid Gamma(shape, 1/shape) factors; ``kind="ar1"``
    uses exp(z - var/2) with z an AR(1) series per user-platform.
    """

    kind: str = "gamma"
    shape: float = 2.0
    rho: float = 0.8
    sigma: float = 0.6


@dataclass
class SurveyConfig:
    midline: tuple[str, str] = ("2024-10-29", "2024-11-05")
    endline: tuple[str, str] = ("2025-01-10", "2025-01-20")
    completion_target: float = 0.53
    treated_completion_shift: float = 0.0
    item_missing_rate: float = 0.02
    loading: float = 0.7
    persistence: float = 0.6
    wave_shock_sd: float = 0.05
    effects: dict[str, dict[str, float]] = field(
        default_factory=lambda: _per_arm({k: (-0.027 if k == "polarization" else 0.0) for k in SURVEY_INDICES})
    )


@dataclass
class SimConfig:
    seed: int = 0
    n_users: int = 2000
    start: str = "2024-08-01"
    n_days: int = 120
    enroll_start: str = "2024-08-01"
    enroll_end: str = "2024-09-30"
    platform_use: dict[str, float] = field(default_factory=lambda: {"Facebook": 0.75, "Twitter": 0.55, "Reddit": 0.5})
    base_minutes: dict[str, float] = field(default_factory=lambda: {"Facebook": 25.0, "Twitter": 20.0, "Reddit": 18.0})
    user_sigma: float = 0.5
    min_user_mean: float = 6.0
    date_shock_sd: dict[str, float] = field(default_factory=lambda: {"Facebook": 1.0, "Twitter": 1.0, "Reddit": 1.0})
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    time_effects: dict[str, dict[str, float]] = field(default_factory=lambda: _per_arm(DEFAULT_TIME_EFFECTS))
    engagement_per_minute: float = 0.3
    engagement_effects: dict[str, dict[str, float]] = field(
        default_factory=lambda: _per_arm({p.value: 0.0 for p in Platform})
    )
    daily_exit_hazard: dict[str, float] = field(default_factory=lambda: {a.value: 0.004 for a in RankerId})
    survey: SurveyConfig = field(default_factory=SurveyConfig)
    # closed-loop serving knobs
    mode: str = "closed_loop"
    sessions_per_day: dict[str, float] = field(default_factory=lambda: {"Facebook": 1.0, "Twitter": 1.0, "Reddit": 1.0})
    comment_share: float = 0.2
    corpus_per_day: int = 400
    ingest_per_tick: int = 16
    tick_hours: int = 3
    workers: int = 1

    # derived helpers
    @property
    def start_date(self) -> dt.date:
        return dt.date.fromisoformat(self.start)

    @property
    def end_date(self) -> dt.date:
        return self.start_date + dt.timedelta(days=self.n_days)

    def dates(self) -> list[dt.date]:
        return [self.start_date + dt.timedelta(days=k) for k in range(self.n_days)]

    def time_effect(self, arm: RankerId, platform: Platform) -> float:
        if arm is RankerId.CONTROL:
            return 0.0
        return float(self.time_effects.get(arm.value, {}).get(platform.value, 0.0))

    def engagement_effect(self, arm: RankerId, platform: Platform) -> float:
        if arm is RankerId.CONTROL:
            return 0.0
        return float(self.engagement_effects.get(arm.value, {}).get(platform.value, 0.0))

    def survey_effect(self, arm: RankerId, index: str) -> float:
        if arm is RankerId.CONTROL:
            return 0.0
        return float(self.survey.effects.get(arm.value, {}).get(index, 0.0))

    def validate(self) -> None:
        if self.n_users < 0 or self.n_days < 0:
            raise ConfigError("n_users and n_days must be nonnegative")
        es, ee = dt.date.fromisoformat(self.enroll_start), dt.date.fromisoformat(self.enroll_end)
        if ee < es:
            raise ConfigError("enroll_end precedes enroll_start")
        if es < self.start_date or (self.n_days and ee >= self.end_date):
            raise ConfigError("enrollment window must lie inside the simulated calendar")
        mid0, mid1 = (dt.date.fromisoformat(x) for x in self.survey.midline)
        end0, end1 = (dt.date.fromisoformat(x) for x in self.survey.endline)
        if not (mid0 <= mid1 < end0 <= end1):
            raise ConfigError("survey windows must be ordered midline then endline")
        if mid0 <= ee:
            raise ConfigError("midline wave opens before enrollment closes")
        if not 0 < self.survey.completion_target < 1:
            raise ConfigError("completion_target must be in (0, 1)")
        if not 0 < self.survey.loading <= 1:
            raise ConfigError("survey loading must be in (0, 1]")
        if self.noise.kind not in ("gamma", "ar1"):
            raise ConfigError(f"unknown noise kind {self.noise.kind!r}")
        if self.mode not in ("closed_loop", "panel_only"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        for p in Platform:
            for key in ("platform_use", "base_minutes", "date_shock_sd"):
                if p.value not in getattr(self, key):
                    raise ConfigError(f"{key} lacks {p.value}")
            worst_effect = max((abs(self.time_effect(a, p)) for a in TREATMENT_ARMS), default=0.0)
            if self.min_user_mean <= worst_effect:
                raise ConfigError(f"min_user_mean {self.min_user_mean} does not exceed the {p.value} effect size")
        for arm in list(self.time_effects) + list(self.survey.effects) + list(self.daily_exit_hazard):
            RankerId(arm)

    def to_record(self) -> dict:
        return asdict(self)

    @classmethod
    def from_record(cls, rec: Mapping[str, Any]) -> "SimConfig":
        rec = copy.deepcopy(dict(rec))
        known = {f.name for f in fields(cls)}
        unknown = set(rec) - known
        if unknown:
            raise ConfigError(f"unknown simulator config keys: {sorted(unknown)}")
        if "noise" in rec:
            rec["noise"] = NoiseConfig(**rec["noise"])
        if "survey" in rec:
            s = dict(rec["survey"])
            for k in ("midline", "endline"):
                if k in s:
                    s[k] = tuple(s[k])
            if "effects" in s:
                merged = SurveyConfig().effects
                for arm, eff in s["effects"].items():
                    merged.setdefault(arm, {}).update(eff)
                s["effects"] = merged
            rec["survey"] = SurveyConfig(**s)
        cfg = cls(**rec)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str) -> "SimConfig":
        with open(path, encoding="utf-8") as fp:
            return cls.from_record(json.load(fp))
