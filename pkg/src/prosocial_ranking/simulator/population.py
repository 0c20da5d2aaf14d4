"""Synthetic participants with per-user random streams."""
from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field

import numpy as np

from ..assignment import Enrollment, assign
from ..feed import Platform
from ..scoring import OPINION_FIELDS
from .config import SimConfig

# stream tags keep draws for different purposes independent of each other
STREAM_POPULATION = 1
STREAM_PANEL = 2
STREAM_SURVEY = 3
STREAM_SESSIONS = 4
STREAM_ATTRITION = 5

COVARIATE_TARGETS = {
    "Democrat": 0.616,
    "White": 0.649,
    "Male": 0.471,
    "Young": 0.326,
    "Bachelors": 0.435,
    "SocialMedia90": 0.517,
}
INCOME_MEAN_K = 68.6
INCOME_SIGMA = 0.6

# linear completion model around the target rate; keys are covariates
COMPLETION_SLOPES = {"White": 0.06, "Male": -0.04, "Young": -0.08, "Bachelors": 0.08, "Democrat": 0.03}


def user_rng(seed: int, index: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, index, stream]))


def global_rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, 2**32 - 1, stream]))


@dataclass
class SyntheticUser:
    index: int
    enrollment: Enrollment
    covariates: dict[str, float]
    profile: dict[str, int | None]
    uses: dict[Platform, bool]
    mu: dict[Platform, float]
    completion_prob: float
    exit_date: dt.date = dt.date.max
    ideology: int = 4
    extra: dict = field(default_factory=dict)

    @property
    def user_id(self) -> str:
        return self.enrollment.user_id

    @property
    def arm(self):
        return self.enrollment.arm

    def active_on(self, day: dt.date) -> bool:
        return self.enrollment.enrolled_at <= day < self.exit_date


def user_id_for(index: int) -> str:
    return f"u{index:06d}"


def make_user(cfg: SimConfig, index: int) -> SyntheticUser:
    rng = user_rng(cfg.seed, index, STREAM_POPULATION)
    uid = user_id_for(index)
    es = dt.date.fromisoformat(cfg.enroll_start)
    span = (dt.date.fromisoformat(cfg.enroll_end) - es).days + 1
    enrolled = es + dt.timedelta(days=int(rng.integers(span)))
    cov = {k: float(rng.random() < p) for k, p in COVARIATE_TARGETS.items()}
    mu_log = np.log(INCOME_MEAN_K) - INCOME_SIGMA**2 / 2
    cov["IncomeK"] = float(np.exp(rng.normal(mu_log, INCOME_SIGMA)))
    ideology = int(rng.integers(1, 4)) if cov["Democrat"] else int(rng.integers(4, 8))
    lean = (ideology - 4) / 3.0
    profile: dict[str, int | None] = {}
    for name in OPINION_FIELDS:
        v = 3 + 1.5 * lean + rng.normal(0, 0.8)
        profile[name] = int(np.clip(np.rint(v), 1, 5)) if rng.random() < 0.9 else None
    arm = assign(uid, cfg.seed)
    uses = {p: bool(rng.random() < cfg.platform_use[p.value]) for p in Platform}
    if not any(uses.values()):
        uses[Platform(list(cfg.platform_use)[int(rng.integers(len(cfg.platform_use)))])] = True
    mu = {}
    for p in Platform:
        base = cfg.base_minutes[p.value]
        m = base * np.exp(rng.normal(-cfg.user_sigma**2 / 2, cfg.user_sigma))
        mu[p] = float(max(cfg.min_user_mean, m))
    p = cfg.survey.completion_target + sum(
        b * (cov[k] - COVARIATE_TARGETS[k]) for k, b in COMPLETION_SLOPES.items()
    )
    cov["Ideology"] = float(ideology)
    enrollment = Enrollment(uid, enrolled, arm, dict(cov))
    return SyntheticUser(index, enrollment, cov, profile, uses, mu, float(np.clip(p, 0.02, 0.98)), ideology=ideology)


def make_population(cfg: SimConfig, indices: range | None = None) -> list[SyntheticUser]:
    idx = range(cfg.n_users) if indices is None else indices
    return [make_user(cfg, k) for k in idx]
