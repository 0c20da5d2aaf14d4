"""Daily behavioral panel: active minutes and engagement counts.

The conditional mean is additive, ``mu_i + shock_date + beta * D``, and a
positive mean-one factor multiplies it, so outcomes stay nonnegative while
the estimator's identifying assumptions hold for the mean.
"""
from __future__ import annotations

import datetime as dt
from typing import Sequence

import numpy as np
import pandas as pd
from scipy.signal import lfilter

from ..assignment import InterventionCalendar, control_pseudo_start, treatment_start
from ..feed import Platform
from ..rankers import RankerId
from .config import ConfigError, SimConfig
from .population import STREAM_PANEL, SyntheticUser, global_rng, user_rng

PANEL_COLUMNS = [
    "user_id", "platform", "date", "cohort", "arm", "start", "D", "active_minutes", "engagement",
    "Democrat", "White", "Male",
]


def date_shocks(cfg: SimConfig) -> dict[Platform, np.ndarray]:
    rng = global_rng(cfg.seed, STREAM_PANEL)
    return {p: rng.normal(0.0, cfg.date_shock_sd[p.value], size=cfg.n_days) for p in Platform}


def start_for(u: SyntheticUser, calendar: InterventionCalendar, platform: Platform, holdback_days: int = 14) -> dt.date:
    """Treatment start for treated users, pooled pseudo-start for controls."""
    if u.arm is RankerId.CONTROL:
        return control_pseudo_start(u.enrollment, calendar, platform, holdback_days=holdback_days)
    return treatment_start(u.enrollment, calendar, platform, holdback_days)


def noise_factors(cfg: SimConfig, rng: np.random.Generator, n: int) -> np.ndarray:
    nz = cfg.noise
    if nz.kind == "gamma":
        return rng.gamma(nz.shape, 1.0 / nz.shape, size=n)
    x = rng.normal(0.0, nz.sigma * np.sqrt(1 - nz.rho**2), size=n)
    x[0] = rng.normal(0.0, nz.sigma)  # stationary start
    z = lfilter([1.0], [1.0, -nz.rho], x)
    return np.exp(z - nz.sigma**2 / 2)


def user_panel(
    cfg: SimConfig,
    u: SyntheticUser,
    calendar: InterventionCalendar,
    shocks: dict[Platform, np.ndarray],
    date_str: np.ndarray | None = None,
) -> dict[str, np.ndarray] | None:
    """All platform-day rows for one user, drawn from that user's own stream."""
    rng = user_rng(cfg.seed, u.index, STREAM_PANEL)
    first = max(u.enrollment.enrolled_at, cfg.start_date)
    last = min(u.exit_date, cfg.end_date)
    n = (last - first).days
    if n <= 0:
        return None
    if date_str is None:
        date_str = np.array([d.isoformat() for d in cfg.dates()], dtype=object)
    offset = (first - cfg.start_date).days
    days = np.arange(offset, offset + n)
    parts: dict[str, list[np.ndarray]] = {k: [] for k in PANEL_COLUMNS}
    treated = u.arm is not RankerId.CONTROL
    for p in Platform:
        if not u.uses[p]:
            continue
        start = start_for(u, calendar, p)
        start_off = (start - cfg.start_date).days
        D = ((days >= start_off) & treated).astype(np.int64)
        mean = u.mu[p] + shocks[p][days] + cfg.time_effect(u.arm, p) * D
        if np.any(mean <= 0):
            raise ConfigError(
                f"user {u.user_id} on {p.value}: additive mean not positive; raise min_user_mean above shocks+effects"
            )
        y = mean * noise_factors(cfg, rng, n)
        eng_mean = cfg.engagement_per_minute * (u.mu[p] + shocks[p][days]) + cfg.engagement_effect(u.arm, p) * D
        eng = rng.poisson(np.clip(eng_mean, 0.0, None))
        const = {
            "user_id": u.user_id, "platform": p.value, "cohort": u.enrollment.enrolled_at.isoformat(),
            "arm": u.arm.value, "start": start.isoformat(),
            **{k: int(u.covariates[k]) for k in ("Democrat", "White", "Male")},
        }
        for k, v in const.items():
            parts[k].append(np.full(n, v, dtype=object if isinstance(v, str) else np.int64))
        parts["date"].append(date_str[days])
        parts["D"].append(D)
        parts["active_minutes"].append(np.round(y, 6))
        parts["engagement"].append(eng.astype(np.int64))
    if not parts["D"]:
        return None
    return {k: np.concatenate(v) for k, v in parts.items()}


def make_panel(
    cfg: SimConfig, users: Sequence[SyntheticUser], calendar: InterventionCalendar
) -> pd.DataFrame:
    shocks = date_shocks(cfg)
    date_str = np.array([d.isoformat() for d in cfg.dates()], dtype=object)
    chunks = [c for u in users if (c := user_panel(cfg, u, calendar, shocks, date_str)) is not None]
    if not chunks:
        return pd.DataFrame({k: pd.Series(dtype=object) for k in PANEL_COLUMNS})
    df = pd.DataFrame({k: np.concatenate([c[k] for c in chunks]) for k in PANEL_COLUMNS})
    return df.sort_values(["user_id", "platform", "date"], kind="stable").reset_index(drop=True)
