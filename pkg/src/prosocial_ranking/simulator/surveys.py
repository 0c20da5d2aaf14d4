"""Survey waves generated from one latent factor per outcome index.

Each index has a user-wave latent ``P = sqrt(r) A_i + sqrt(1 - r) u_iw +
wave shock + tau D``. Items load on ``P`` with loading ``rho``; ``tau`` is
scaled so the injected effect is in SD units of the item sum.
"""
from __future__ import annotations

import datetime as dt
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import pandas as pd

from ..analysis.indices import DEFAULT_SPECS, ITEMS, IndexSpec
from ..assignment import InterventionCalendar
from ..rankers import RankerId
from .attrition import AttritionResult
from .config import SimConfig
from .outcomes import start_for
from .population import STREAM_SURVEY, SyntheticUser, global_rng, user_rng

WAVES = ("baseline", "midline", "endline")


@dataclass(frozen=True)
class ItemModel:
    mean: float
    sd: float


# marginal location/scale of each numeric item before clipping
ITEM_MODELS: dict[str, ItemModel] = {
    "ft_in": ItemModel(75, 20),
    "ft_out": ItemModel(30, 22),
    "sd_in": ItemModel(5.5, 1.2),
    "sd_out": ItemModel(4.0, 1.6),
    **{f"who5_{k}": ItemModel(3.2, 1.0) for k in range(1, 6)},
    "kalmoe_1": ItemModel(12, 18),
    "kalmoe_3": ItemModel(12, 18),
    "meta_spv_1": ItemModel(40, 25),
    "meta_spv_2": ItemModel(40, 25),
    "empathy_difficult": ItemModel(3.5, 1.5),
    "empathy_important": ItemModel(5.5, 1.2),
    "knowledge": ItemModel(2.5, 1.3),
    "gss_trust": ItemModel(55, 22),
}
# latent cut points for Yes/Not sure/No answers
NEELY_CUTS = (-0.35, 0.35)

SURVEY_META = ["user_id", "wave", "date", "cohort", "arm", "D", "completed"]
ROSTER_COLUMNS = [
    "user_id", "arm", "treated", "cohort", "exit_date", "completed_mid", "completed_end", "completed",
    "Democrat", "White", "Male", "Young", "Bachelors", "SocialMedia90", "IncomeK", "Ideology",
]


def effect_scale(effect: float, k: int, rho: float) -> float:
    """Latent shift that moves a k-item equal-loading sum by ``effect`` SDs."""
    return effect * np.sqrt(k**2 * rho**2 + k * (1 - rho**2)) / (k * rho)


def wave_dates(cfg: SimConfig, u: SyntheticUser, rng: np.random.Generator) -> list[dt.date]:
    out = [u.enrollment.enrolled_at]
    for lo, hi in (cfg.survey.midline, cfg.survey.endline):
        a, b = dt.date.fromisoformat(lo), dt.date.fromisoformat(hi)
        out.append(a + dt.timedelta(days=int(rng.integers((b - a).days + 1))))
    return out


def survey_start(u: SyntheticUser, calendar: InterventionCalendar) -> dt.date | None:
    """First date any of the user's platforms is treated; None for controls."""
    if u.arm is RankerId.CONTROL:
        return None
    return min(start_for(u, calendar, p) for p, used in u.uses.items() if used)


def _item_value(name: str, direction: int, v: float) -> float | str:
    item = ITEMS[name]
    if item.categorical:
        s = direction * v
        return "No" if s < NEELY_CUTS[0] else ("Not sure" if s < NEELY_CUTS[1] else "Yes")
    m = ITEM_MODELS[name]
    return float(min(item.hi, max(item.lo, round(m.mean + m.sd * direction * v))))


def user_survey(
    cfg: SimConfig,
    u: SyntheticUser,
    calendar: InterventionCalendar,
    completed: tuple[bool, bool, bool],
    shocks: dict[str, np.ndarray],
    specs: Sequence[IndexSpec] = DEFAULT_SPECS,
) -> list[dict]:
    sc = cfg.survey
    rng = user_rng(cfg.seed, u.index, STREAM_SURVEY)
    dates = wave_dates(cfg, u, rng)
    start = survey_start(u, calendar)
    rows = []
    ability = {spec.name: rng.normal() for spec in specs}
    for w, (wave, day) in enumerate(zip(WAVES, dates)):
        D = int(start is not None and day >= start)
        row: dict = {
            "user_id": u.user_id, "wave": wave, "date": day.isoformat(),
            "cohort": u.enrollment.enrolled_at.isoformat(), "arm": u.arm.value, "D": D,
            "completed": int(completed[w]),
        }
        for spec in specs:
            k, rho = len(spec.items), sc.loading
            tau = effect_scale(cfg.survey_effect(u.arm, spec.name), k, rho)
            p = (
                np.sqrt(sc.persistence) * ability[spec.name]
                + np.sqrt(1 - sc.persistence) * rng.normal()
                + shocks[spec.name][w]
                + tau * D
            )
            noise = rng.normal(size=k)
            miss = rng.random(k) < sc.item_missing_rate
            for j, name in enumerate(spec.items):
                if not completed[w] or miss[j]:
                    row[name] = np.nan
                    continue
                v = rho * p + np.sqrt(1 - rho**2) * noise[j]
                row[name] = _item_value(name, spec.directions[j], v)
        rows.append(row)
    return rows


def make_surveys(
    cfg: SimConfig,
    users: Sequence[SyntheticUser],
    calendar: InterventionCalendar,
    attrition: AttritionResult,
    specs: Sequence[IndexSpec] = DEFAULT_SPECS,
) -> pd.DataFrame:
    """All user-wave rows, one per user and wave, with a ``completed`` flag."""
    g = global_rng(cfg.seed, STREAM_SURVEY)
    shocks = {spec.name: g.normal(0.0, cfg.survey.wave_shock_sd, size=len(WAVES)) for spec in specs}
    items = [i for spec in specs for i in spec.items]
    rows = []
    for u in users:
        flags = (True, attrition.completed_mid[u.user_id], attrition.completed_end[u.user_id])
        rows += user_survey(cfg, u, calendar, flags, shocks, specs)
    df = pd.DataFrame(rows, columns=SURVEY_META + items)
    return df.sort_values(["user_id", "wave"], key=_wave_key, kind="stable").reset_index(drop=True)


def _wave_key(col: pd.Series) -> pd.Series:
    return col.map({w: k for k, w in enumerate(WAVES)}) if col.name == "wave" else col


def make_roster(users: Sequence[SyntheticUser], attrition: AttritionResult) -> pd.DataFrame:
    rows = []
    for u in users:
        mid, end = attrition.completed_mid[u.user_id], attrition.completed_end[u.user_id]
        ex = attrition.exit_dates[u.user_id]
        rows.append({
            "user_id": u.user_id, "arm": u.arm.value, "treated": int(u.arm is not RankerId.CONTROL),
            "cohort": u.enrollment.enrolled_at.isoformat(),
            "exit_date": "" if ex == dt.date.max else ex.isoformat(),
            "completed_mid": int(mid), "completed_end": int(end), "completed": int(mid or end),
            **{k: u.covariates[k] for k in ROSTER_COLUMNS[8:]},
        })
    return pd.DataFrame(rows, columns=ROSTER_COLUMNS)
