"""Extension dropout and survey completion draws."""
from __future__ import annotations

import datetime as dt
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from ..rankers import RankerId
from .population import SyntheticUser


@dataclass
class AttritionResult:
    exit_dates: dict[str, dt.date]
    completed_mid: dict[str, bool]
    completed_end: dict[str, bool]
    retention: pd.DataFrame

    def completed_any(self, user_id: str) -> bool:
        return self.completed_mid[user_id] or self.completed_end[user_id]


def retention_series(users: Sequence[SyntheticUser], exit_dates: Mapping[str, dt.date], dates: Sequence[dt.date]) -> pd.DataFrame:
    """Share of each arm's ever-enrolled users still active on each date."""
    arms = sorted({u.arm.value for u in users})
    day = np.array([d.toordinal() for d in dates], dtype=np.int64)
    out = pd.DataFrame({"date": [d.isoformat() for d in dates]})
    for a in arms:
        members = [u for u in users if u.arm.value == a]
        enter = np.array([u.enrollment.enrolled_at.toordinal() for u in members])
        leave = np.array([exit_dates[u.user_id].toordinal() for u in members])
        active = (enter[None, :] <= day[:, None]) & (day[:, None] < leave[None, :])
        out[a] = active.mean(axis=1) if members else 0.0
    return out


def simulate_attrition(
    users: Sequence[SyntheticUser],
    hazards: Mapping[str, float],
    rng: np.random.Generator,
    dates: Sequence[dt.date] = (),
    treated_shift: float = 0.0,
) -> AttritionResult:
    """Geometric dropout per arm plus midline/endline completion flags.

    Each user completes at least one follow-up wave with probability
    ``completion_prob`` (shifted by ``treated_shift`` for treatment arms);
    the two waves are independent draws calibrated to that union rate.
    """
    exits: dict[str, dt.date] = {}
    mid: dict[str, bool] = {}
    end: dict[str, bool] = {}
    for u in users:
        h = float(hazards.get(u.arm.value, 0.0))
        if h > 0:
            stay = int(rng.geometric(h))
            exits[u.user_id] = u.enrollment.enrolled_at + dt.timedelta(days=stay)
        else:
            rng.random()  # keep one draw per user so hazards do not shift later streams
            exits[u.user_id] = dt.date.max
        p = u.completion_prob + (treated_shift if u.arm is not RankerId.CONTROL else 0.0)
        p = float(np.clip(p, 0.0, 1.0))
        q = 1.0 - np.sqrt(1.0 - p)
        mid[u.user_id] = bool(rng.random() < q)
        end[u.user_id] = bool(rng.random() < q)
    return AttritionResult(exits, mid, end, retention_series(users, exits, dates))
