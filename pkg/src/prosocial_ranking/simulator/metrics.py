"""Daily intervention intensity from the serving event log."""
from __future__ import annotations

from typing import Iterable, Mapping

import pandas as pd

METRICS = ("normalized_rank_change", "added", "removed")


def moving_average(x: pd.Series, window: int = 5) -> pd.Series:
    """Centered moving average; edge days average the part of the window that exists."""
    return x.rolling(window, center=True, min_periods=1).mean()


def intervention_metrics(
    events: Iterable[Mapping], kind: str | None = "Post", window: int = 5
) -> pd.DataFrame:
    """Per arm and calendar day: mean rank change, items added and removed per request.

    Returns long format with ``<metric>`` and ``<metric>_ma`` columns. Days
    without requests inside an arm's range are kept as missing rows so the
    moving average window is measured in calendar days.
    """
    df = pd.DataFrame(list(events))
    if df.empty:
        raise ValueError("event log is empty")
    if kind is not None:
        df = df[df["kind"] == kind]
    df = df.assign(date=pd.to_datetime(df["day"]))
    daily = df.groupby(["ranker", "date"])[list(METRICS)].mean()
    out = []
    for arm, g in daily.groupby(level="ranker"):
        g = g.droplevel("ranker")
        g = g.reindex(pd.date_range(g.index.min(), g.index.max(), freq="D"))
        for m in METRICS:
            g[f"{m}_ma"] = moving_average(g[m], window)
        g.insert(0, "ranker", arm)
        out.append(g.rename_axis("date").reset_index())
    res = pd.concat(out, ignore_index=True)
    res["date"] = res["date"].dt.strftime("%Y-%m-%d")
    return res
