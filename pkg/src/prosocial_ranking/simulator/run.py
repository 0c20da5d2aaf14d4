"""Top-level simulation entry point and artifact writers."""
from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field, replace

import pandas as pd

from ..assignment import InterventionCalendar, default_calendar
from .attrition import AttritionResult, simulate_attrition
from .config import SimConfig
from .loop import run_loop
from .outcomes import make_panel
from .population import STREAM_ATTRITION, SyntheticUser, global_rng, make_population
from .surveys import make_roster, make_surveys

log = logging.getLogger(__name__)

FILES = {
    "panel": "panel.csv",
    "surveys": "surveys.csv",
    "roster": "roster.csv",
    "retention": "retention.csv",
    "events": "events.jsonl",
    "config": "config.json",
}


@dataclass
class RunResult:
    config: SimConfig
    users: list[SyntheticUser]
    attrition: AttritionResult
    panel: pd.DataFrame
    surveys: pd.DataFrame
    roster: pd.DataFrame
    events: list[dict] = field(default_factory=list)
    paths: dict[str, str] = field(default_factory=dict)

    def summary(self) -> dict:
        out = {
            "users": len(self.users),
            "days": self.config.n_days,
            "panel_rows": len(self.panel),
            "survey_rows": int(self.surveys["completed"].sum()) if len(self.surveys) else 0,
            "requests": len(self.events),
        }
        if self.events:
            ev = pd.DataFrame(self.events)
            out["rank_change_by_arm"] = {
                k: float(v) for k, v in ev.groupby("ranker")["normalized_rank_change"].mean().items()
            }
        return out


def write_csv(df: pd.DataFrame, path: str) -> None:
    df.to_csv(path, index=False, lineterminator="\n", float_format="%.10g")


def run(
    config: SimConfig,
    seed: int | None = None,
    out_dir: str | None = None,
    workers: int | None = None,
    mode: str | None = None,
    calendar: InterventionCalendar | None = None,
) -> RunResult:
    """Simulate one experiment; write artifacts to ``out_dir`` when given.

    ``mode="panel_only"`` skips the serving loop. The panel and surveys do
    not depend on served feeds, so both modes produce identical panels.
    """
    cfg = replace(config)
    if seed is not None:
        cfg.seed = seed
    if mode is not None:
        cfg.mode = mode
    if workers is not None:
        cfg.workers = workers
    cfg.validate()
    calendar = calendar or default_calendar()
    users = make_population(cfg)
    attr = simulate_attrition(
        users,
        cfg.daily_exit_hazard,
        global_rng(cfg.seed, STREAM_ATTRITION),
        cfg.dates(),
        cfg.survey.treated_completion_shift,
    )
    for u in users:
        u.exit_date = attr.exit_dates[u.user_id]
    panel = make_panel(cfg, users, calendar)
    surveys = make_surveys(cfg, users, calendar, attr)
    roster = make_roster(users, attr)
    events = run_loop(cfg, users, calendar, cfg.workers) if cfg.mode == "closed_loop" and users else []
    res = RunResult(cfg, users, attr, panel, surveys, roster, events)
    if out_dir is not None:
        res.paths = write_outputs(res, out_dir)
    return res


def write_outputs(res: RunResult, out_dir: str) -> dict[str, str]:
    os.makedirs(out_dir, exist_ok=True)
    paths = {k: os.path.join(out_dir, v) for k, v in FILES.items()}
    write_csv(res.panel, paths["panel"])
    write_csv(res.surveys, paths["surveys"])
    write_csv(res.roster, paths["roster"])
    write_csv(res.attrition.retention, paths["retention"])
    with open(paths["events"], "w", encoding="utf-8", newline="\n") as fp:
        for ev in res.events:
            fp.write(json.dumps(ev, sort_keys=True) + "\n")
    rec = res.config.to_record()
    rec.pop("workers")  # worker count must not change artifacts
    with open(paths["config"], "w", encoding="utf-8") as fp:
        json.dump(rec, fp, indent=2, sort_keys=True)
    log.info("wrote simulation outputs to %s", out_dir)
    return paths
