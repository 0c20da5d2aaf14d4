"""Batch estimation over simulated or collected data files."""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from typing import Sequence

import pandas as pd

from .attrition_models import attrition_models
from .indices import DEFAULT_SPECS, IndexSpec, build_indices
from .tables import render_text, results_frame, write_table
from .twfe import EstimateResult, EstimateSpec, EstimationError, estimate_twfe

log = logging.getLogger(__name__)

PLATFORMS = ("Facebook", "Twitter", "Reddit")
PANEL_REQUIRED = ("user_id", "platform", "date", "cohort", "arm", "start", "D")
SURVEY_REQUIRED = ("user_id", "wave", "arm", "D", "completed")
ROSTER_REQUIRED = ("user_id", "arm", "treated", "completed")


class SchemaError(KeyError):
    """An input file lacks a required column."""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


def require_columns(df: pd.DataFrame, cols: Sequence[str], what: str) -> None:
    missing = [c for c in cols if c not in df.columns]
    if missing:
        raise SchemaError(f"{what} lacks required column(s): {', '.join(missing)}")


@dataclass
class AnalysisConfig:
    behavior_outcomes: tuple[str, ...] = ("active_minutes",)
    platforms: tuple[str, ...] = PLATFORMS
    arms: tuple[str, ...] = ()
    survey_outcomes: tuple[str, ...] = tuple(s.name for s in DEFAULT_SPECS) + ("ft_gap",)
    moderators: tuple[str, ...] = ("Democrat",)
    covariance: str = "driscoll_kraay"
    lags: int | None = None
    index_specs: tuple[IndexSpec, ...] = DEFAULT_SPECS

    @classmethod
    def from_record(cls, rec: dict) -> "AnalysisConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(rec) - known - {"index_specs"}
        if unknown:
            raise ValueError(f"unknown analysis config keys: {sorted(unknown)}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in rec.items()})


@dataclass
class AnalysisOutput:
    tables: dict[str, pd.DataFrame] = field(default_factory=dict)
    results: dict[str, list[EstimateResult]] = field(default_factory=dict)
    indices: pd.DataFrame | None = None

    def text(self, name: str) -> str:
        return render_text(self.tables[name])


def behavior_results(panel: pd.DataFrame, cfg: AnalysisConfig) -> list[tuple[str, EstimateResult]]:
    require_columns(panel, PANEL_REQUIRED, "panel")
    out = []
    for outcome in cfg.behavior_outcomes:
        require_columns(panel, [outcome], "panel")
        for p in cfg.platforms:
            spec = EstimateSpec(outcome, platform=p, covariance=cfg.covariance, lags=cfg.lags)
            out.append((f"{outcome}:{p}", estimate_twfe(panel, spec)))
    return out


def arm_results(panel: pd.DataFrame, cfg: AnalysisConfig) -> list[tuple[str, EstimateResult]]:
    out = []
    arms = cfg.arms or tuple(sorted(a for a in panel["arm"].unique() if a != "Control"))
    for outcome in cfg.behavior_outcomes:
        for arm in arms:
            for p in cfg.platforms:
                spec = EstimateSpec.single_arm(outcome, arm, platform=p, covariance=cfg.covariance, lags=cfg.lags)
                try:
                    out.append((f"{outcome}:{arm}:{p}", estimate_twfe(panel, spec)))
                except EstimationError as exc:
                    log.warning("skipping %s/%s/%s: %s", outcome, arm, p, exc)
    return out


def survey_results(indices: pd.DataFrame, cfg: AnalysisConfig, moderator: str | None = None) -> list[tuple[str, EstimateResult]]:
    out = []
    for outcome in cfg.survey_outcomes:
        require_columns(indices, [outcome], "survey indices")
        spec = EstimateSpec.survey(outcome, heterogeneity=moderator)
        out.append((outcome if moderator is None else f"{outcome}x{moderator}", estimate_twfe(indices, spec)))
    return out


def _frame(pairs: list[tuple[str, object]]) -> pd.DataFrame:
    return results_frame([r for _, r in pairs], [k for k, _ in pairs])


def analyze(
    panel: pd.DataFrame | None = None,
    surveys: pd.DataFrame | None = None,
    roster: pd.DataFrame | None = None,
    config: AnalysisConfig | None = None,
    out_dir: str | None = None,
    per_arm: bool = True,
) -> AnalysisOutput:
    """Estimate every configured table that the supplied inputs allow."""
    cfg = config or AnalysisConfig()
    res = AnalysisOutput()
    if panel is not None:
        pairs = behavior_results(panel, cfg)
        res.tables["behavior"] = _frame(pairs)
        if per_arm:
            res.tables["behavior_by_arm"] = _frame(arm_results(panel, cfg))
    if surveys is not None:
        require_columns(surveys, SURVEY_REQUIRED, "surveys")
        done = surveys[surveys["completed"] == 1]
        if roster is not None:
            extra = [m for m in cfg.moderators if m not in done.columns and m in roster.columns]
            if extra:
                done = done.merge(roster[["user_id", *extra]], on="user_id", how="left")
        idx = build_indices(done, cfg.index_specs).values
        for m in cfg.moderators:
            if m in done.columns:
                idx[m] = done[m].to_numpy()
        res.indices = idx
        res.tables["survey"] = _frame(survey_results(idx, cfg))
        het = []
        for m in cfg.moderators:
            if m not in idx.columns:
                continue
            try:
                het += survey_results(idx, cfg, moderator=m)
            except EstimationError as exc:
                log.warning("skipping heterogeneity by %s: %s", m, exc)
        if het:
            res.tables["survey_heterogeneity"] = _frame(het)
    if roster is not None:
        require_columns(roster, ROSTER_REQUIRED, "roster")
        models = attrition_models(roster)
        res.tables["attrition"] = results_frame(list(models.values()), list(models))
    if out_dir is not None:
        write_analysis(res, out_dir)
    return res


def write_analysis(res: AnalysisOutput, out_dir: str) -> dict[str, str]:
    os.makedirs(out_dir, exist_ok=True)
    paths = {}
    for name, df in res.tables.items():
        p = os.path.join(out_dir, f"table_{name}.csv")
        write_table(df, p)
        with open(os.path.join(out_dir, f"table_{name}.txt"), "w", encoding="utf-8") as fp:
            fp.write(render_text(df) + "\n")
        paths[name] = p
    return paths
