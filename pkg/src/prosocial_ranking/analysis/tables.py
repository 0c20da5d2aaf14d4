"""Regression tables as CSV frames and aligned text."""
from __future__ import annotations

from typing import Sequence

import numpy as np
import pandas as pd

from .attrition_models import OLSResult
from .twfe import EstimateResult

STAR_LEVELS = ((0.01, "***"), (0.05, "**"), (0.1, "*"))
STAR_NOTE = "* p<0.1, ** p<0.05, *** p<0.01"


def stars(p: float) -> str:
    if not np.isfinite(p):
        return ""
    for level, mark in STAR_LEVELS:
        if p < level:
            return mark
    return ""


def _rows(res: EstimateResult | OLSResult, label: str | None) -> list[dict]:
    rows = []
    if isinstance(res, EstimateResult):
        meta = {
            "model": label or res.spec.outcome,
            "outcome": res.spec.outcome,
            "sample": res.spec.sample,
            "platform": res.spec.platform or "",
            "cov_type": res.cov_type,
            "nobs": res.nobs,
            "f_stat": res.f_stat,
            "f_pvalue": res.f_pvalue,
        }
    else:
        meta = {"model": label or res.name, "outcome": "completed", "sample": "roster", "platform": "",
                "cov_type": "robust", "nobs": res.nobs, "f_stat": np.nan, "f_pvalue": np.nan}
    for term in res.params.index:
        p = float(res.pvalues[term])
        rows.append({
            **meta,
            "term": term,
            "coef": float(res.params[term]),
            "se": float(res.bse[term]),
            "t": float(res.tstats[term]),
            "p": p,
            "stars": stars(p),
        })
    return rows


def results_frame(results: Sequence[EstimateResult | OLSResult], labels: Sequence[str] | None = None) -> pd.DataFrame:
    labels = list(labels) if labels is not None else [None] * len(results)
    rows = [r for res, lab in zip(results, labels) for r in _rows(res, lab)]
    cols = ["model", "outcome", "sample", "platform", "term", "coef", "se", "t", "p", "stars",
            "nobs", "cov_type", "f_stat", "f_pvalue"]
    return pd.DataFrame(rows, columns=cols)


def write_table(df: pd.DataFrame, path: str) -> None:
    df.to_csv(path, index=False, lineterminator="\n", float_format="%.8g")


def render_text(results, labels: Sequence[str] | None = None, digits: int = 3, max_columns: int = 6) -> str:
    """Coefficients with stars over standard errors in parentheses, one column per model.

    Wide tables are split into blocks of at most ``max_columns`` models.
    """
    df = results if isinstance(results, pd.DataFrame) else results_frame(results, labels)
    models = list(dict.fromkeys(df["model"]))
    if len(models) > max_columns:
        blocks = [models[k:k + max_columns] for k in range(0, len(models), max_columns)]
        return "\n\n".join(render_text(df[df["model"].isin(b)], digits=digits, max_columns=max_columns) for b in blocks)
    terms = list(dict.fromkeys(df["term"]))
    body: list[list[str]] = []
    for term in terms:
        coef_line, se_line = [term], [""]
        for m in models:
            hit = df[(df["model"] == m) & (df["term"] == term)]
            if hit.empty:
                coef_line.append("")
                se_line.append("")
                continue
            r = hit.iloc[0]
            coef_line.append(f"{r['coef']:.{digits}f}{r['stars']}")
            se_line.append(f"({r['se']:.{digits}f})")
        body += [coef_line, se_line]
    first = df.drop_duplicates("model").set_index("model")
    body.append(["N"] + [str(int(first.loc[m, "nobs"])) for m in models])
    body.append(["SE"] + [str(first.loc[m, "cov_type"]) for m in models])
    header = [""] + models
    widths = [max(len(row[k]) for row in [header, *body]) for k in range(len(header))]

    def fmt(row: list[str]) -> str:
        return "  ".join([row[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(row[1:], widths[1:])])

    rule = "-" * len(fmt(header))
    lines = [fmt(header), rule, *(fmt(r) for r in body[:-2]), rule, *(fmt(r) for r in body[-2:]), rule, STAR_NOTE]
    return "\n".join(lines)
