"""Stacked two-way fixed-effects difference-in-differences.

The outcome is regressed on the treatment indicator after absorbing a unit
effect and a time effect that is interacted with cohort, start date and,
for heterogeneity, the moderator. Example::

    spec = EstimateSpec("active_minutes", platform="Facebook")
    res = estimate_twfe(panel, spec)
    print(res.summary())
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd
from scipy import stats

from .covariance import CovarianceError, cov_classical, cov_cluster, cov_driscoll_kraay, default_dk_lags
from .demeaning import AbsorptionError, absorbed_dof, demean, factorize, singleton_mask

log = logging.getLogger(__name__)

FE_STRUCTURES = {
    # name -> columns interacted with the time key
    "cohort_date_start": ("cohort", "start"),
    "cohort_date": ("cohort",),
    "date": (),
}
COVARIANCES = ("driscoll_kraay", "cluster", "classical")


class EstimationError(ValueError):
    """The requested regression is not identified on the given data."""


@dataclass(frozen=True)
class EstimateSpec:
    """What to regress and how.

    ``sample`` is ``"pooled"`` (all arms) or one arm name, which keeps that
    arm and the control group. ``fe`` names the structure interacted with
    the time column; the unit effect is always absorbed.
    """

    outcome: str
    sample: str = "pooled"
    platform: str | None = None
    fe: str = "cohort_date_start"
    covariance: str = "driscoll_kraay"
    lags: int | None = None
    heterogeneity: str | None = None
    unit: str = "user_id"
    time: str = "date"
    treatment: str = "D"
    arm_col: str = "arm"
    control: str = "Control"
    tol: float = 1e-10

    def __post_init__(self) -> None:
        if self.fe not in FE_STRUCTURES:
            raise ValueError(f"unknown fixed-effect structure {self.fe!r}")
        if self.covariance not in COVARIANCES:
            raise ValueError(f"unknown covariance {self.covariance!r}")

    @classmethod
    def single_arm(cls, outcome: str, arm: str, **kw) -> "EstimateSpec":
        return cls(outcome, sample=arm, fe="cohort_date", **kw)

    @classmethod
    def survey(cls, outcome: str, **kw) -> "EstimateSpec":
        kw.setdefault("covariance", "cluster")
        return cls(outcome, fe="date", time="wave", **kw)


@dataclass
class EstimateResult:
    spec: EstimateSpec
    params: pd.Series
    cov: pd.DataFrame
    nobs: int
    n_dropped: int
    df_absorbed: int
    df_inference: int
    n_units: int
    n_periods: int
    cov_type: str
    resid_std: float
    f_stat: float | None = None
    f_pvalue: float | None = None
    lags: int | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def bse(self) -> pd.Series:
        return pd.Series(np.sqrt(np.diag(self.cov.to_numpy())), index=self.params.index)

    @property
    def tstats(self) -> pd.Series:
        return self.params / self.bse

    @property
    def pvalues(self) -> pd.Series:
        return pd.Series(2 * stats.t.sf(np.abs(self.tstats), self.df_inference), index=self.params.index)

    @property
    def beta(self) -> float:
        return float(self.params.iloc[0])

    @property
    def se(self) -> float:
        return float(self.bse.iloc[0])

    def wald(self, r: np.ndarray, q: float = 0.0) -> tuple[float, float]:
        """F test of ``r @ params = q`` for a single restriction."""
        r = np.asarray(r, dtype=float)
        diff = float(r @ self.params.to_numpy()) - q
        var = float(r @ self.cov.to_numpy() @ r)
        f = diff**2 / var
        return f, float(stats.f.sf(f, 1, self.df_inference))

    def summary(self) -> str:
        from .tables import render_text

        return render_text([self])


def _prepare(panel: pd.DataFrame, spec: EstimateSpec) -> pd.DataFrame:
    cols = [spec.outcome, spec.unit, spec.time, spec.treatment, *FE_STRUCTURES[spec.fe]]
    if spec.sample != "pooled":
        cols.append(spec.arm_col)
    if spec.heterogeneity:
        cols.append(spec.heterogeneity)
    missing = [c for c in dict.fromkeys(cols) if c not in panel.columns]
    if missing:
        raise KeyError(f"panel lacks column(s) {missing}")
    df = panel
    if spec.platform is not None:
        if "platform" not in df.columns:
            raise KeyError("panel lacks column(s) ['platform']")
        df = df[df["platform"] == spec.platform]
    if spec.sample != "pooled":
        df = df[df[spec.arm_col].isin([spec.sample, spec.control])]
    df = df[df[spec.outcome].notna()]
    if df.empty:
        raise EstimationError(f"no rows for outcome {spec.outcome!r} in sample {spec.sample!r}")
    return df


def _check_monotone(df: pd.DataFrame, spec: EstimateSpec) -> None:
    if spec.time == "wave":
        return
    d = df.sort_values([spec.unit, spec.time])[[spec.unit, spec.treatment]]
    dec = d.groupby(spec.unit)[spec.treatment].diff() < 0
    if dec.any():
        raise EstimationError("treatment indicator decreases within a unit; D must be nondecreasing")


def estimate_twfe(panel: pd.DataFrame, spec: EstimateSpec) -> EstimateResult:
    """Within estimator for ``Y = a_i + d_cell + beta D (+ phi D H) + e``."""
    df = _prepare(panel, spec)
    _check_monotone(df, spec)
    het = spec.heterogeneity
    if het is not None:
        h = df[het].astype(float)
        if not h.isin([0.0, 1.0]).all():
            raise EstimationError(f"moderator {het!r} must be binary")
        if h.nunique() < 2:
            raise EstimationError(f"moderator {het!r} is constant; interaction not identified")
        if (df.groupby(spec.unit)[het].nunique() > 1).any():
            raise EstimationError(f"moderator {het!r} varies within unit")
    cell_cols = [spec.time, *FE_STRUCTURES[spec.fe]] + ([het] if het else [])
    unit = factorize(df[spec.unit])
    cell = factorize(*(df[c] for c in cell_cols))
    keep = singleton_mask([unit, cell])
    n_dropped = int((~keep).sum())
    if n_dropped:
        log.info("dropped %d singleton fixed-effect observations", n_dropped)
    df = df[keep]
    if df.empty:
        raise EstimationError("no observations left after dropping singleton cells")
    unit, cell = factorize(df[spec.unit]), factorize(*(df[c] for c in cell_cols))
    d = df[spec.treatment].to_numpy(float)
    names = [spec.treatment]
    regs = [d]
    if het:
        names.append(f"{spec.treatment}x{het}")
        regs.append(d * df[het].to_numpy(float))
    y = df[spec.outcome].to_numpy(float)
    raw = np.column_stack([y, *regs])
    dm = demean(raw, [unit, cell], tol=spec.tol)
    if not dm.converged:
        raise AbsorptionError(f"demeaning did not converge in {dm.iterations} iterations")
    yt, xt = dm.values[:, 0], dm.values[:, 1:]
    for j, name in enumerate(names):
        scale = max(1.0, float(np.abs(regs[j]).max()))
        if float(np.abs(xt[:, j]).max()) < 1e-8 * scale:
            raise EstimationError(
                f"{name} has no variation after absorbing unit and {'x'.join(cell_cols)} effects"
            )
    if xt.shape[1] > 1 and np.linalg.matrix_rank(xt, tol=1e-8 * np.abs(xt).max()) < xt.shape[1]:
        raise EstimationError(f"regressors {names} are collinear after absorbing fixed effects")
    coef, *_ = np.linalg.lstsq(xt, yt, rcond=None)
    resid = yt - xt @ coef
    dof = absorbed_dof([unit, cell])
    n = len(y)
    n_units = int(unit.max() + 1)
    times = df[spec.time].to_numpy()
    n_periods = int(pd.Series(times).nunique())
    lags = None
    try:
        if spec.covariance == "driscoll_kraay":
            lags = default_dk_lags(n_periods) if spec.lags is None else spec.lags
            df_inf = n_periods - 1
            cov = cov_driscoll_kraay(xt, resid, times, lags, df_absorbed=dof)
        elif spec.covariance == "cluster":
            df_inf = n_units - 1
            cov = cov_cluster(xt, resid, df[spec.unit].to_numpy())
        else:
            df_inf = n - len(names) - dof
            cov = cov_classical(xt, resid, df_absorbed=dof)
    except CovarianceError as exc:
        if "degrees of freedom" not in str(exc):
            raise
        log.warning("%s; standard errors unavailable", exc)
        cov = np.full((len(names), len(names)), np.nan)
    params = pd.Series(coef, index=names)
    res = EstimateResult(
        spec=spec,
        params=params,
        cov=pd.DataFrame(cov, index=names, columns=names),
        nobs=n,
        n_dropped=n_dropped,
        df_absorbed=dof,
        df_inference=df_inf,
        n_units=n_units,
        n_periods=n_periods,
        cov_type=spec.covariance,
        resid_std=float(np.std(resid, ddof=0)),
        lags=lags,
        diagnostics={"demean_iterations": dm.iterations, "cells": int(cell.max() + 1)},
    )
    if het:
        res.f_stat, res.f_pvalue = res.wald(np.array([1.0, 1.0]))
    else:
        res.f_stat, res.f_pvalue = res.wald(np.array([1.0]))
    return res


def estimate_heterogeneous(panel: pd.DataFrame, spec: EstimateSpec, moderator: str | None = None) -> EstimateResult:
    """TWFE with ``D x H`` and cells interacted with ``H``; F tests beta + phi = 0."""
    if moderator is not None:
        spec = replace(spec, heterogeneity=moderator)
    if spec.heterogeneity is None:
        raise EstimationError("heterogeneous estimation needs a moderator")
    return estimate_twfe(panel, spec)


def dummy_variable_ols(panel: pd.DataFrame, spec: EstimateSpec) -> pd.Series:
    """Reference estimator with explicit dummies; for small panels only."""
    df = _prepare(panel, spec)
    cell_cols = [spec.time, *FE_STRUCTURES[spec.fe]] + ([spec.heterogeneity] if spec.heterogeneity else [])
    unit = factorize(df[spec.unit])
    cell = factorize(*(df[c] for c in cell_cols))
    keep = singleton_mask([unit, cell])
    df = df[keep]
    unit, cell = factorize(df[spec.unit]), factorize(*(df[c] for c in cell_cols))
    d = df[spec.treatment].to_numpy(float)
    names = [spec.treatment]
    cols = [d]
    if spec.heterogeneity:
        names.append(f"{spec.treatment}x{spec.heterogeneity}")
        cols.append(d * df[spec.heterogeneity].to_numpy(float))
    n = len(df)
    U = np.zeros((n, unit.max() + 1))
    U[np.arange(n), unit] = 1
    C = np.zeros((n, cell.max() + 1))
    C[np.arange(n), cell] = 1
    X = np.column_stack([*cols, U, C[:, 1:]])
    coef, *_ = np.linalg.lstsq(X, df[spec.outcome].to_numpy(float), rcond=None)
    return pd.Series(coef[: len(names)], index=names)
