"""Differential survey attrition regressions on the participant roster."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy import stats

from .covariance import cov_cluster

PROPENSITY_COVARIATES = ("Democrat", "White", "Male", "Young", "Bachelors", "SocialMedia90", "IncomeK")


@dataclass
class OLSResult:
    name: str
    params: pd.Series
    cov: pd.DataFrame
    nobs: int

    @property
    def bse(self) -> pd.Series:
        return pd.Series(np.sqrt(np.diag(self.cov.to_numpy())), index=self.params.index)

    @property
    def tstats(self) -> pd.Series:
        return self.params / self.bse

    @property
    def pvalues(self) -> pd.Series:
        return pd.Series(2 * stats.t.sf(np.abs(self.tstats), self.nobs - 1), index=self.params.index)


def ols_robust(y: np.ndarray, X: pd.DataFrame, name: str = "") -> OLSResult:
    """Least squares with heteroskedasticity-robust (singleton-cluster) covariance."""
    x = X.to_numpy(float)
    coef, *_ = np.linalg.lstsq(x, y, rcond=None)
    resid = y - x @ coef
    cov = cov_cluster(x, resid, np.arange(len(y)))
    cols = list(X.columns)
    return OLSResult(name, pd.Series(coef, index=cols), pd.DataFrame(cov, index=cols, columns=cols), len(y))


def survival_propensity(roster: pd.DataFrame, covariates=PROPENSITY_COVARIATES, outcome: str = "completed") -> pd.Series:
    """Linear-probability fitted completion from covariates."""
    X = pd.concat([pd.Series(1.0, index=roster.index, name="const"), roster[list(covariates)].astype(float)], axis=1)
    coef, *_ = np.linalg.lstsq(X.to_numpy(), roster[outcome].to_numpy(float), rcond=None)
    return pd.Series(X.to_numpy() @ coef, index=roster.index, name="propensity")


def attrition_models(
    roster: pd.DataFrame,
    outcome: str = "completed",
    treated: str = "treated",
    arm_col: str = "arm",
    control: str = "Control",
    covariates=PROPENSITY_COVARIATES,
) -> dict[str, OLSResult]:
    """Three completion regressions.

    (1) completion on a treatment dummy; (2) adds the survival propensity
    and its interaction with treatment; (3) replaces the treatment dummy
    with one dummy per treatment arm.
    """
    missing = [c for c in (outcome, treated, arm_col, *covariates) if c not in roster.columns]
    if missing:
        raise KeyError(f"roster lacks column(s) {missing}")
    y = roster[outcome].to_numpy(float)
    const = pd.Series(1.0, index=roster.index, name="const")
    t = roster[treated].astype(float).rename("Treated")
    m1 = ols_robust(y, pd.concat([const, t], axis=1), "(1)")
    ps = survival_propensity(roster, covariates, outcome)
    X2 = pd.concat([const, t, ps, (t * ps).rename("Treated x propensity")], axis=1)
    m2 = ols_robust(y, X2, "(2)")
    arms = sorted(a for a in roster[arm_col].unique() if a != control)
    dummies = [(roster[arm_col] == a).astype(float).rename(a) for a in arms]
    m3 = ols_robust(y, pd.concat([const, *dummies], axis=1), "(3)")
    return {"(1)": m1, "(2)": m2, "(3)": m3}
