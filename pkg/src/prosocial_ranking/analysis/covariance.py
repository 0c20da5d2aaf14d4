"""Sandwich covariance estimators for within-transformed regressions."""
from __future__ import annotations

import math

import numpy as np
import pandas as pd


class CovarianceError(ValueError):
    pass


def default_dk_lags(n_periods: int) -> int:
    """Plug-in Bartlett lag ``floor(4 (T/100)^(2/9))``."""
    return int(math.floor(4 * (n_periods / 100) ** (2 / 9)))


def _residual_df(n: int, k: int, df_absorbed: int) -> int:
    df = n - k - df_absorbed
    if df <= 0:
        raise CovarianceError(f"no residual degrees of freedom (N={n}, K={k}, absorbed={df_absorbed})")
    return df


def _bread(x: np.ndarray) -> np.ndarray:
    return np.linalg.inv(x.T @ x)


def _group_sums(scores: np.ndarray, codes: np.ndarray, n_groups: int) -> np.ndarray:
    out = np.zeros((n_groups, scores.shape[1]))
    np.add.at(out, codes, scores)
    return out


def cov_cluster(x: np.ndarray, resid: np.ndarray, clusters, df_absorbed: int = 0) -> np.ndarray:
    """CR0 sandwich scaled by ``G/(G-1) * (N-1)/(N-K)``.

    ``K`` counts the regressors plus ``df_absorbed``; pass 0 when the
    absorbed effects are nested within clusters.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float).T).T
    e = np.asarray(resid, dtype=float)
    codes, uniq = pd.factorize(pd.Series(np.asarray(clusters)))
    g = len(uniq)
    if g < 2:
        raise CovarianceError("clustered covariance needs at least 2 clusters")
    n, k = x.shape
    sums = _group_sums(x * e[:, None], codes, g)
    meat = sums.T @ sums
    b = _bread(x)
    factor = g / (g - 1) * (n - 1) / _residual_df(n, k, df_absorbed)
    return factor * b @ meat @ b


def cov_driscoll_kraay(
    x: np.ndarray, resid: np.ndarray, times, lags: int | None = None, df_absorbed: int = 0
) -> np.ndarray:
    """Newey-West on cross-sectional score sums with a Bartlett kernel.

    Periods are the sorted distinct values of ``times``; lag ``l`` pairs
    the ``t``-th and ``(t-l)``-th of them. The result is scaled by
    ``N / (N - K - df_absorbed)``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float).T).T
    e = np.asarray(resid, dtype=float)
    codes, uniq = pd.factorize(pd.Series(np.asarray(times)), sort=True)
    t = len(uniq)
    if t < 2:
        raise CovarianceError("Driscoll-Kraay covariance needs at least 2 time periods")
    n, k = x.shape
    lag = default_dk_lags(t) if lags is None else int(lags)
    if lag < 0:
        raise CovarianceError("lags must be nonnegative")
    h = _group_sums(x * e[:, None], codes, t)
    s = h.T @ h
    for l in range(1, min(lag, t - 1) + 1):
        gamma = h[l:].T @ h[:-l]
        s += (1 - l / (lag + 1)) * (gamma + gamma.T)
    b = _bread(x)
    return n / _residual_df(n, k, df_absorbed) * b @ s @ b


def cov_classical(x: np.ndarray, resid: np.ndarray, df_absorbed: int = 0) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float).T).T
    e = np.asarray(resid, dtype=float)
    n, k = x.shape
    s2 = float(e @ e) / _residual_df(n, k, df_absorbed)
    return s2 * _bread(x)
