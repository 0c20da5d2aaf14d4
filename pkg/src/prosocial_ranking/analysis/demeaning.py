"""Absorbing fixed effects by alternating projections."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import pandas as pd
from scipy import sparse
from scipy.sparse.csgraph import connected_components


class AbsorptionError(ValueError):
    """Fixed-effect absorption failed or left nothing to estimate."""


def factorize(*keys: Sequence | np.ndarray | pd.Series) -> np.ndarray:
    """Dense integer codes for the combinations of ``keys``."""
    if len(keys) == 1:
        return pd.factorize(pd.Series(np.asarray(keys[0])), sort=True)[0].astype(np.int64)
    frame = pd.DataFrame({k: np.asarray(v) for k, v in enumerate(keys)})
    return frame.groupby(list(frame.columns), sort=True).ngroup().to_numpy(np.int64)


def singleton_mask(groups: Sequence[np.ndarray]) -> np.ndarray:
    """Rows to keep after iteratively removing singleton fixed-effect cells."""
    keep = np.ones(len(groups[0]), dtype=bool)
    while True:
        changed = False
        for g in groups:
            counts = np.bincount(g[keep], minlength=g.max() + 1 if len(g) else 0)
            bad = keep & (counts[g] == 1)
            if bad.any():
                keep &= ~bad
                changed = True
        if not changed:
            return keep


def absorbed_dof(groups: Sequence[np.ndarray]) -> int:
    """Parameters absorbed by the fixed effects.

    Exact for one or two factors: levels minus the connected components of
    the bipartite level graph. Additional factors are counted conservatively
    as levels minus one each.
    """
    if not groups:
        return 0
    levels = [int(len(np.unique(g))) for g in groups]
    if len(groups) == 1:
        return levels[0]
    a, b = (pd.factorize(g)[0] for g in groups[:2])
    na, nb = a.max() + 1, b.max() + 1
    graph = sparse.coo_matrix((np.ones(len(a)), (a, na + b)), shape=(na + nb, na + nb))
    n_comp = connected_components(graph, directed=False)[0]
    return levels[0] + levels[1] - n_comp + sum(n - 1 for n in levels[2:])


@dataclass
class Demeaned:
    values: np.ndarray
    iterations: int
    converged: bool


def demean(
    x: np.ndarray,
    groups: Sequence[np.ndarray],
    weights: np.ndarray | None = None,
    tol: float = 1e-10,
    max_iter: int = 10_000,
) -> Demeaned:
    """Project ``x`` (n, k) off the span of all group dummies.

    Sweeps out each factor's group means in turn until the largest update
    falls below ``tol`` times the column scale.
    """
    x = np.array(x, dtype=float, copy=True)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[:, None]
    if not groups:
        return Demeaned(x[:, 0] if squeeze else x, 0, True)
    w = np.ones(len(x)) if weights is None else np.asarray(weights, dtype=float)
    sizes = [np.bincount(g, weights=w) for g in groups]
    scale = np.maximum(np.abs(x).max(axis=0), 1.0)
    it = 0
    converged = False
    while it < max_iter:
        it += 1
        delta = 0.0
        for g, n in zip(groups, sizes):
            for j in range(x.shape[1]):
                means = np.bincount(g, weights=w * x[:, j], minlength=len(n)) / np.where(n > 0, n, 1)
                step = means[g]
                x[:, j] -= step
                delta = max(delta, float(np.abs(step).max()) / scale[j])
        if len(groups) == 1 or delta < tol:
            converged = True
            break
    return Demeaned(x[:, 0] if squeeze else x, it, converged)
