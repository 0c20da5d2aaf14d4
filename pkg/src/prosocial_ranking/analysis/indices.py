"""Survey items and outcome index construction.

Indices are standardized against the control group at baseline, so that
group has mean 0 and SD 1 on every index by construction.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

log = logging.getLogger(__name__)

NEELY_CODES = {"Yes": 1.0, "Not sure": 0.5, "No": 0.0}


@dataclass(frozen=True)
class Item:
    name: str
    lo: float
    hi: float
    categories: tuple[str, ...] = ()

    @property
    def categorical(self) -> bool:
        return bool(self.categories)


def _neely(name: str) -> Item:
    return Item(name, 0, 1, ("Yes", "No", "Not sure"))


_PLATS = ("fb", "x", "reddit")
ITEMS: dict[str, Item] = {
    it.name: it
    for it in [
        Item("ft_in", 0, 100),
        Item("ft_out", 0, 100),
        Item("sd_in", 1, 7),
        Item("sd_out", 1, 7),
        *[Item(f"who5_{k}", 1, 5) for k in range(1, 6)],
        Item("kalmoe_1", 0, 100),
        Item("kalmoe_3", 0, 100),
        Item("meta_spv_1", 0, 100),
        Item("meta_spv_2", 0, 100),
        Item("empathy_difficult", 1, 7),
        Item("empathy_important", 1, 7),
        Item("knowledge", 0, 5),
        Item("gss_trust", 0, 100),
        *[_neely(f"{q}_{p}") for q in ("meaningful", "learned", "negative", "bftw") for p in _PLATS],
    ]
}


@dataclass(frozen=True)
class IndexSpec:
    """How to combine standardized items into one outcome.

    ``recipe="sum"`` adds the signed z-scores. ``recipe="pairs"`` averages
    the signed z-scores within each pair in ``pairs`` and then averages the
    pair means; the polarization index uses it with (inparty, outparty)
    pairs for thermometers and friendship comfort.
    """

    name: str
    items: tuple[str, ...]
    directions: tuple[int, ...]
    recipe: str = "sum"
    pairs: tuple[tuple[str, str], ...] = ()

    def __post_init__(self) -> None:
        if len(self.items) != len(self.directions):
            raise ValueError(f"{self.name}: items and directions differ in length")
        if self.recipe not in ("sum", "pairs"):
            raise ValueError(f"{self.name}: unknown recipe {self.recipe!r}")
        if self.recipe == "pairs" and {i for p in self.pairs for i in p} != set(self.items):
            raise ValueError(f"{self.name}: pairs must cover the items exactly")

    def direction(self, item: str) -> int:
        return self.directions[self.items.index(item)]


POLARIZATION = IndexSpec(
    "polarization",
    ("ft_in", "ft_out", "sd_in", "sd_out"),
    (1, -1, 1, -1),
    recipe="pairs",
    pairs=(("ft_in", "ft_out"), ("sd_in", "sd_out")),
)

DEFAULT_SPECS: tuple[IndexSpec, ...] = (
    POLARIZATION,
    IndexSpec("wellbeing", tuple(f"who5_{k}" for k in range(1, 6)), (1,) * 5),
    IndexSpec("violence", ("kalmoe_1", "kalmoe_3"), (1, 1)),
    IndexSpec("metaperception", ("meta_spv_1", "meta_spv_2"), (1, 1)),
    IndexSpec("empathy", ("empathy_difficult", "empathy_important"), (-1, 1)),
    IndexSpec("knowledge", ("knowledge",), (1,)),
    IndexSpec(
        "neely",
        tuple(f"{q}_{p}" for q in ("meaningful", "learned", "negative", "bftw") for p in _PLATS),
        (1,) * 6 + (-1,) * 6,
    ),
    IndexSpec("trust", ("gss_trust",), (-1,)),
)


def code_items(df: pd.DataFrame, items: Sequence[str]) -> pd.DataFrame:
    """Numeric version of ``items``; categorical answers mapped through their codes."""
    out = pd.DataFrame(index=df.index)
    for name in items:
        col = df[name]
        item = ITEMS.get(name)
        if item is not None and item.categorical:
            out[name] = col.map(NEELY_CODES).astype(float)
        else:
            out[name] = pd.to_numeric(col, errors="raise").astype(float)
    return out


@dataclass
class IndexResult:
    values: pd.DataFrame
    dropped_items: dict[str, list[str]] = field(default_factory=dict)
    basis: dict[str, tuple[float, float]] = field(default_factory=dict)


def _moments(x: pd.Series) -> tuple[float, float]:
    x = x.dropna()
    return float(x.mean()), float(x.std(ddof=1)) if len(x) > 1 else float("nan")


def build_indices(
    surveys: pd.DataFrame,
    specs: Sequence[IndexSpec] = DEFAULT_SPECS,
    baseline_wave: str = "baseline",
    control_arm: str = "Control",
    basis_mask: pd.Series | None = None,
) -> IndexResult:
    """Per user-wave index values plus the raw thermometer gap.

    ``surveys`` holds one row per completed user-wave with raw item columns,
    ``wave`` and ``arm``. Items and final indices are standardized with the
    mean and SD (ddof=1) of the rows selected by ``basis_mask``, by default
    control respondents at baseline. Any missing item makes that index
    missing for the row.
    """
    for col in ("user_id", "wave", "arm"):
        if col not in surveys.columns:
            raise KeyError(f"survey data lacks column {col!r}")
    if basis_mask is None:
        basis_mask = (surveys["wave"] == baseline_wave) & (surveys["arm"] == control_arm)
    if not basis_mask.any():
        raise ValueError("no rows in the standardization basis")
    keep = [c for c in ("user_id", "wave", "arm", "date", "D", "cohort") if c in surveys.columns]
    out = surveys[keep].copy()
    res = IndexResult(out)
    for spec in specs:
        missing = [i for i in spec.items if i not in surveys.columns]
        if missing:
            raise KeyError(f"index {spec.name}: survey data lacks columns {missing}")
        x = code_items(surveys, spec.items)
        z = pd.DataFrame(index=surveys.index)
        dropped = []
        for name in spec.items:
            m, s = _moments(x.loc[basis_mask, name])
            if not np.isfinite(s) or s == 0:
                dropped.append(name)
                continue
            z[name] = spec.direction(name) * (x[name] - m) / s
        if dropped:
            log.warning("index %s: dropped zero-variance items %s", spec.name, dropped)
            res.dropped_items[spec.name] = dropped
        if z.shape[1] == 0:
            out[spec.name] = np.nan
            continue
        if spec.recipe == "sum":
            raw = z.sum(axis=1, skipna=False)
        else:
            parts = [z[list(p)].mean(axis=1, skipna=False) for p in spec.pairs if all(i in z for i in p)]
            raw = pd.concat(parts, axis=1).mean(axis=1, skipna=False)
        m, s = _moments(raw[basis_mask])
        res.basis[spec.name] = (m, s)
        out[spec.name] = (raw - m) / s if np.isfinite(s) and s > 0 else np.nan
    if {"ft_in", "ft_out"} <= set(surveys.columns):
        out["ft_gap"] = pd.to_numeric(surveys["ft_in"]) - pd.to_numeric(surveys["ft_out"])
    return res


def standardize(x: pd.Series, basis: pd.Series | None = None) -> pd.Series:
    """z-score ``x`` with the moments of ``basis`` (default ``x`` itself)."""
    m, s = _moments(x if basis is None else basis)
    return (x - m) / s


def item_ranges_ok(surveys: pd.DataFrame, items: Mapping[str, Item] = ITEMS) -> bool:
    for name, item in items.items():
        if name not in surveys:
            continue
        col = surveys[name].dropna()
        if item.categorical:
            if not col.isin(item.categories).all():
                return False
        elif len(col) and (col.min() < item.lo or col.max() > item.hi):
            return False
    return True
