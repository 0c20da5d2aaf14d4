"""The six slate policies: control plus five treatments.

Every ranker is a pure function of the slate and a :class:`RankContext`
snapshot. State changes implied by a decision (shown caches, injection
budgets, the lean toggle) are applied later by the serving layer.
"""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Collection, Mapping, Sequence

import numpy as np

from .feed import ContentItem, FeedType, Kind, Lean, Origin, RankingDecision, Slate, free_positions, reorder_movables
from .scoring import UPRANK_DOWNRANK_WEIGHTS, UPRANK_WEIGHTS, WeightTable, combine_weighted

log = logging.getLogger(__name__)

SHORTFALL = "shortfall"
MISSING_SCORES = "missing_scores"
NO_BUDGET = "no_budget"
OUT_OF_SCOPE = "out_of_scope"
INACTIVE = "inactive"
DEADLINE_MISSED = "deadline_missed"

NEWS_FRESHNESS_S = 48 * 3600.0


class RankerId(str, enum.Enum):
    CONTROL = "Control"
    UPRANK_BRIDGING = "UprankBridging"
    UPRANK_BRIDGING_DOWNRANK_TOXIC = "UprankBridgingDownrankToxic"
    CHALLENGING_STEREOTYPES = "ChallengingStereotypes"
    DIVERSE_APPROVAL = "DiverseApproval"
    ADD_NEWS = "AddNews"


TREATMENT_ARMS = (
    RankerId.UPRANK_BRIDGING,
    RankerId.UPRANK_BRIDGING_DOWNRANK_TOXIC,
    RankerId.DIVERSE_APPROVAL,
    RankerId.CHALLENGING_STEREOTYPES,
    RankerId.ADD_NEWS,
)
REORDERING_ARMS = frozenset({RankerId.UPRANK_BRIDGING, RankerId.UPRANK_BRIDGING_DOWNRANK_TOXIC})


def in_scope(ranker: RankerId, slate: Slate) -> bool:
    """Reordering arms touch every ranked page; content-adding arms only main-feed posts."""
    ranker = RankerId(ranker)
    if ranker is RankerId.CONTROL or ranker in REORDERING_ARMS:
        return True
    return slate.kind is Kind.POST and slate.feed is FeedType.HOME


def rate_floor(rate: float, n: int) -> int:
    return math.floor(Fraction(str(rate)) * n)


def rate_ceil(rate: float, n: int) -> int:
    return math.ceil(Fraction(str(rate)) * n)


@dataclass(frozen=True)
class Candidate:
    """Pool item eligible for Diverse Approval insertion."""

    item: ContentItem
    bridging_score: int

    @property
    def weight(self) -> int:
        return self.bridging_score - 2


@dataclass
class RankContext:
    """Read-only snapshot a ranker may consult for one request."""

    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))
    scores: Mapping[str, Mapping[str, float]] = field(default_factory=dict)
    civic: Mapping[str, float] = field(default_factory=dict)
    da_candidates: Sequence[Candidate] = ()
    cs_queue: Mapping[Lean, Sequence[ContentItem]] = field(default_factory=dict)
    last_lean: Lean | None = None
    lean_balance: int = 0
    news_queue: Sequence[ContentItem] = ()
    news_budget: int = 0
    shown: Collection[str] = frozenset()
    news_newest: float | None = None
    dosage: float = 0.15
    cs_share: float = 0.2
    news_share: float = 0.15
    news_start: int = 2


def rank_control(slate: Slate, ctx: RankContext | None = None) -> RankingDecision:
    return RankingDecision.identity(slate)


def _rank_by_table(slate: Slate, scores: Mapping[str, Mapping[str, float]], table: WeightTable) -> RankingDecision:
    flags = []
    keyed = []
    for rank, it in enumerate(slate.items):
        if it.immovable:
            continue
        s = scores.get(it.id)
        if s is None:
            flags.append(MISSING_SCORES)
            value = 0.0
        else:
            value = combine_weighted(s, table)
        keyed.append((-value, rank, it.id))
    keyed.sort()
    if flags:
        log.info("slate %s: %d movable items without scores ranked as 0", slate.request_id, len(flags))
    order = reorder_movables(slate, [iid for _, _, iid in keyed])
    return RankingDecision(reordered=order, flags=tuple(sorted(set(flags))))


def rank_uprank_bridging(slate: Slate, ctx: RankContext) -> RankingDecision:
    return _rank_by_table(slate, ctx.scores, UPRANK_WEIGHTS)


def rank_uprank_downrank(slate: Slate, ctx: RankContext) -> RankingDecision:
    return _rank_by_table(slate, ctx.scores, UPRANK_DOWNRANK_WEIGHTS)


def _weighted_order(cands: Sequence[Candidate], rng: np.random.Generator) -> list[Candidate]:
    """Successive weighted sampling without replacement via exponential keys."""
    live = [c for c in sorted(cands, key=lambda c: c.item.id) if c.weight > 0]
    if not live:
        return []
    w = np.array([c.weight for c in live], dtype=float)
    keys = rng.exponential(size=len(live)) / w
    return [live[k] for k in np.argsort(keys, kind="stable")]


def _assemble(slate: Slate, removed: Sequence[str], placed: Sequence[tuple[ContentItem, int]]) -> RankingDecision:
    gone = set(removed)
    survivors = tuple(it.id for it in slate.items if it.id not in gone)
    return RankingDecision(reordered=survivors, added=tuple(placed), removed=tuple(removed))


def rank_diverse_approval(slate: Slate, ctx: RankContext) -> RankingDecision:
    """Swap civic items for civic-and-bridging ones, then top up to the dosage.

    ``ctx.da_candidates`` must already be restricted to fresh, unseen,
    deduplicated civic-and-bridging items. At most one item per source is
    inserted into a slate.
    """
    present = set(slate.ids)
    draws = iter(c.item for c in _weighted_order(ctx.da_candidates, ctx.rng) if c.item.id not in present)
    used_sources: set[str] = set()
    shortfall = False

    def next_item() -> ContentItem | None:
        for it in draws:
            if it.source not in used_sources:
                used_sources.add(it.source)
                return it
        return None

    removed: list[str] = []
    placed: list[tuple[ContentItem, int]] = []
    civic_left = 0
    for idx, it in enumerate(slate.items):
        if it.immovable or ctx.civic.get(it.id, 0.0) < 0.5:
            continue
        new = next_item()
        if new is None:
            civic_left += 1
            shortfall = True
            continue
        removed.append(it.id)
        placed.append((new, idx))

    n = len(slate)
    extra = max(0, rate_ceil(ctx.dosage, n) - len(placed) - civic_left)
    picks: list[ContentItem] = []
    while len(picks) < extra:
        new = next_item()
        if new is None:
            shortfall = True
            break
        picks.append(new)
    if picks:
        final_len = n + len(picks)
        open_slots = free_positions(slate, final_len, taken=[p for _, p in placed])
        chosen = ctx.rng.choice(len(open_slots), size=len(picks), replace=False)
        placed.extend((it, open_slots[int(k)]) for it, k in zip(picks, chosen))
    decision = _assemble(slate, removed, placed)
    if shortfall:
        decision = RankingDecision(decision.reordered, decision.added, decision.removed, (SHORTFALL,))
    return decision


def next_lean(last: Lean | None, balance: int) -> Lean:
    """Lean owed next: repay any imbalance, otherwise alternate."""
    if balance > 0:
        return Lean.CONSERVATIVE
    if balance < 0:
        return Lean.LIBERAL
    return Lean.LIBERAL if last is Lean.CONSERVATIVE or last is None else Lean.CONSERVATIVE


def lean_state_after(decision: RankingDecision, last: Lean | None, balance: int) -> tuple[Lean | None, int]:
    """Lean toggle and balance after serving ``decision``'s insertions in draw order."""
    for it, _ in decision.added:
        if it.lean is Lean.LIBERAL:
            balance += 1
        elif it.lean is Lean.CONSERVATIVE:
            balance -= 1
        else:
            continue
        last = it.lean
    return last, balance


def rank_challenging_stereotypes(slate: Slate, ctx: RankContext) -> RankingDecision:
    """Replace the most political fifth of movable items with queue posts of alternating lean.

    ``ctx.civic`` supplies the political probability; ``ctx.cs_queue`` maps
    each lean to its queue ordered best first.
    """
    movable = [(i, it) for i, it in enumerate(slate.items) if not it.immovable]
    k = rate_floor(ctx.cs_share, len(movable))
    if k == 0:
        return RankingDecision.identity(slate)
    targets = sorted(movable, key=lambda p: (-ctx.civic.get(p[1].id, 0.0), p[0]))[:k]
    present = set(slate.ids)
    queues = {
        lean: iter(it for it in ctx.cs_queue.get(lean, ()) if it.id not in present and it.id not in ctx.shown)
        for lean in (Lean.LIBERAL, Lean.CONSERVATIVE)
    }
    buffered: dict[Lean, ContentItem | None] = {lean: next(q, None) for lean, q in queues.items()}
    last, balance = ctx.last_lean, ctx.lean_balance
    removed: list[str] = []
    placed: list[tuple[ContentItem, int]] = []
    for idx, it in targets:
        want = next_lean(last, balance)
        other = Lean.CONSERVATIVE if want is Lean.LIBERAL else Lean.LIBERAL
        lean = want if buffered[want] is not None else other
        new = buffered[lean]
        if new is None:
            break
        buffered[lean] = next(queues[lean], None)
        new = ContentItem(**{**new.to_record(), "lean": lean, "origin": Origin.INJECTED})
        removed.append(it.id)
        placed.append((new, idx))
        last = lean
        balance += 1 if lean is Lean.LIBERAL else -1
    decision = _assemble(slate, removed, placed)
    if len(placed) < k:
        decision = RankingDecision(decision.reordered, decision.added, decision.removed, (SHORTFALL,))
    return decision


def news_positions(slate: Slate, m: int, start: int = 2, step: int = 7) -> list[int]:
    """Final indices for ``m`` insertions: start, start+step, ..., skipping pinned slots."""
    final_len = len(slate) + m
    free = set(free_positions(slate, final_len))
    out: list[int] = []
    for j in range(m):
        p = start + j * step
        if out:
            p = max(p, out[-1] + 1)
        while p < final_len and p not in free:
            p += 1
        if p >= final_len:
            break
        out.append(p)
    return out


def rank_add_news(slate: Slate, ctx: RankContext) -> RankingDecision:
    """Insert personalized news items at spaced positions within the daily budget."""
    n = len(slate)
    if ctx.news_budget <= 0:
        return RankingDecision.identity(slate, NO_BUDGET)
    present = set(slate.ids)
    horizon = None if ctx.news_newest is None else ctx.news_newest - NEWS_FRESHNESS_S
    eligible = [
        it
        for it in ctx.news_queue
        if it.id not in present and it.id not in ctx.shown and (horizon is None or it.created_at >= horizon)
    ]
    want = min(ctx.news_budget, rate_ceil(ctx.news_share, n))
    m = min(want, len(eligible))
    step = math.ceil(1 / Fraction(str(ctx.news_share)))
    positions = news_positions(slate, m, ctx.news_start, step)
    # a position that cannot be placed means fewer insertions; recompute for the shorter list
    while len(positions) < m:
        m = len(positions)
        positions = news_positions(slate, m, ctx.news_start, step)
    placed = [
        (ContentItem(**{**it.to_record(), "origin": Origin.INJECTED}), p) for it, p in zip(eligible, positions)
    ]
    decision = _assemble(slate, [], placed)
    if len(placed) < want:
        decision = RankingDecision(decision.reordered, decision.added, decision.removed, (SHORTFALL,))
    return decision


RANKERS: dict[RankerId, Callable[[Slate, RankContext], RankingDecision]] = {
    RankerId.CONTROL: rank_control,
    RankerId.UPRANK_BRIDGING: rank_uprank_bridging,
    RankerId.UPRANK_BRIDGING_DOWNRANK_TOXIC: rank_uprank_downrank,
    RankerId.CHALLENGING_STEREOTYPES: rank_challenging_stereotypes,
    RankerId.DIVERSE_APPROVAL: rank_diverse_approval,
    RankerId.ADD_NEWS: rank_add_news,
}


def dispatch(ranker: RankerId, slate: Slate, ctx: RankContext) -> RankingDecision:
    ranker = RankerId(ranker)
    if not in_scope(ranker, slate):
        return RankingDecision.identity(slate, OUT_OF_SCOPE)
    return RANKERS[ranker](slate, ctx)
