"""Randomized contract checks for every ranker, shared by unit and acceptance tests."""
from __future__ import annotations

import math
from collections import Counter

import numpy as np

from helpers import random_slate
from prosocial_ranking.feed import ContentItem, Kind, Lean, Slate, apply_decision
from prosocial_ranking.rankers import Candidate, RankContext, RankerId, dispatch
from prosocial_ranking.scoring import StubBackend

STUB = StubBackend(seed=11)
LEANS = (Lean.LIBERAL, Lean.CONSERVATIVE)


def _pool_item(tag: str, k: int, platform, **kw) -> ContentItem:
    return ContentItem(f"{tag}{k}", platform, text=f"pool {tag} item {k} with civic words", source=f"src-{tag}{k}", **kw)


def _common(slate: Slate, decision, out: Slate) -> None:
    before = {it.id for it in slate.items}
    after_ids = out.ids
    assert len(set(after_ids)) == len(after_ids), "duplicate ids after decision"
    assert len(out) == len(slate) - len(decision.removed) + len(decision.added)
    for k, it in enumerate(slate.items):
        if it.immovable:
            assert out.items[k].id == it.id, f"immovable {it.id} left index {k}"
    added = {it.id for it, _ in decision.added}
    assert not added & (before - set(decision.removed)), "injected item duplicates a survivor"
    survivors = [i for i in slate.ids if i not in set(decision.removed)]
    assert Counter(i for i in after_ids if i in before) == Counter(survivors)


def check_control(slate: Slate, rng) -> None:
    d = dispatch(RankerId.CONTROL, slate, RankContext(rng=rng))
    assert d.is_identity(slate)
    assert apply_decision(slate, d) == slate


def check_reordering(ranker: RankerId, slate: Slate, rng) -> None:
    movable = [it for it in slate.items if not it.immovable]
    scores = {it.id: STUB.attributes(it) for it in movable}
    d = dispatch(ranker, slate, RankContext(rng=rng, scores=scores))
    out = apply_decision(slate, d)
    _common(slate, d, out)
    assert not d.added and not d.removed
    assert sorted(out.ids) == sorted(slate.ids)
    # scaling every score by a positive constant leaves the order alone
    scaled = {i: {a: 0.5 * v for a, v in s.items()} for i, s in scores.items()}
    assert dispatch(ranker, slate, RankContext(rng=rng, scores=scaled)).reordered == d.reordered


def check_diverse_approval(slate: Slate, rng, dosage: float = 0.15) -> None:
    movable = [it for it in slate.items if not it.immovable]
    civic = {it.id: float(rng.random() < 0.2) * 0.9 for it in movable}
    pool = [
        Candidate(_pool_item(f"da{rng.integers(1 << 30)}-", k, slate.platform), int(rng.integers(3, 6)))
        for k in range(len(slate) + 5)
    ]
    d = dispatch(RankerId.DIVERSE_APPROVAL, slate, RankContext(rng=rng, civic=civic, da_candidates=pool, dosage=dosage))
    out = apply_decision(slate, d)
    _common(slate, d, out)
    if slate.kind is not Kind.POST:
        assert d.is_identity(slate)
        return
    civic_ids = {i for i, p in civic.items() if p >= 0.5}
    assert set(d.removed) == civic_ids
    for (it, pos), rid in zip(d.added, d.removed):
        assert slate.ids.index(rid) == pos, "replacement not at the original index"
    injected = {it.id for it, _ in d.added}
    n_civic_after = len(injected)
    assert n_civic_after >= math.ceil(dosage * len(slate)) or not movable
    sources = [it.source for it, _ in d.added]
    assert len(sources) == len(set(sources)), "two insertions from one source"
    assert "shortfall" not in d.flags


def check_challenging(slate: Slate, rng, last: Lean | None = None) -> None:
    movable = [it for it in slate.items if not it.immovable]
    civic = {it.id: float(rng.random()) for it in movable}
    tag = int(rng.integers(1 << 30))
    queue = {
        lean: [_pool_item(f"cs{tag}{lean.value[0]}", k, slate.platform, lean=lean) for k in range(20)]
        for lean in LEANS
    }
    ctx = RankContext(rng=rng, civic=civic, cs_queue=queue, last_lean=last)
    d = dispatch(RankerId.CHALLENGING_STEREOTYPES, slate, ctx)
    out = apply_decision(slate, d)
    _common(slate, d, out)
    if slate.kind is not Kind.POST:
        assert d.is_identity(slate)
        return
    k = math.floor(0.2 * len(movable))
    assert len(d.removed) == len(d.added) == k
    top = sorted(movable, key=lambda it: (-civic[it.id], slate.ids.index(it.id)))[:k]
    assert set(d.removed) == {it.id for it in top}
    leans = [it.lean for it, _ in d.added]
    expected = []
    prev = last
    for _ in range(k):
        prev = Lean.CONSERVATIVE if prev is Lean.LIBERAL else (Lean.LIBERAL if prev is Lean.CONSERVATIVE else Lean.LIBERAL)
        expected.append(prev)
    assert leans == expected, f"lean sequence {leans} != {expected}"
    assert all(it.origin.value == "Injected" for it, _ in d.added)


def check_add_news(slate: Slate, rng, budget: int | None = None) -> None:
    tag = int(rng.integers(1 << 30))
    queue = [_pool_item(f"an{tag}-", k, slate.platform, created_at=1000.0) for k in range(30)]
    shown = {queue[0].id} if rng.random() < 0.5 else set()
    budget = int(rng.integers(0, 12)) if budget is None else budget
    ctx = RankContext(rng=rng, news_queue=queue, news_budget=budget, shown=frozenset(shown), news_newest=1000.0)
    d = dispatch(RankerId.ADD_NEWS, slate, ctx)
    out = apply_decision(slate, d)
    _common(slate, d, out)
    if slate.kind is not Kind.POST:
        assert d.is_identity(slate)
        return
    assert not d.removed
    assert list(d.reordered) == slate.ids
    want = min(budget, math.ceil(0.15 * len(slate)))
    assert len(d.added) <= want
    added_ids = [it.id for it, _ in d.added]
    assert not set(added_ids) & shown
    if not any(it.immovable for it in slate.items):
        # an insertion fits only if its index lies inside the grown slate
        m = max([j for j in range(want + 1) if j == 0 or 2 + 7 * (j - 1) < len(slate) + j])
        assert len(d.added) == m
        assert [p for _, p in d.added] == [2 + 7 * j for j in range(m)]


def sweep(n_slates: int, seed: int = 0) -> dict[RankerId, int]:
    """Run every check over ``n_slates`` random slates per ranker; returns checks run."""
    rng = np.random.default_rng(seed)
    counts = Counter()
    platforms = ("Twitter", "Reddit", "Facebook")
    for k in range(n_slates):
        platform = platforms[k % 3]
        kind = Kind.COMMENT if rng.random() < 0.15 else Kind.POST
        cap = 10 if (platform == "Facebook" and kind is Kind.POST) else 50
        n = int(rng.integers(1, cap + 1))
        slate = random_slate(rng, n, platform=platform, kind=kind, prefix=f"x{k}-", request_id=f"r{k}")
        check_control(slate, rng)
        counts[RankerId.CONTROL] += 1
        for r in (RankerId.UPRANK_BRIDGING, RankerId.UPRANK_BRIDGING_DOWNRANK_TOXIC):
            check_reordering(r, slate, rng)
            counts[r] += 1
        check_diverse_approval(slate, rng)
        counts[RankerId.DIVERSE_APPROVAL] += 1
        check_challenging(slate, rng, last=[None, *LEANS][k % 3])
        counts[RankerId.CHALLENGING_STEREOTYPES] += 1
        check_add_news(slate, rng)
        counts[RankerId.ADD_NEWS] += 1
    return dict(counts)


def add_news_trace(n_requests: int, seed: int = 0, step_minutes: int = 20) -> dict:
    """Drive one Add News user through the service on a simulated clock.

    Returns injected and organic counts per UTC day plus the number of
    re-shows inside 48 h.
    """
    import datetime as dt

    from prosocial_ranking.assignment import Enrollment
    from prosocial_ranking.feed import Origin
    from prosocial_ranking.inventory import HOUR, Inventory, default_registry
    from prosocial_ranking.serving import RankingRequest, RankingService, SimClock, day_start_ms, utc_day

    rng = np.random.default_rng(seed)
    t0 = day_start_ms(dt.date(2024, 11, 1))
    clock = SimClock(t0)
    inv = Inventory(default_registry(), STUB)
    svc = RankingService([Enrollment("reader", dt.date(2024, 8, 1), RankerId.ADD_NEWS)], inventory=inv, clock=clock, seed=seed)
    per_day: dict = {}
    last_shown: dict[str, int] = {}
    repeats = 0
    for k in range(n_requests):
        now = t0 + k * step_minutes * 60_000
        clock.set_ms(now)
        if k % 9 == 0:
            # a scrape every three hours keeps the pool fresh
            batch = [
                (ContentItem(f"nw{k}-{j}", "Twitter", text=f"report {k} {j} on weather and markets",
                             source=f"tw-news-{j % 95:03d}", created_at=now / 1000), now / 1000)
                for j in range(40)
            ]
            inv.ingest(batch, RankerId.ADD_NEWS, now=now / 1000)
            svc.refresh_queues(now)
        slate = random_slate(rng, int(rng.integers(3, 30)), prefix=f"o{k}-", request_id=f"r{k}")
        resp = svc.handle(RankingRequest("reader", slate))
        day = utc_day(now)
        organic, added = per_day.get(day, (0, 0))
        per_day[day] = (
            organic + sum(it.origin is Origin.ORGANIC for it in resp.slate.items),
            added + len(resp.decision.added),
        )
        for it, _ in resp.decision.added:
            prev = last_shown.get(it.id)
            repeats += prev is not None and now - prev < 48 * HOUR * 1000
            last_shown[it.id] = now
    return {"per_day": per_day, "repeats": repeats, "injected": sum(a for _, a in per_day.values())}


def add_news_trace_violations(trace: dict, share: float = 0.15) -> int:
    over = sum(added > share * organic for organic, added in trace["per_day"].values())
    return over + trace["repeats"]
