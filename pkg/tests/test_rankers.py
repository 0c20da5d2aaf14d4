import math

import numpy as np
import pytest

from helpers import make_item, random_slate
from invariants import check_add_news, check_challenging, check_diverse_approval, sweep
from prosocial_ranking.feed import ContentItem, FeedType, Lean, Slate, apply_decision, normalized_rank_change
from prosocial_ranking.rankers import (
    NO_BUDGET,
    OUT_OF_SCOPE,
    SHORTFALL,
    Candidate,
    RankContext,
    RankerId,
    dispatch,
    in_scope,
    lean_state_after,
    news_positions,
    next_lean,
    rank_add_news,
    rank_challenging_stereotypes,
    rank_control,
    rank_diverse_approval,
    rank_uprank_bridging,
    rank_uprank_downrank,
)
from prosocial_ranking.scoring import ATTRIBUTES, UPRANK_WEIGHTS


def slate_of(n, platform="Twitter", kind="Post", **kw):
    return Slate(platform, kind, tuple(make_item(f"i{k}", platform) for k in range(n)), **kw)


def bridging_scores(values):
    """Scores whose Uprank value equals ``values[k]`` for item ``i{k}``."""
    return {f"i{k}": {a: (v if a in UPRANK_WEIGHTS else 0.0) for a in ATTRIBUTES} for k, v in enumerate(values)}


def test_control_is_identity(rng):
    s = random_slate(rng, 20)
    d = rank_control(s)
    assert d.is_identity(s)
    assert normalized_rank_change(s, apply_decision(s, d)) == 0.0
    assert len(d.added) == 0


def test_uprank_examples():
    s = slate_of(3)
    d = rank_uprank_bridging(s, RankContext(scores=bridging_scores([0.9, 0.1, 0.5])))
    assert d.reordered == ("i0", "i2", "i1")
    d = rank_uprank_bridging(s, RankContext(scores=bridging_scores([0.4, 0.4, 0.4])))
    assert d.is_identity(s)


def test_uprank_around_immovable():
    items = (make_item("i0"), make_item("ad", is_ad=True), make_item("i2"))
    s = Slate("Twitter", "Post", items)
    scores = {"i0": bridging_scores([0.1])["i0"], "i2": bridging_scores([0, 0, 0.9])["i2"]}
    d = rank_uprank_bridging(s, RankContext(scores=scores))
    assert apply_decision(s, d).ids == ["i2", "ad", "i0"]


def test_uprank_missing_scores_rank_as_zero():
    s = slate_of(3)
    scores = bridging_scores([0.2, 0.5, 0.0])
    del scores["i0"]
    d = rank_uprank_bridging(s, RankContext(scores=scores))
    assert d.reordered == ("i1", "i0", "i2")
    assert "missing_scores" in d.flags


def test_downrank_examples():
    s = slate_of(2)
    good = {a: (1.0 if a in UPRANK_WEIGHTS else 0.0) for a in ATTRIBUTES}
    ones = {a: 1.0 for a in ATTRIBUTES}
    d = rank_uprank_downrank(s, RankContext(scores={"i0": ones, "i1": good}))
    assert d.reordered == ("i1", "i0")
    zeros = {a: 0.0 for a in ATTRIBUTES}
    assert rank_uprank_downrank(s, RankContext(scores={"i0": zeros, "i1": zeros})).is_identity(s)


def test_downrank_matches_uprank_without_negatives(rng):
    s = slate_of(30)
    scores = bridging_scores(rng.random(30))
    assert rank_uprank_downrank(s, RankContext(scores=scores)).reordered == rank_uprank_bridging(
        s, RankContext(scores=scores)
    ).reordered


def da_pool(n, bridging=4, platform="Twitter"):
    return [Candidate(ContentItem(f"p{k}", platform, text=f"civic pool {k}", source=f"s{k}"), bridging) for k in range(n)]


def test_diverse_approval_dosage_only():
    s = slate_of(20)
    d = rank_diverse_approval(s, RankContext(civic={}, da_candidates=da_pool(40)))
    assert len(d.added) == 3 and not d.removed


def test_diverse_approval_replacement_only():
    s = slate_of(20)
    civic = {f"i{k}": 0.8 for k in range(5)}
    d = rank_diverse_approval(s, RankContext(civic=civic, da_candidates=da_pool(40)))
    assert len(d.removed) == 5 and len(d.added) == 5
    assert [p for _, p in d.added] == [0, 1, 2, 3, 4]


def test_diverse_approval_empty_pool():
    s = slate_of(20)
    d = rank_diverse_approval(s, RankContext(civic={}, da_candidates=[]))
    assert d.is_identity(s)
    assert SHORTFALL in d.flags


def test_diverse_approval_one_per_source_and_weights():
    s = slate_of(20)
    pool = [Candidate(ContentItem(f"p{k}", "Twitter", text=f"x {k}", source="same"), 5) for k in range(10)]
    d = rank_diverse_approval(s, RankContext(da_candidates=pool))
    assert len(d.added) == 1 and SHORTFALL in d.flags
    # weight = bridging - 2: higher-bridging items are drawn first more often
    firsts = []
    for seed in range(2000):
        pool = [Candidate(ContentItem("lo", "Twitter", text="lo", source="a"), 3),
                Candidate(ContentItem("hi", "Twitter", text="hi", source="b"), 5)]
        d = rank_diverse_approval(slate_of(4), RankContext(rng=np.random.default_rng(seed), da_candidates=pool))
        firsts.append(d.added[0][0].id)
    share_hi = firsts.count("hi") / len(firsts)
    assert share_hi == pytest.approx(3 / 4, abs=0.03)


def test_challenging_examples():
    q = {lean: [ContentItem(f"{lean.value}{k}", "Twitter", text=f"queue {k}") for k in range(5)] for lean in (Lean.LIBERAL, Lean.CONSERVATIVE)}
    s = slate_of(10)
    civic = {f"i{k}": k / 10 for k in range(10)}
    d = rank_challenging_stereotypes(s, RankContext(civic=civic, cs_queue=q, last_lean=Lean.LIBERAL))
    assert len(d.removed) == 2
    assert set(d.removed) == {"i9", "i8"}
    assert d.added[0][0].lean is Lean.CONSERVATIVE
    assert rank_challenging_stereotypes(slate_of(4), RankContext(cs_queue=q)).is_identity(slate_of(4))


def test_challenging_one_empty_queue_runs_debt():
    q = {Lean.LIBERAL: [ContentItem(f"L{k}", "Twitter", text=f"lib {k}") for k in range(5)], Lean.CONSERVATIVE: []}
    d = rank_challenging_stereotypes(slate_of(20), RankContext(cs_queue=q))
    assert [it.lean for it, _ in d.added] == [Lean.LIBERAL] * 4
    last, balance = lean_state_after(d, None, 0)
    assert (last, balance) == (Lean.LIBERAL, 4)
    assert next_lean(last, balance) is Lean.CONSERVATIVE
    d = rank_challenging_stereotypes(slate_of(20), RankContext(cs_queue={}))
    assert d.is_identity(slate_of(20)) and SHORTFALL in d.flags


def test_add_news_examples():
    q = [ContentItem(f"n{k}", "Twitter", text=f"news {k}", created_at=100.0) for k in range(10)]
    s = slate_of(20)
    assert rank_add_news(s, RankContext(news_queue=q, news_budget=0)).is_identity(s)
    assert NO_BUDGET in rank_add_news(s, RankContext(news_queue=q, news_budget=0)).flags
    d = rank_add_news(s, RankContext(news_queue=q, news_budget=10, news_newest=100.0))
    assert [p for _, p in d.added] == [2, 9, 16]
    d = rank_add_news(s, RankContext(news_queue=q, news_budget=10, shown=frozenset({"n0"})))
    assert d.added[0][0].id == "n1"


def test_add_news_freshness_horizon():
    old = ContentItem("old", "Twitter", text="old news", created_at=0.0)
    new = ContentItem("new", "Twitter", text="new news", created_at=49 * 3600.0)
    d = rank_add_news(slate_of(20), RankContext(news_queue=[old, new], news_budget=5, news_newest=49 * 3600.0))
    assert [it.id for it, _ in d.added] == ["new"]


def test_news_positions_skip_immovables():
    items = list(make_item(f"i{k}") for k in range(20))
    items[2] = make_item("ad", is_ad=True)
    s = Slate("Twitter", "Post", tuple(items))
    assert news_positions(s, 3) == [3, 9, 16]


def test_scope_rules():
    s = slate_of(5, kind="Comment")
    topic = slate_of(5, feed=FeedType.TOPIC)
    for r in (RankerId.DIVERSE_APPROVAL, RankerId.CHALLENGING_STEREOTYPES, RankerId.ADD_NEWS):
        assert not in_scope(r, s) and not in_scope(r, topic)
        assert OUT_OF_SCOPE in dispatch(r, s, RankContext()).flags
    for r in (RankerId.UPRANK_BRIDGING, RankerId.UPRANK_BRIDGING_DOWNRANK_TOXIC, RankerId.CONTROL):
        assert in_scope(r, s)


def test_rankers_are_deterministic(rng):
    s = random_slate(rng, 30)
    pool = da_pool(40)
    civic = {it.id: 0.7 for it in s.items[:4]}
    a = dispatch(RankerId.DIVERSE_APPROVAL, s, RankContext(rng=np.random.default_rng(5), civic=civic, da_candidates=pool))
    b = dispatch(RankerId.DIVERSE_APPROVAL, s, RankContext(rng=np.random.default_rng(5), civic=civic, da_candidates=pool))
    assert a == b


def test_random_slate_invariants():
    counts = sweep(200, seed=99)
    assert all(v == 200 for v in counts.values())


@pytest.mark.parametrize("dosage", [0.15, 0.2])
def test_dosage_parameter(dosage):
    rng = np.random.default_rng(3)
    for _ in range(20):
        check_diverse_approval(random_slate(rng, 40, p_ad=0, p_textless=0), rng, dosage)


def test_checks_detect_broken_alternation(monkeypatch):
    import prosocial_ranking.rankers as rk

    monkeypatch.setattr(rk, "next_lean", lambda last, balance: Lean.LIBERAL)
    with pytest.raises(AssertionError):
        check_challenging(slate_of(20), np.random.default_rng(0))


def test_checks_detect_bad_news_spacing(monkeypatch):
    import prosocial_ranking.rankers as rk

    monkeypatch.setattr(rk, "news_positions", lambda slate, m, start=2, step=7: list(range(m)))
    with pytest.raises(AssertionError):
        check_add_news(slate_of(40), np.random.default_rng(0), budget=5)
    assert math.ceil(0.15 * 40) == 6
