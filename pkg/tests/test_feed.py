import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import make_item, random_slate
from oracles import rank_change_oracle
from prosocial_ranking.feed import (
    ContentItem,
    ContractViolation,
    DecisionRejected,
    Kind,
    Pass,
    Platform,
    RankingDecision,
    Slate,
    apply_decision,
    dump_slates,
    load_slates,
    normalized_rank_change,
    reorder_movables,
    slate_size,
)


@pytest.mark.parametrize(
    "platform, kind, pass_, expected",
    [
        ("Reddit", "Post", "First", 50),
        ("Facebook", "Post", "Second", 35),
        ("Facebook", "Post", "First", 10),
        ("Twitter", "Post", "First", 50),
        ("Twitter", "Comment", "First", 50),
        ("Reddit", "Comment", "First", None),
    ],
)
def test_slate_size(platform, kind, pass_, expected):
    assert slate_size(platform, kind, pass_) == expected


def test_slate_size_unknown_combination():
    with pytest.raises(ContractViolation):
        slate_size("Twitter", "Post", "Second")
    with pytest.raises(ContractViolation):
        slate_size("Myspace", "Post")


def test_content_item_immovable_and_has_text():
    assert make_item("a", is_ad=True).immovable
    assert ContentItem("b", "Twitter", text="  ").immovable
    assert not make_item("c").immovable
    with pytest.raises(ContractViolation):
        ContentItem("d", "Twitter", text="", has_text=True)
    with pytest.raises(ContractViolation):
        ContentItem("", "Twitter", text="x")


def test_slate_validate_rejects_duplicates_and_oversize(rng):
    a = make_item("a")
    with pytest.raises(ContractViolation):
        Slate("Twitter", "Post", (a, a)).validate()
    with pytest.raises(ContractViolation):
        random_slate(rng, 11, platform="Facebook").validate()
    random_slate(rng, 10, platform="Facebook").validate()


def test_identity_decision_leaves_slate_unchanged(rng):
    s = random_slate(rng, 20)
    out = apply_decision(s, RankingDecision.identity(s))
    assert out == s


def test_replace_one_of_five():
    items = tuple(make_item(f"i{k}") for k in range(5))
    s = Slate("Twitter", "Post", items)
    new = make_item("new")
    d = RankingDecision(reordered=("i0", "i1", "i3", "i4"), added=((new, 2),), removed=("i2",))
    out = apply_decision(s, d)
    assert out.ids == ["i0", "i1", "new", "i3", "i4"]
    assert len(out) == 5


def test_moving_an_ad_is_rejected():
    items = (make_item("ad", is_ad=True), make_item("b"), make_item("c"))
    s = Slate("Twitter", "Post", items)
    with pytest.raises(DecisionRejected):
        apply_decision(s, RankingDecision(reordered=("b", "ad", "c")))


def test_removing_an_immovable_is_rejected():
    items = (make_item("ad", is_ad=True), make_item("b"))
    s = Slate("Twitter", "Post", items)
    with pytest.raises(DecisionRejected):
        apply_decision(s, RankingDecision(reordered=("b",), removed=("ad",)))


def test_duplicate_ids_are_rejected():
    items = (make_item("a"), make_item("b"))
    s = Slate("Twitter", "Post", items)
    with pytest.raises(DecisionRejected):
        apply_decision(s, RankingDecision(reordered=("a", "b"), added=((make_item("a"), 0),)))
    dup = make_item("z")
    with pytest.raises(DecisionRejected):
        apply_decision(s, RankingDecision(reordered=("a", "b"), added=((dup, 0), (dup, 1))))
    with pytest.raises(DecisionRejected):
        apply_decision(s, RankingDecision(reordered=("a", "a")))


def test_insertion_out_of_bounds_is_rejected():
    s = Slate("Twitter", "Post", (make_item("a"),))
    with pytest.raises(DecisionRejected):
        apply_decision(s, RankingDecision(reordered=("a",), added=((make_item("z"), 5),)))


def test_reorder_fills_around_immovables():
    items = (make_item("a"), make_item("ad", is_ad=True), make_item("b"))
    s = Slate("Twitter", "Post", items)
    order = reorder_movables(s, ["b", "a"])
    assert order == ("b", "ad", "a")
    assert apply_decision(s, RankingDecision(order)).ids == ["b", "ad", "a"]


def test_rank_change_unchanged_is_zero(rng):
    s = random_slate(rng, 30)
    assert normalized_rank_change(s, s) == 0.0


def test_rank_change_reversal_of_four():
    items = tuple(make_item(f"i{k}") for k in range(4))
    s = Slate("Twitter", "Post", items)
    rev = Slate("Twitter", "Post", items[::-1])
    assert normalized_rank_change(s, rev, length=4) == pytest.approx(0.5, abs=0)


def test_rank_change_ignores_added_and_removed():
    items = tuple(make_item(f"i{k}") for k in range(4))
    s = Slate("Twitter", "Post", items)
    d = RankingDecision(reordered=("i0", "i1", "i3"), added=((make_item("x"), 2),), removed=("i2",))
    after = apply_decision(s, d)
    # i3 moves from 3 to 3, others stay
    assert normalized_rank_change(s, after) == 0.0
    empty = Slate("Twitter", "Post", ())
    assert normalized_rank_change(empty, empty) == 0.0


def test_rank_change_declared_size_denominator():
    items = tuple(make_item(f"i{k}") for k in range(2))
    s = Slate("Twitter", "Post", items)
    swap = Slate("Twitter", "Post", items[::-1])
    # Twitter posts declare 50 items; a short page still divides by 50
    assert normalized_rank_change(s, swap) == pytest.approx(1 / 50)
    # capped comment pages divide by their actual length
    sc = Slate("Twitter", "Comment", tuple(make_item(f"c{k}") for k in range(2)))
    assert normalized_rank_change(sc, Slate("Twitter", "Comment", sc.items[::-1])) == pytest.approx(1 / 2)


def test_rank_change_matches_oracle_on_random_pairs():
    rng = np.random.default_rng(7)
    for case in range(200):
        n = int(rng.integers(1, 51))
        s = random_slate(rng, n)
        perm = rng.permutation(n)
        keep = perm[: int(rng.integers(0, n + 1))]
        after_items = [s.items[k] for k in keep] + [make_item(f"new{case}_{j}") for j in range(int(rng.integers(0, 4)))]
        after = Slate(s.platform, s.kind, tuple(after_items))
        got = normalized_rank_change(s, after, length=n)
        assert got == pytest.approx(rank_change_oracle(s.ids, after.ids, n), abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 40))
def test_apply_preserves_survivor_multiset_and_immovables(seed, n):
    rng = np.random.default_rng(seed)
    s = random_slate(rng, n, p_ad=0.2, p_textless=0.1)
    movable = [it.id for it in s.items if not it.immovable]
    removable = [i for i in movable if rng.random() < 0.3]
    survivors = [i for i in s.ids if i not in set(removable)]
    mov_survivors = [i for i in survivors if i in set(movable)]
    order = [mov_survivors[k] for k in rng.permutation(len(mov_survivors))]
    # keep immovables at their post-removal index; only valid when none shift
    pinned = {i: k for k, i in enumerate(s.ids) if s.items[k].immovable}
    post_index = {i: k for k, i in enumerate(survivors)}
    if any(post_index[i] != pinned[i] for i in pinned):
        removable, survivors = [], s.ids
        mov_survivors = movable
        order = [movable[k] for k in rng.permutation(len(movable))]
    reordered = []
    it = iter(order)
    for iid in survivors:
        reordered.append(iid if iid in pinned else next(it))
    d = RankingDecision(tuple(reordered), removed=tuple(removable))
    out = apply_decision(s, d)
    assert sorted(out.ids) == sorted(survivors)
    for iid, k in pinned.items():
        assert out.items[k].id == iid
    assert apply_decision(s, d) == out


def test_slate_jsonl_round_trip(rng):
    slates = [random_slate(rng, 5, request_id=f"r{k}", user_id="u") for k in range(3)]
    buf = io.StringIO()
    dump_slates(slates, buf)
    assert len(buf.getvalue().strip().splitlines()) == 3
    buf.seek(0)
    assert load_slates(buf) == slates


def test_decision_record_round_trip():
    d = RankingDecision(("a",), added=((make_item("b", lean="Liberal"), 0),), removed=("c",), flags=("x",))
    assert RankingDecision.from_record(d.to_record()) == d
    assert Slate.from_record(Slate("Facebook", Kind.POST, (), pass_=Pass.SECOND).to_record()).pass_ is Pass.SECOND
    assert Platform("Reddit") is Platform.REDDIT
