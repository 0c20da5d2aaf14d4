"""Domain types and slate arithmetic shared by the rest of the package.

A :class:`Slate` is the ordered batch of items one feed load returns. Rankers
never edit a slate directly; they emit a :class:`RankingDecision` which
:func:`apply_decision` realizes. Ads and textless items are immovable: they keep
their absolute index and the movable items flow around them.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Sequence


class Platform(str, enum.Enum):
    FACEBOOK = "Facebook"
    TWITTER = "Twitter"
    REDDIT = "Reddit"


class Kind(str, enum.Enum):
    POST = "Post"
    COMMENT = "Comment"


class Pass(str, enum.Enum):
    FIRST = "First"
    SECOND = "Second"


class FeedType(str, enum.Enum):
    """Main algorithmic feed vs. comment threads / topic pages."""

    HOME = "Home"
    TOPIC = "Topic"


class Lean(str, enum.Enum):
    LIBERAL = "Liberal"
    CONSERVATIVE = "Conservative"
    NEUTRAL = "Neutral"


class Origin(str, enum.Enum):
    ORGANIC = "Organic"
    INJECTED = "Injected"


class ContractViolation(ValueError):
    """A precondition of an operation was not met."""


class DecisionRejected(ValueError):
    """A ranking decision cannot be applied to its slate."""


ALL_AVAILABLE = None
"""Sentinel returned by :func:`slate_size` when the whole page is re-ranked."""

_SLATE_SIZES: dict[tuple[Platform, Kind], Any] = {
    (Platform.REDDIT, Kind.POST): 50,
    (Platform.REDDIT, Kind.COMMENT): ALL_AVAILABLE,
    (Platform.TWITTER, Kind.POST): 50,
    (Platform.TWITTER, Kind.COMMENT): 50,
    (Platform.FACEBOOK, Kind.COMMENT): 50,
}
# "50 (or all available)": the cap is 50 but shorter pages are not padded
_CAPPED = {(Platform.TWITTER, Kind.COMMENT), (Platform.FACEBOOK, Kind.COMMENT)}


def slate_size(platform: Platform, kind: Kind, pass_: Pass = Pass.FIRST) -> int | None:
    """Number of items re-ranked per page; ``None`` means all available."""
    try:
        platform, kind, pass_ = Platform(platform), Kind(kind), Pass(pass_)
    except ValueError as exc:
        raise ContractViolation(str(exc)) from None
    if (platform, kind) == (Platform.FACEBOOK, Kind.POST):
        return 10 if pass_ is Pass.FIRST else 35
    if pass_ is Pass.SECOND:
        raise ContractViolation(f"second pass only exists for Facebook posts, got {platform.value}/{kind.value}")
    return _SLATE_SIZES[(platform, kind)]


def is_capped(platform: Platform, kind: Kind) -> bool:
    return (Platform(platform), Kind(kind)) in _CAPPED


@dataclass(frozen=True)
class ContentItem:
    id: str
    platform: Platform
    kind: Kind = Kind.POST
    text: str = ""
    source: str = ""
    created_at: float = 0.0
    is_ad: bool = False
    has_text: bool | None = None
    lean: Lean | None = None
    origin: Origin = Origin.ORGANIC

    def __post_init__(self) -> None:
        if not self.id:
            raise ContractViolation("ContentItem.id must be nonempty")
        for name, cls in (("platform", Platform), ("kind", Kind), ("origin", Origin)):
            v = getattr(self, name)
            if v.__class__ is not cls:
                object.__setattr__(self, name, cls(v))
        if self.lean is not None and self.lean.__class__ is not Lean:
            object.__setattr__(self, "lean", Lean(self.lean))
        derived = bool(self.text.strip())
        if self.has_text is None:
            object.__setattr__(self, "has_text", derived)
        elif self.has_text != derived:
            raise ContractViolation(f"item {self.id}: has_text={self.has_text} but text nonempty={derived}")

    @property
    def immovable(self) -> bool:
        return self.is_ad or not self.has_text

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "platform": self.platform.value,
            "kind": self.kind.value,
            "text": self.text,
            "source": self.source,
            "created_at": self.created_at,
            "is_ad": self.is_ad,
            "has_text": self.has_text,
            "lean": self.lean.value if self.lean else None,
            "origin": self.origin.value,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "ContentItem":
        return cls(**rec)


@dataclass(frozen=True)
class Slate:
    platform: Platform
    kind: Kind
    items: tuple[ContentItem, ...]
    request_id: str = ""
    user_id: str = ""
    pass_: Pass = Pass.FIRST
    feed: FeedType = FeedType.HOME

    def __post_init__(self) -> None:
        object.__setattr__(self, "platform", Platform(self.platform))
        object.__setattr__(self, "kind", Kind(self.kind))
        object.__setattr__(self, "pass_", Pass(self.pass_))
        object.__setattr__(self, "feed", FeedType(self.feed))
        object.__setattr__(self, "items", tuple(self.items))

    def validate(self) -> None:
        ids = [it.id for it in self.items]
        if len(set(ids)) != len(ids):
            raise ContractViolation(f"slate {self.request_id}: duplicate item ids")
        cap = slate_size(self.platform, self.kind, self.pass_)
        if cap is not None and len(ids) > cap:
            raise ContractViolation(f"slate {self.request_id}: {len(ids)} items exceeds slate size {cap}")

    @property
    def ids(self) -> list[str]:
        return [it.id for it in self.items]

    def __len__(self) -> int:
        return len(self.items)

    def to_record(self) -> dict:
        return {
            "platform": self.platform.value,
            "kind": self.kind.value,
            "items": [it.to_record() for it in self.items],
            "request_id": self.request_id,
            "user_id": self.user_id,
            "pass": self.pass_.value,
            "feed": self.feed.value,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "Slate":
        rec = dict(rec)
        rec["items"] = tuple(ContentItem.from_record(r) for r in rec["items"])
        rec["pass_"] = rec.pop("pass", Pass.FIRST)
        return cls(**rec)


@dataclass(frozen=True)
class RankingDecision:
    """Reorder survivors, drop ``removed``, insert ``added`` at final indices."""

    reordered: tuple[str, ...]
    added: tuple[tuple[ContentItem, int], ...] = ()
    removed: tuple[str, ...] = ()
    flags: tuple[str, ...] = field(default=(), compare=False)

    @classmethod
    def identity(cls, slate: Slate, *flags: str) -> "RankingDecision":
        return cls(reordered=tuple(slate.ids), flags=tuple(flags))

    def is_identity(self, slate: Slate) -> bool:
        return not self.added and not self.removed and list(self.reordered) == slate.ids

    def to_record(self) -> dict:
        return {
            "reordered": list(self.reordered),
            "added": [[it.to_record(), pos] for it, pos in self.added],
            "removed": list(self.removed),
            "flags": list(self.flags),
        }

    @classmethod
    def from_record(cls, rec: dict) -> "RankingDecision":
        return cls(
            reordered=tuple(rec["reordered"]),
            added=tuple((ContentItem.from_record(it), int(pos)) for it, pos in rec.get("added", [])),
            removed=tuple(rec.get("removed", [])),
            flags=tuple(rec.get("flags", [])),
        )


def apply_decision(slate: Slate, decision: RankingDecision) -> Slate:
    """Realize ``decision`` on ``slate`` and return the new slate.

    Removals happen first, then the survivors take the order in
    ``decision.reordered``, then each added item lands at its stated index of
    the final list. Immovable items are pinned to their original indices and
    the movable sequence fills every remaining slot in order.
    """
    by_id = {it.id: it for it in slate.items}
    orig_index = {it.id: i for i, it in enumerate(slate.items)}
    removed = set(decision.removed)
    if len(removed) != len(decision.removed):
        raise DecisionRejected("duplicate id in removed")
    unknown = removed - by_id.keys()
    if unknown:
        raise DecisionRejected(f"removed ids not in slate: {sorted(unknown)}")
    for rid in removed:
        if by_id[rid].immovable:
            raise DecisionRejected(f"immovable item {rid} cannot be removed")

    survivors = [it.id for it in slate.items if it.id not in removed]
    if len(decision.reordered) != len(survivors) or set(decision.reordered) != set(survivors):
        raise DecisionRejected("reordered is not a permutation of the surviving ids")
    if len(set(decision.reordered)) != len(decision.reordered):
        raise DecisionRejected("duplicate id in reordered")
    post_removal_index = {iid: k for k, iid in enumerate(survivors)}
    for k, iid in enumerate(decision.reordered):
        if by_id[iid].immovable and post_removal_index[iid] != k:
            raise DecisionRejected(f"immovable item {iid} was moved")

    final_len = len(survivors) + len(decision.added)
    slots: list[ContentItem | None] = [None] * final_len
    for iid in survivors:
        it = by_id[iid]
        if it.immovable:
            pos = orig_index[iid]
            if pos >= final_len:
                raise DecisionRejected(f"immovable item {iid} cannot keep index {pos}")
            slots[pos] = it
    seen_added: set[str] = set()
    for item, pos in decision.added:
        if item.id in by_id and item.id not in removed:
            raise DecisionRejected(f"added id {item.id} collides with a surviving item")
        if item.id in seen_added:
            raise DecisionRejected(f"duplicate id in added: {item.id}")
        seen_added.add(item.id)
        if not 0 <= pos < final_len:
            raise DecisionRejected(f"insertion index {pos} out of bounds for length {final_len}")
        if slots[pos] is not None:
            raise DecisionRejected(f"insertion index {pos} is already occupied")
        slots[pos] = item
    movers = iter(by_id[iid] for iid in decision.reordered if not by_id[iid].immovable)
    for k in range(final_len):
        if slots[k] is None:
            slots[k] = next(movers)
    return replace(slate, items=tuple(slots))


def reorder_movables(slate: Slate, movable_order: Sequence[str]) -> tuple[str, ...]:
    """Place ``movable_order`` into the non-immovable indices of ``slate``."""
    it = iter(movable_order)
    return tuple(item.id if item.immovable else next(it) for item in slate.items)


def free_positions(slate: Slate, final_len: int, taken: Iterable[int] = ()) -> list[int]:
    """Indices of a final list of ``final_len`` not pinned by an immovable."""
    blocked = {i for i, it in enumerate(slate.items) if it.immovable} | set(taken)
    return [k for k in range(final_len) if k not in blocked]


def normalized_rank_change(before: Slate, after: Slate, length: int | None = None) -> float:
    """Mean absolute rank displacement of surviving items over slate length.

    Items present in only one of the two slates (added or deleted) are not
    counted. ``length`` defaults to the declared slate size for fixed-size
    pages and to ``len(before)`` for capped or all-available pages.
    """
    if length is None:
        declared = slate_size(before.platform, before.kind, before.pass_)
        if declared is None or is_capped(before.platform, before.kind):
            length = len(before)
        else:
            length = max(declared, len(before))
    rank_after = {it.id: i for i, it in enumerate(after.items)}
    moves = [abs(rank_after[it.id] - i) for i, it in enumerate(before.items) if it.id in rank_after]
    if not moves or length <= 0:
        return 0.0
    return sum(moves) / len(moves) / length


def dump_slates(slates: Iterable[Slate], fp) -> None:
    for s in slates:
        fp.write(json.dumps(s.to_record(), sort_keys=True) + "\n")


def load_slates(fp) -> list[Slate]:
    return [Slate.from_record(json.loads(line)) for line in fp if line.strip()]
