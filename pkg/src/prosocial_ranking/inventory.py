"""Candidate pools, source registry, personal news queues and shown caches.

The three content-adding rankers draw from pools filled by periodic
:meth:`Inventory.ingest` calls. Everything is held in memory; snapshots are
plain JSON so a restarted service keeps its caches.
"""
from __future__ import annotations

import enum
import json
import logging
import os
import tempfile
import threading
from collections import defaultdict
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .feed import ContentItem, ContractViolation, Lean, Platform
from .rankers import Candidate, RankerId
from .scoring import (
    OPINION_FIELDS,
    CsAnnotation,
    ScorerBackend,
    cs_final_score,
    mismatch_from_similarities,
    normalize_text,
    opinion_similarity,
    passes_cs_filters,
)

log = logging.getLogger(__name__)

HOUR = 3600.0
DAY = 24 * HOUR

FRESHNESS_S = {
    RankerId.DIVERSE_APPROVAL: 1 * DAY,
    RankerId.CHALLENGING_STEREOTYPES: 3 * DAY,
    RankerId.ADD_NEWS: 48 * HOUR,
}
SHOWN_TTL_S = 48 * HOUR
POOL_RANKERS = tuple(FRESHNESS_S)

COLD_START = "cold_start"
EMPTY_QUEUE = "empty_queue"


class NewsLean(str, enum.Enum):
    LEFT = "Left"
    MODERATE = "Moderate"
    RIGHT = "Right"


NEWS_WEIGHTS = {NewsLean.LEFT: 0.25, NewsLean.MODERATE: 0.5, NewsLean.RIGHT: 0.25}
_ITEM_LEAN = {
    NewsLean.LEFT.value: Lean.LIBERAL,
    NewsLean.MODERATE.value: Lean.NEUTRAL,
    NewsLean.RIGHT.value: Lean.CONSERVATIVE,
    Lean.LIBERAL.value: Lean.LIBERAL,
    Lean.CONSERVATIVE.value: Lean.CONSERVATIVE,
    Lean.NEUTRAL.value: Lean.NEUTRAL,
}


@dataclass(frozen=True)
class SourceRecord:
    source_id: str
    platform: Platform
    lean: str | None
    rankers: tuple[RankerId, ...]
    reliability: str = "high"
    active: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "platform", Platform(self.platform))
        object.__setattr__(self, "rankers", tuple(RankerId(r) for r in self.rankers))
        if self.lean is not None and self.lean not in _ITEM_LEAN:
            raise ContractViolation(f"source {self.source_id}: unknown lean {self.lean!r}")
        if RankerId.ADD_NEWS in self.rankers and self.lean not in {x.value for x in NewsLean}:
            raise ContractViolation(f"news source {self.source_id} needs a Left/Moderate/Right lean")

    def to_record(self) -> dict:
        return {
            "source_id": self.source_id,
            "platform": self.platform.value,
            "lean": self.lean,
            "rankers": [r.value for r in self.rankers],
            "reliability": self.reliability,
            "active": self.active,
        }


class SourceRegistry:
    def __init__(self, records: Iterable[SourceRecord] = ()):
        self._by_id: dict[str, SourceRecord] = {}
        for r in records:
            self.add(r)

    def add(self, rec: SourceRecord) -> None:
        if rec.source_id in self._by_id:
            raise ContractViolation(f"duplicate source id {rec.source_id}")
        self._by_id[rec.source_id] = rec

    def get(self, source_id: str) -> SourceRecord | None:
        return self._by_id.get(source_id)

    def __contains__(self, source_id: str) -> bool:
        return source_id in self._by_id

    def __iter__(self):
        return iter(self._by_id.values())

    def __len__(self) -> int:
        return len(self._by_id)

    def for_ranker(self, platform: Platform, ranker: RankerId) -> list[SourceRecord]:
        return [r for r in self._by_id.values() if r.platform is Platform(platform) and RankerId(ranker) in r.rankers]

    def dump(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fp:
            for r in self._by_id.values():
                fp.write(json.dumps(r.to_record(), sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str) -> "SourceRegistry":
        with open(path, encoding="utf-8") as fp:
            return cls(SourceRecord(**json.loads(line)) for line in fp if line.strip())


def default_registry(news_per_platform: int = 95, civic_per_platform: int = 30, cs_per_platform: int = 40) -> SourceRegistry:
    """Synthetic fixture registry: 95 balanced news outlets plus civic and stereotype sources per platform."""
    recs = []
    for p in Platform:
        tag = p.value[:2].lower()
        n_side = news_per_platform // 4
        leans = [NewsLean.LEFT] * n_side + [NewsLean.RIGHT] * n_side
        leans += [NewsLean.MODERATE] * (news_per_platform - len(leans))
        for k, lean in enumerate(leans):
            recs.append(SourceRecord(f"{tag}-news-{k:03d}", p, lean.value, (RankerId.ADD_NEWS,)))
        for k in range(civic_per_platform):
            recs.append(SourceRecord(f"{tag}-civic-{k:03d}", p, None, (RankerId.DIVERSE_APPROVAL,)))
        for k in range(cs_per_platform):
            lean = Lean.LIBERAL if k % 2 == 0 else Lean.CONSERVATIVE
            recs.append(
                SourceRecord(
                    f"{tag}-cs-{k:03d}", p, lean.value, (RankerId.CHALLENGING_STEREOTYPES, RankerId.DIVERSE_APPROVAL)
                )
            )
    return SourceRegistry(recs)


@dataclass
class PoolEntry:
    item: ContentItem
    scraped_at: float
    civic: float | None = None
    bridging: int | None = None
    national: bool = True
    cs: CsAnnotation | None = None
    embedding: np.ndarray | None = None

    def to_record(self) -> dict:
        return {
            "item": self.item.to_record(),
            "scraped_at": self.scraped_at,
            "civic": self.civic,
            "bridging": self.bridging,
            "national": self.national,
            "cs": None if self.cs is None else self.cs.to_record(),
            "embedding": None if self.embedding is None else self.embedding.tolist(),
        }

    @classmethod
    def from_record(cls, rec: dict) -> "PoolEntry":
        return cls(
            item=ContentItem.from_record(rec["item"]),
            scraped_at=rec["scraped_at"],
            civic=rec["civic"],
            bridging=rec["bridging"],
            national=rec["national"],
            cs=None if rec["cs"] is None else CsAnnotation(**rec["cs"]),
            embedding=None if rec["embedding"] is None else np.asarray(rec["embedding"], dtype=float),
        )


@dataclass
class IngestReport:
    accepted: int = 0
    duplicates: int = 0
    rejected_unknown_source: int = 0
    ineligible: int = 0
    pruned: int = 0


class ShownCache:
    """Per-user record of shown ids; ``ttl=None`` keeps entries forever."""

    def __init__(self, ttl: float | None = SHOWN_TTL_S):
        self.ttl = ttl
        self._shown: dict[str, dict[str, float]] = defaultdict(dict)

    def mark(self, user: str, ids: Iterable[str], now: float) -> None:
        d = self._shown[user]
        for i in ids:
            d[i] = now

    def is_shown(self, user: str, item_id: str, now: float) -> bool:
        t = self._shown.get(user, {}).get(item_id)
        if t is None:
            return False
        return self.ttl is None or now - t < self.ttl

    def live(self, user: str, now: float) -> frozenset[str]:
        d = self._shown.get(user, {})
        if self.ttl is None:
            return frozenset(d)
        return frozenset(i for i, t in d.items() if now - t < self.ttl)

    def prune(self, now: float) -> None:
        if self.ttl is None:
            return
        for d in self._shown.values():
            for i in [i for i, t in d.items() if now - t >= self.ttl]:
                del d[i]

    def to_record(self) -> dict:
        return {"ttl": self.ttl, "shown": {u: dict(d) for u, d in self._shown.items()}}

    @classmethod
    def from_record(cls, rec: dict) -> "ShownCache":
        c = cls(rec["ttl"])
        for u, d in rec["shown"].items():
            c._shown[u] = dict(d)
        return c


@dataclass(frozen=True)
class PersonalQueue:
    user_id: str
    platform: Platform
    ids: tuple[str, ...]
    refreshed_at: float
    flags: tuple[str, ...] = ()


def sample_news(
    entries: Sequence[PoolEntry],
    rng: np.random.Generator,
    n: int,
    lean_of: Callable[[PoolEntry], str | None],
    weights: Mapping[NewsLean, float] = NEWS_WEIGHTS,
) -> list[PoolEntry]:
    """Draw ``n`` entries without replacement, picking a lean stratum per draw.

    Stratum probabilities are ``weights`` renormalized over strata that still
    have items.
    """
    strata: dict[NewsLean, list[PoolEntry]] = {s: [] for s in weights}
    for e in sorted(entries, key=lambda e: e.item.id):
        lean = lean_of(e)
        if lean is not None and NewsLean(lean) in strata:
            strata[NewsLean(lean)].append(e)
    for s, items in strata.items():
        perm = rng.permutation(len(items))
        strata[s] = [items[k] for k in perm]
    out: list[PoolEntry] = []
    order = list(weights)
    while len(out) < n:
        live = [s for s in order if strata[s]]
        if not live:
            break
        w = np.array([weights[s] for s in live], dtype=float)
        s = live[int(rng.choice(len(live), p=w / w.sum()))]
        out.append(strata[s].pop())
    return out


def _unit_rows(m: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    return np.divide(m, norms, out=np.zeros_like(m), where=norms > 0)


def nearest_neighbor_counts(refs: np.ndarray, cands: np.ndarray, k: int = 5) -> tuple[np.ndarray, np.ndarray]:
    """Count how often each candidate is among a reference's ``k`` nearest by cosine.

    Candidates are assumed sorted by id so stable ordering breaks ties by id.
    Returns (counts, mean cosine over all references).
    """
    sims = _unit_rows(refs) @ _unit_rows(cands).T
    counts = np.zeros(cands.shape[0], dtype=int)
    top = np.argsort(-sims, axis=1, kind="stable")[:, :k]
    np.add.at(counts, top.ravel(), 1)
    return counts, sims.mean(axis=0)


def refresh_personal_queue(
    user_id: str,
    platform: Platform,
    history: Sequence[ContentItem],
    candidates: Sequence[PoolEntry],
    rng: np.random.Generator,
    embed: Callable[[str], np.ndarray],
    lean_of: Callable[[PoolEntry], str | None],
    now: float = 0.0,
    n_refs: int = 50,
    neighbors: int = 5,
    size: int = 50,
    min_chars: int = 20,
) -> PersonalQueue:
    """Queue the candidates most often near the user's recently served posts.

    ``history`` holds items served over the last 100 requests and
    ``candidates`` is already restricted to fresh, unshown pool entries.
    """
    cands = sorted(candidates, key=lambda e: e.item.id)
    if not cands:
        return PersonalQueue(user_id, Platform(platform), (), now, (EMPTY_QUEUE,))
    seen: set[str] = set()
    refs_pool = []
    for it in history:
        if it.id not in seen and len(it.text) >= min_chars:
            seen.add(it.id)
            refs_pool.append(it)
    if not refs_pool:
        picked = sample_news(cands, rng, size, lean_of)
        return PersonalQueue(user_id, Platform(platform), tuple(e.item.id for e in picked), now, (COLD_START,))
    if len(refs_pool) > n_refs:
        idx = np.sort(rng.choice(len(refs_pool), size=n_refs, replace=False))
        refs_pool = [refs_pool[k] for k in idx]
    R = np.vstack([embed(it.text) for it in refs_pool])
    C = np.vstack([e.embedding if e.embedding is not None else embed(e.item.text) for e in cands])
    counts, mean_cos = nearest_neighbor_counts(R, C, neighbors)
    hits = [k for k in range(len(cands)) if counts[k] > 0]
    hits.sort(key=lambda k: (-counts[k], -mean_cos[k], cands[k].item.id))
    top = [cands[k].item.id for k in hits[:size]]
    perm = rng.permutation(len(top))
    return PersonalQueue(user_id, Platform(platform), tuple(top[k] for k in perm), now)


class Inventory:
    """Pools keyed by (platform, ranker) plus per-user caches and queues."""

    def __init__(
        self,
        registry: SourceRegistry,
        backend: ScorerBackend,
        freshness: Mapping[RankerId, float] | None = None,
        cs_min_score: float = 0.0,
    ):
        self.registry = registry
        self.backend = backend
        self.freshness = dict(FRESHNESS_S if freshness is None else freshness)
        self.cs_min_score = cs_min_score
        self.pools: dict[tuple[Platform, RankerId], dict[str, PoolEntry]] = defaultdict(dict)
        self._texts: dict[tuple[Platform, RankerId], set[str]] = defaultdict(set)
        self.news_shown = ShownCache(SHOWN_TTL_S)
        self.seen = ShownCache(None)
        self.queues: dict[tuple[str, Platform], PersonalQueue] = {}
        self._lock = threading.RLock()

    # ingestion
    def _annotate(self, item: ContentItem, ranker: RankerId, scraped_at: float) -> PoolEntry | None:
        e = PoolEntry(item, scraped_at)
        if ranker is RankerId.DIVERSE_APPROVAL:
            e.civic = self.backend.civic(item)
            e.bridging = self.backend.bridging(item).bridging_score
            nat = getattr(self.backend, "national_interest", None)
            e.national = bool(nat(item)) if nat else True
            if e.civic < 0.5 or e.bridging < 3 or not e.national:
                return None
        elif ranker is RankerId.CHALLENGING_STEREOTYPES:
            e.cs = self.backend.cs_annotation(item)
            if not passes_cs_filters(e.cs, item.platform) or self.cs_lean(e) is None:
                return None
        else:
            e.embedding = self.backend.embed(item.text)
        return e

    def ingest(self, batch: Iterable[tuple[ContentItem, float]], ranker: RankerId, now: float | None = None) -> IngestReport:
        """Annotate, filter and add ``(item, scraped_at)`` pairs to the ranker's pools."""
        ranker = RankerId(ranker)
        if ranker not in self.freshness:
            raise ContractViolation(f"{ranker.value} has no candidate pool")
        rep = IngestReport()
        touched: set[Platform] = set()
        with self._lock:
            for item, scraped_at in batch:
                src = self.registry.get(item.source)
                if src is None or not src.active or ranker not in src.rankers or src.platform is not item.platform:
                    rep.rejected_unknown_source += 1
                    continue
                key = (item.platform, ranker)
                text = normalize_text(item.text)
                if item.id in self.pools[key] or text in self._texts[key]:
                    rep.duplicates += 1
                    continue
                lean = _ITEM_LEAN.get(src.lean) if src.lean else None
                if lean is not None and item.lean is None:
                    item = ContentItem(**{**item.to_record(), "lean": lean})
                entry = self._annotate(item, ranker, scraped_at)
                if entry is None:
                    rep.ineligible += 1
                    continue
                self.pools[key][item.id] = entry
                self._texts[key].add(text)
                touched.add(item.platform)
                rep.accepted += 1
            for p in touched:
                rep.pruned += self.prune(p, ranker, now)
        return rep

    def newest(self, platform: Platform, ranker: RankerId) -> float | None:
        pool = self.pools.get((Platform(platform), RankerId(ranker)))
        if not pool:
            return None
        return max(e.scraped_at for e in pool.values())

    def prune(self, platform: Platform, ranker: RankerId, now: float | None = None) -> int:
        """Drop stale entries; news is aged against the newest scrape, the rest against ``now``."""
        key = (Platform(platform), RankerId(ranker))
        pool = self.pools.get(key)
        if not pool:
            return 0
        ref = self.newest(*key) if key[1] is RankerId.ADD_NEWS or now is None else now
        horizon = ref - self.freshness[key[1]]
        stale = [i for i, e in pool.items() if e.scraped_at < horizon]
        for i in stale:
            self._texts[key].discard(normalize_text(pool.pop(i).item.text))
        return len(stale)

    def entries(self, platform: Platform, ranker: RankerId) -> list[PoolEntry]:
        with self._lock:
            return list(self.pools.get((Platform(platform), RankerId(ranker)), {}).values())

    def lean_of(self, e: PoolEntry) -> str | None:
        src = self.registry.get(e.item.source)
        return None if src is None else src.lean

    def cs_lean(self, e: PoolEntry) -> Lean | None:
        o = None if e.cs is None else e.cs.political_orientation
        if o is not None and o < 4:
            return Lean.LIBERAL
        if o is not None and o > 4:
            return Lean.CONSERVATIVE
        src_lean = _ITEM_LEAN.get(self.lean_of(e) or "")
        return src_lean if src_lean in (Lean.LIBERAL, Lean.CONSERVATIVE) else None

    # ranker views
    def da_candidates(self, user: str, platform: Platform, now: float) -> list[Candidate]:
        horizon = now - self.freshness[RankerId.DIVERSE_APPROVAL]
        seen = self.seen.live(user, now)
        return [
            Candidate(e.item, e.bridging)
            for e in self.entries(platform, RankerId.DIVERSE_APPROVAL)
            if e.scraped_at >= horizon and e.item.id not in seen
        ]

    def source_opinions(self, platform: Platform) -> dict[str, dict[str, float | None]]:
        acc: dict[str, dict[str, list[int]]] = defaultdict(lambda: defaultdict(list))
        for e in self.entries(platform, RankerId.CHALLENGING_STEREOTYPES):
            for k, v in e.cs.opinions().items():
                if v is not None:
                    acc[e.item.source][k].append(v)
        return {s: {k: (float(np.mean(d[k])) if d.get(k) else None) for k in OPINION_FIELDS} for s, d in acc.items()}

    def cs_queue(
        self, user: str, platform: Platform, profile: Mapping[str, int | None], now: float
    ) -> dict[Lean, list[ContentItem]]:
        """Per-lean queues ordered by final score, best first."""
        horizon = now - self.freshness[RankerId.CHALLENGING_STEREOTYPES]
        seen = self.seen.live(user, now)
        src_ops = self.source_opinions(platform)
        scored: dict[Lean, list[tuple[float, str, ContentItem]]] = {Lean.LIBERAL: [], Lean.CONSERVATIVE: []}
        for e in self.entries(platform, RankerId.CHALLENGING_STEREOTYPES):
            if e.scraped_at < horizon or e.item.id in seen:
                continue
            post_sim = opinion_similarity(profile, e.cs.opinions())
            src_sim = opinion_similarity(profile, src_ops.get(e.item.source, {}))
            mm = 0.0 if post_sim is None or src_sim is None else mismatch_from_similarities(post_sim, src_sim)
            score = cs_final_score(e.cs.is_ideologically_surprising, mm)
            if score <= self.cs_min_score:
                continue
            lean = self.cs_lean(e)
            scored[lean].append((-score, e.item.id, ContentItem(**{**e.item.to_record(), "lean": lean})))
        return {lean: [it for _, _, it in sorted(v, key=lambda t: t[:2])] for lean, v in scored.items()}

    def news_candidates(self, user: str, platform: Platform, now: float) -> list[PoolEntry]:
        shown = self.news_shown.live(user, now)
        return [e for e in self.entries(platform, RankerId.ADD_NEWS) if e.item.id not in shown]

    def refresh_queue(
        self, user: str, platform: Platform, history: Sequence[ContentItem], rng: np.random.Generator, now: float
    ) -> PersonalQueue:
        q = refresh_personal_queue(
            user,
            platform,
            history,
            self.news_candidates(user, platform, now),
            rng,
            self.backend.embed,
            self.lean_of,
            now=now,
        )
        if q.flags:
            log.debug("queue refresh for %s/%s flagged %s", user, Platform(platform).value, q.flags)
        self.queues[(user, Platform(platform))] = q  # single assignment keeps the swap atomic
        return q

    def news_queue(self, user: str, platform: Platform) -> list[ContentItem]:
        q = self.queues.get((user, Platform(platform)))
        if q is None:
            return []
        pool = self.pools.get((Platform(platform), RankerId.ADD_NEWS), {})
        return [pool[i].item for i in q.ids if i in pool]

    # persistence
    def to_record(self) -> dict:
        with self._lock:
            return {
                "pools": [
                    {"platform": p.value, "ranker": r.value, "entries": [e.to_record() for e in pool.values()]}
                    for (p, r), pool in self.pools.items()
                ],
                "news_shown": self.news_shown.to_record(),
                "seen": self.seen.to_record(),
                "queues": [
                    {"user": u, "platform": p.value, "ids": list(q.ids), "refreshed_at": q.refreshed_at, "flags": list(q.flags)}
                    for (u, p), q in self.queues.items()
                ],
            }

    def load_record(self, rec: dict) -> None:
        with self._lock:
            self.pools.clear()
            self._texts.clear()
            for block in rec["pools"]:
                key = (Platform(block["platform"]), RankerId(block["ranker"]))
                for er in block["entries"]:
                    e = PoolEntry.from_record(er)
                    self.pools[key][e.item.id] = e
                    self._texts[key].add(normalize_text(e.item.text))
            self.news_shown = ShownCache.from_record(rec["news_shown"])
            self.seen = ShownCache.from_record(rec["seen"])
            self.queues = {
                (q["user"], Platform(q["platform"])): PersonalQueue(
                    q["user"], Platform(q["platform"]), tuple(q["ids"]), q["refreshed_at"], tuple(q["flags"])
                )
                for q in rec["queues"]
            }

    def snapshot(self, path: str) -> None:
        write_json_atomic(path, self.to_record())

    def restore(self, path: str) -> None:
        with open(path, encoding="utf-8") as fp:
            self.load_record(json.load(fp))

    def stats(self) -> dict:
        return {f"{p.value}/{r.value}": len(pool) for (p, r), pool in sorted(self.pools.items())}


def write_json_atomic(path: str, obj) -> None:
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    with os.fdopen(fd, "w", encoding="utf-8") as fp:
        json.dump(obj, fp, sort_keys=True)
    os.replace(tmp, path)

