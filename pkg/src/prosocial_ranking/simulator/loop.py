"""Closed-loop driver: synthetic content and sessions pushed through serving.

Every worker builds the same content stream and pools from global streams,
then serves only its share of users. Serving state is per user, so the
merged event log does not depend on how users are split across workers.
"""
from __future__ import annotations

import concurrent.futures as cf
import datetime as dt
import multiprocessing as mp
from collections import defaultdict
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..assignment import InterventionCalendar
from ..feed import ContentItem, FeedType, Kind, Pass, Platform, Slate
from ..inventory import Inventory, default_registry
from ..rankers import RankerId
from ..scoring import CIVIC_LEXICON, StubBackend
from ..serving import RankingRequest, RankingService, ServingConfig, SimClock, day_start_ms
from .config import SimConfig
from .population import STREAM_SESSIONS, SyntheticUser, user_rng

_PLATFORM_INDEX = {p: k for k, p in enumerate(Platform)}
_CIVIC = sorted(CIVIC_LEXICON)
_WORDS = (
    "today weekend coffee friends family music game movie dog cat recipe garden travel photo city park "
    "school work team season book show morning night sunset beach birthday update story video new old "
    "great funny happy sad big little best worst local home project idea question thanks"
).split()
_ADS_SHARE = 0.04
_TEXTLESS_SHARE = 0.03
_TOPIC_SHARE = 0.1


def _texts(rng: np.random.Generator, n: int, civic_p: float) -> list[str]:
    """``n`` template posts whose civic-word density is ``civic_p``."""
    lengths = rng.integers(8, 21, size=n)
    total = int(lengths.sum())
    civic = rng.random(total) < civic_p
    words = np.where(civic, rng.integers(len(_CIVIC), size=total), rng.integers(len(_WORDS), size=total))
    # modulo keeps both lookups in range; np.where keeps only the valid one
    civic_w = np.asarray(_CIVIC, dtype=object)[words % len(_CIVIC)]
    plain_w = np.asarray(_WORDS, dtype=object)[words % len(_WORDS)]
    tokens = np.where(civic, civic_w, plain_w)
    out, pos = [], 0
    for m in lengths:
        out.append(" ".join(tokens[pos : pos + m]))
        pos += m
    return out


@dataclass
class DayCorpus:
    posts: list[ContentItem]
    comments: list[ContentItem]


def day_corpus(cfg: SimConfig, day_index: int, platform: Platform) -> DayCorpus:
    """Organic items users on ``platform`` may see on one day."""
    rng = np.random.default_rng([cfg.seed, 2**32 - 1, STREAM_SESSIONS, day_index, _PLATFORM_INDEX[platform]])
    t0 = day_start_ms(cfg.start_date + dt.timedelta(days=day_index)) / 1000
    tag = f"{platform.value[:2].lower()}{day_index:04d}"

    def make(kind: Kind, n: int) -> list[ContentItem]:
        out = []
        draws = rng.random(n)
        texts = _texts(rng, n, 0.05)
        for k, (u, text) in enumerate(zip(draws, texts)):
            text = "" if u < _TEXTLESS_SHARE else text
            out.append(
                ContentItem(
                    f"{tag}-{kind.value[0].lower()}{k:05d}", platform, kind, text, f"{tag}-author{k % 97}",
                    t0 - float(rng.integers(0, 86400)), is_ad=bool(_TEXTLESS_SHARE <= u < _TEXTLESS_SHARE + _ADS_SHARE),
                )
            )
        return out

    return DayCorpus(make(Kind.POST, cfg.corpus_per_day), make(Kind.COMMENT, max(1, cfg.corpus_per_day // 2)))


def pool_batches(cfg: SimConfig, day_index: int, tick: int, now: float) -> list[tuple[RankerId, list[tuple[ContentItem, float]]]]:
    """Candidate items scraped at one tick, per pool."""
    rng = np.random.default_rng([cfg.seed, 2**32 - 1, STREAM_SESSIONS, day_index, 16 + tick])
    n = cfg.ingest_per_tick
    out = []
    for p in Platform:
        t = p.value[:2].lower()
        stamp = f"{t}{day_index:04d}t{tick:02d}"
        specs = (
            (RankerId.ADD_NEWS, "news", 95, 0.3),
            (RankerId.DIVERSE_APPROVAL, "civic", 30, 0.35),
            (RankerId.CHALLENGING_STEREOTYPES, "cs", 40, 0.3),
        )
        for ranker, kind, n_src, civic_p in specs:
            srcs = rng.integers(n_src, size=n)
            batch = [
                (ContentItem(f"{stamp}-{kind}{k:03d}", p, Kind.POST, text, f"{t}-{kind}-{s:03d}", now - 600.0), now)
                for k, (s, text) in enumerate(zip(srcs, _texts(rng, n, civic_p)))
            ]
            out.append((ranker, batch))
    return out


@dataclass(frozen=True)
class Session:
    t_ms: int
    platform: Platform
    kind: Kind
    feed: FeedType
    seq: int
    picks: tuple[np.ndarray, ...]


def user_sessions(cfg: SimConfig, u: SyntheticUser) -> dict[int, list[Session]]:
    """Sessions keyed by day index, each with the corpus indices it shows."""
    rng = user_rng(cfg.seed, u.index, STREAM_SESSIONS)
    first = max(u.enrollment.enrolled_at, cfg.start_date)
    last = min(u.exit_date, cfg.end_date)
    out: dict[int, list[Session]] = defaultdict(list)
    seq = 0
    n_posts, n_comments = cfg.corpus_per_day, max(1, cfg.corpus_per_day // 2)
    for k in range((first - cfg.start_date).days, (last - cfg.start_date).days):
        base = day_start_ms(cfg.start_date + dt.timedelta(days=k))
        for p in Platform:
            if not u.uses[p]:
                continue
            for _ in range(int(rng.poisson(cfg.sessions_per_day[p.value]))):
                t = base + int(rng.integers(86_400_000))
                if rng.random() < cfg.comment_share:
                    size = int(rng.integers(5, 81)) if p is Platform.REDDIT else int(rng.integers(5, 51))
                    picks = (rng.choice(n_comments, size=min(size, n_comments), replace=False),)
                    kind, feed = Kind.COMMENT, FeedType.TOPIC
                else:
                    kind = Kind.POST
                    feed = FeedType.TOPIC if rng.random() < _TOPIC_SHARE else FeedType.HOME
                    if p is Platform.FACEBOOK:
                        both = rng.choice(n_posts, size=min(45, n_posts), replace=False)
                        picks = (both[:10], both[10:])
                    else:
                        picks = (rng.choice(n_posts, size=min(50, n_posts), replace=False),)
                out[k].append(Session(t, p, kind, feed, seq, picks))
                seq += 1
    for k in out:
        out[k].sort(key=lambda s: (s.t_ms, s.seq))
    return out


def _serve_users(cfg: SimConfig, users: Sequence[SyntheticUser], calendar: InterventionCalendar) -> list[dict]:
    backend = StubBackend(cfg.seed)
    inv = Inventory(default_registry(), backend)
    clock = SimClock(day_start_ms(cfg.start_date))
    svc = RankingService(inventory=inv, backend=backend, calendar=calendar, config=ServingConfig(),
                         clock=clock, seed=cfg.seed)
    for u in users:
        svc.enroll(u.enrollment, u.profile)
    sessions = {u.user_id: user_sessions(cfg, u) for u in users}
    news_users = [u for u in users if u.arm is RankerId.ADD_NEWS]
    dirty: set[tuple[str, Platform]] = set()
    refreshed: set[tuple[str, Platform]] = set()
    tick_ms = cfg.tick_hours * 3_600_000
    events: list[dict] = []
    for k, day in enumerate(cfg.dates()):
        base = day_start_ms(day)
        corpus = {p: day_corpus(cfg, k, p) for p in Platform}
        todays = [(s, uid) for uid, by_day in sessions.items() for s in by_day.get(k, ())]
        todays.sort(key=lambda x: (x[0].t_ms, x[1], x[0].seq))
        for u in users:
            if u.arm is RankerId.CHALLENGING_STEREOTYPES:
                svc.state(u.user_id).cs_queue = None  # rebuilt lazily on first use each day
        pos = 0
        for tick in range(24 // cfg.tick_hours):
            t_tick = base + tick * tick_ms
            clock.set_ms(t_tick)
            for ranker, batch in pool_batches(cfg, k, tick, t_tick / 1000):
                inv.ingest(batch, ranker, t_tick / 1000)
            for u in news_users:
                if not u.active_on(day):
                    continue
                st = svc.state(u.user_id)
                for p in Platform:
                    key = (u.user_id, p)
                    if not (u.uses[p] and svc.is_active(st, p, t_tick)):
                        continue
                    if key in dirty or key not in refreshed:
                        svc.refresh_news_queue(u.user_id, p, t_tick)
                        dirty.discard(key)
                        refreshed.add(key)
            end = t_tick + tick_ms
            while pos < len(todays) and todays[pos][0].t_ms < end:
                s, uid = todays[pos]
                pos += 1
                clock.set_ms(s.t_ms)
                pool = corpus[s.platform].posts if s.kind is Kind.POST else corpus[s.platform].comments
                rid = f"{uid}-{s.seq:06d}"
                for j, pick in enumerate(s.picks):
                    slate = Slate(s.platform, s.kind, [pool[i] for i in pick], rid, uid,
                                  Pass.SECOND if j else Pass.FIRST, s.feed)
                    svc.handle(RankingRequest(uid, slate, s.t_ms / 1000))
                    ev = svc.events[-1]
                    ev["t_ms"] = s.t_ms
                    events.append(ev)
                dirty.add((uid, s.platform))
        svc.events.clear()
    return events


def _worker(args) -> list[dict]:
    cfg, users, calendar = args
    return _serve_users(cfg, users, calendar)


def event_sort_key(ev: dict) -> tuple:
    return (ev["t_ms"], ev["user_id"], ev["request_id"], ev["pass"])


def run_loop(
    cfg: SimConfig, users: Sequence[SyntheticUser], calendar: InterventionCalendar, workers: int | None = None
) -> list[dict]:
    """Serve every user's sessions and return the merged, sorted event log."""
    w = max(1, workers or cfg.workers)
    shards = [list(users[i::w]) for i in range(w)]
    if w == 1:
        parts = [_serve_users(cfg, shards[0], calendar)]
    else:
        ctx = mp.get_context("fork") if "fork" in mp.get_all_start_methods() else None
        with cf.ProcessPoolExecutor(max_workers=w, mp_context=ctx) as ex:
            parts = list(ex.map(_worker, [(cfg, s, calendar) for s in shards]))
    events = [ev for part in parts for ev in part]
    events.sort(key=event_sort_key)
    return events
