"""Ranking service with fixed-latency release.

:meth:`RankingService.handle` resolves the user's arm, runs the ranker,
and releases the response exactly ``hold_ms`` after arrival whatever the
arm, so treatment cannot be inferred from timing. Per-user state is updated
in :meth:`RankingService.commit` under a per-user lock.
"""
from __future__ import annotations

import datetime as dt
import hashlib
import json
import logging
import threading
import time
from collections import deque
from dataclasses import asdict, dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable, Iterable, Mapping, Protocol, TextIO

import numpy as np

from .assignment import Enrollment, InterventionCalendar, default_calendar, enroll, treatment_start
from .feed import (
    ContentItem,
    ContractViolation,
    Kind,
    Lean,
    Origin,
    Pass,
    Platform,
    RankingDecision,
    Slate,
    apply_decision,
    normalized_rank_change,
)
from .inventory import Inventory
from .rankers import (
    DEADLINE_MISSED,
    INACTIVE,
    RankContext,
    RankerId,
    dispatch,
    lean_state_after,
    rate_floor,
)
from .scoring import ScoreCache, ScorerBackend, StubBackend

log = logging.getLogger(__name__)

DAY_S = 86400


class EnrollmentError(KeyError):
    """Request for a user that is not enrolled."""


class Clock(Protocol):
    def now_ms(self) -> int: ...


class WallClock:
    simulated = False

    def now_ms(self) -> int:
        return time.time_ns() // 1_000_000


class SimClock:
    """Settable integer-millisecond clock for deterministic traces."""

    simulated = True

    def __init__(self, start_ms: int = 0):
        self._now = int(start_ms)
        self._lock = threading.Lock()

    def now_ms(self) -> int:
        return self._now

    def set_ms(self, t: int) -> None:
        with self._lock:
            self._now = int(t)

    def advance_ms(self, d: int) -> None:
        with self._lock:
            self._now += int(d)


@dataclass(frozen=True)
class ServingConfig:
    hold_ms: int = 500
    ramp_days: int = 14
    ramp_max_ms: int = 1200
    holdback_days: int = 14
    dosage: float = 0.15
    news_share: float = 0.15
    cs_share: float = 0.2
    history_requests: int = 100
    refresh_hours: float = 3.0

    @classmethod
    def from_record(cls, rec: Mapping) -> "ServingConfig":
        unknown = set(rec) - set(cls.__dataclass_fields__)
        if unknown:
            raise ContractViolation(f"unknown serving config keys: {sorted(unknown)}")
        return cls(**rec)


@dataclass
class UserState:
    enrollment: Enrollment
    profile: dict[str, int | None] = field(default_factory=dict)
    history: deque = field(default_factory=lambda: deque(maxlen=100))
    day: dt.date | None = None
    organic_posts_today: int = 0
    injected_today: int = 0
    last_lean: str | None = None
    lean_balance: int = 0
    requests: int = 0
    first_pass_served: dict[str, tuple[str, ...]] = field(default_factory=dict)
    cs_queue: dict | None = None

    def to_record(self) -> dict:
        return {
            "enrollment": self.enrollment.to_record(),
            "profile": self.profile,
            "history": [[it.to_record() for it in req] for req in self.history],
            "day": None if self.day is None else self.day.isoformat(),
            "organic_posts_today": self.organic_posts_today,
            "injected_today": self.injected_today,
            "last_lean": self.last_lean,
            "lean_balance": self.lean_balance,
            "requests": self.requests,
        }

    @classmethod
    def from_record(cls, rec: dict, history_requests: int = 100) -> "UserState":
        st = cls(Enrollment.from_record(rec["enrollment"]), dict(rec["profile"]))
        st.history = deque(
            (tuple(ContentItem.from_record(r) for r in req) for req in rec["history"]), maxlen=history_requests
        )
        st.day = None if rec["day"] is None else dt.date.fromisoformat(rec["day"])
        st.organic_posts_today = rec["organic_posts_today"]
        st.injected_today = rec["injected_today"]
        st.last_lean = rec["last_lean"]
        st.lean_balance = rec["lean_balance"]
        st.requests = rec["requests"]
        return st


@dataclass(frozen=True)
class RankingRequest:
    user_id: str
    slate: Slate
    timestamp: float = 0.0

    @property
    def pass_(self) -> Pass:
        return self.slate.pass_

    def to_record(self) -> dict:
        return {"user_id": self.user_id, "slate": self.slate.to_record(), "timestamp": self.timestamp}

    @classmethod
    def from_record(cls, rec: dict) -> "RankingRequest":
        return cls(rec["user_id"], Slate.from_record(rec["slate"]), float(rec.get("timestamp", 0.0)))


@dataclass(frozen=True)
class RankingResponse:
    decision: RankingDecision
    served_at_ms: int
    release_offset_ms: int
    deadline_met: bool
    ranker: RankerId
    active: bool
    slate: Slate

    def to_record(self) -> dict:
        return {
            "decision": self.decision.to_record(),
            "served_at": self.served_at_ms,
            "release_offset_ms": self.release_offset_ms,
            "deadline_met": self.deadline_met,
            "ranker": self.ranker.value,
            "active": self.active,
            "slate": self.slate.to_record(),
        }


LatencyModel = Callable[[RankerId, Slate], int]


def utc_day(ms: int) -> dt.date:
    return dt.datetime.fromtimestamp(ms / 1000, dt.timezone.utc).date()


def day_start_ms(day: dt.date) -> int:
    return int(dt.datetime(day.year, day.month, day.day, tzinfo=dt.timezone.utc).timestamp()) * 1000


def client_lag_ms(enrolled_at: dt.date, now_ms: int, ramp_days: int = 14, max_ms: int = 1200) -> float:
    """Artificial client-side delay ramping linearly from zero over ``ramp_days``."""
    days = (now_ms - day_start_ms(enrolled_at)) / (DAY_S * 1000)
    return max_ms * min(1.0, max(0.0, days) / ramp_days)


def _user_key(user_id: str) -> int:
    return int.from_bytes(hashlib.blake2b(user_id.encode("utf-8"), digest_size=8).digest(), "little")


class RankingService:
    def __init__(
        self,
        enrollments: Iterable[Enrollment] = (),
        inventory: Inventory | None = None,
        backend: ScorerBackend | None = None,
        calendar: InterventionCalendar | None = None,
        config: ServingConfig | None = None,
        clock: Clock | None = None,
        seed: int = 0,
        latency_model: LatencyModel | None = None,
        event_sink: TextIO | None = None,
        keep_events: bool = True,
    ):
        self.config = config or ServingConfig()
        self.backend = backend or StubBackend(seed)
        self.scores = ScoreCache(self.backend)
        self.inventory = inventory
        self.calendar = calendar or default_calendar()
        self.clock = clock or WallClock()
        self.seed = seed
        self.latency_model = latency_model
        self.event_sink = event_sink
        self.keep_events = keep_events
        self.events: list[dict] = []
        self.users: dict[str, UserState] = {}
        self._locks: dict[str, threading.Lock] = {}
        self._global = threading.Lock()
        self._log_lock = threading.Lock()
        self.counters = {"requests": 0, "deadline_missed": 0, "treated": 0}
        for e in enrollments:
            self.enroll(e)

    # user bookkeeping
    def enroll(self, e: Enrollment, profile: Mapping[str, int | None] | None = None) -> UserState:
        with self._global:
            st = UserState(e, dict(profile or {}), deque(maxlen=self.config.history_requests))
            self.users[e.user_id] = st
            self._locks[e.user_id] = threading.Lock()
            return st

    def state(self, user_id: str) -> UserState:
        try:
            return self.users[user_id]
        except KeyError:
            raise EnrollmentError(f"user {user_id!r} is not enrolled") from None

    def ranker_for(self, user_id: str) -> RankerId:
        return self.state(user_id).enrollment.arm

    def is_active(self, st: UserState, platform: Platform, now_ms: int) -> bool:
        e = st.enrollment
        if e.arm is RankerId.CONTROL:
            return False
        return utc_day(now_ms) >= treatment_start(e, self.calendar, platform, self.config.holdback_days)

    def client_lag(self, user_id: str, now_ms: int | None = None) -> float:
        now = self.clock.now_ms() if now_ms is None else now_ms
        st = self.state(user_id)
        return client_lag_ms(st.enrollment.enrolled_at, now, self.config.ramp_days, self.config.ramp_max_ms)

    def rng_for(self, st: UserState) -> np.random.Generator:
        return np.random.default_rng([self.seed, _user_key(st.enrollment.user_id), st.requests])

    # ranking
    def _context(self, ranker: RankerId, st: UserState, slate: Slate, now_ms: int) -> RankContext:
        cfg = self.config
        ctx = RankContext(rng=self.rng_for(st), dosage=cfg.dosage, cs_share=cfg.cs_share, news_share=cfg.news_share)
        now_s = now_ms / 1000
        uid = st.enrollment.user_id
        excluded: frozenset[str] = frozenset()
        if slate.pass_ is Pass.SECOND:
            excluded = frozenset(st.first_pass_served.get(slate.request_id, ()))
        movable = [it for it in slate.items if not it.immovable]
        if ranker in (RankerId.UPRANK_BRIDGING, RankerId.UPRANK_BRIDGING_DOWNRANK_TOXIC):
            ctx.scores = {it.id: self.scores.attributes(it) for it in movable}
        elif ranker in (RankerId.DIVERSE_APPROVAL, RankerId.CHALLENGING_STEREOTYPES):
            ctx.civic = {it.id: self.scores.civic(it) for it in movable}
        inv = self.inventory
        if inv is None:
            return ctx
        if ranker is RankerId.DIVERSE_APPROVAL:
            ctx.da_candidates = [c for c in inv.da_candidates(uid, slate.platform, now_s) if c.item.id not in excluded]
        elif ranker is RankerId.CHALLENGING_STEREOTYPES:
            if st.cs_queue is None or slate.platform not in st.cs_queue:
                self.refresh_cs_queue(uid, slate.platform, now_ms)
            ctx.cs_queue = st.cs_queue[slate.platform]
            ctx.shown = inv.seen.live(uid, now_s) | excluded
            ctx.last_lean = None if st.last_lean is None else Lean(st.last_lean)
            ctx.lean_balance = st.lean_balance
        elif ranker is RankerId.ADD_NEWS:
            self._roll_day(st, now_ms)
            organic = sum(1 for it in slate.items if it.origin is Origin.ORGANIC)
            ctx.news_budget = rate_floor(cfg.news_share, st.organic_posts_today + organic) - st.injected_today
            ctx.news_queue = inv.news_queue(uid, slate.platform)
            ctx.shown = inv.news_shown.live(uid, now_s) | excluded
            ctx.news_newest = inv.newest(slate.platform, RankerId.ADD_NEWS)
        return ctx

    def refresh_cs_queue(self, user_id: str, platform: Platform, now_ms: int) -> None:
        st = self.state(user_id)
        q = self.inventory.cs_queue(user_id, platform, st.profile, now_ms / 1000)
        st.cs_queue = {**(st.cs_queue or {}), Platform(platform): q}

    def refresh_news_queue(self, user_id: str, platform: Platform, now_ms: int) -> None:
        st = self.state(user_id)
        platform = Platform(platform)
        history = [it for req in st.history for it in req if it.platform is platform]
        rng = np.random.default_rng([self.seed, _user_key(user_id), now_ms, 7])
        self.inventory.refresh_queue(user_id, platform, history, rng, now_ms / 1000)

    def refresh_queues(self, now_ms: int, platforms: Iterable[Platform] = tuple(Platform)) -> int:
        """Background cycle: rebuild personal queues for every content-adding user."""
        n = 0
        for uid, st in list(self.users.items()):
            arm = st.enrollment.arm
            if arm not in (RankerId.ADD_NEWS, RankerId.CHALLENGING_STEREOTYPES):
                continue
            with self._locks[uid]:
                for p in platforms:
                    if arm is RankerId.ADD_NEWS:
                        self.refresh_news_queue(uid, p, now_ms)
                    else:
                        self.refresh_cs_queue(uid, p, now_ms)
                    n += 1
        return n

    def _roll_day(self, st: UserState, now_ms: int) -> None:
        day = utc_day(now_ms)
        if st.day != day:
            st.day, st.organic_posts_today, st.injected_today = day, 0, 0

    def handle(self, request: RankingRequest) -> RankingResponse:
        arrival = self.clock.now_ms()
        st = self.state(request.user_id)
        slate = request.slate
        slate.validate()
        if slate.user_id and slate.user_id != request.user_id:
            raise ContractViolation("slate user_id does not match request")
        ranker = st.enrollment.arm
        active = self.is_active(st, slate.platform, arrival)
        hold = self.config.hold_ms
        with self._locks[request.user_id]:
            if not active:
                decision = RankingDecision.identity(slate, INACTIVE)
                cost = self.latency_model(RankerId.CONTROL, slate) if self.latency_model else 0
            else:
                t0 = time.perf_counter()
                decision = dispatch(ranker, slate, self._context(ranker, st, slate, arrival))
                if self.latency_model is not None:
                    cost = int(self.latency_model(ranker, slate))
                elif getattr(self.clock, "simulated", False):
                    cost = 0
                else:
                    cost = int((time.perf_counter() - t0) * 1000)
            deadline_met = cost <= hold
            if not deadline_met:
                decision = RankingDecision.identity(slate, DEADLINE_MISSED)
            served = self._commit(st, slate, decision, arrival, ranker)
            st.requests += 1
        release = arrival + (hold if deadline_met else cost)
        resp = RankingResponse(decision, release, release - arrival, deadline_met, ranker, active, served)
        self._log(request, resp, slate)
        return resp

    def commit(
        self,
        user_id: str,
        slate: Slate,
        decision: RankingDecision,
        now_ms: int,
        ranker: RankerId | None = None,
    ) -> Slate:
        """Apply ``decision`` and fold its side effects into the user's state atomically."""
        with self._locks[user_id]:
            return self._commit(self.state(user_id), slate, decision, now_ms, ranker)

    def _commit(
        self, st: UserState, slate: Slate, decision: RankingDecision, now_ms: int, ranker: RankerId | None
    ) -> Slate:
        served = apply_decision(slate, decision)
        ranker = ranker or st.enrollment.arm
        uid = st.enrollment.user_id
        now_s = now_ms / 1000
        self._roll_day(st, now_ms)
        st.history.append(served.items)
        if slate.kind is Kind.POST:
            st.organic_posts_today += sum(1 for it in served.items if it.origin is Origin.ORGANIC)
        if slate.platform is Platform.FACEBOOK and slate.kind is Kind.POST and slate.pass_ is Pass.FIRST:
            st.first_pass_served = {slate.request_id: tuple(served.ids)}
        added = [it.id for it, _ in decision.added]
        if added and self.inventory is not None:
            if ranker is RankerId.ADD_NEWS:
                self.inventory.news_shown.mark(uid, added, now_s)
            else:
                self.inventory.seen.mark(uid, added, now_s)
        if ranker is RankerId.ADD_NEWS:
            st.injected_today += len(added)
        if ranker is RankerId.CHALLENGING_STEREOTYPES and added:
            last, st.lean_balance = lean_state_after(decision, st.last_lean, st.lean_balance)
            st.last_lean = None if last is None else last.value
            if st.cs_queue and slate.platform in st.cs_queue:
                gone = set(added)
                st.cs_queue[slate.platform] = {
                    lean: [it for it in q if it.id not in gone] for lean, q in st.cs_queue[slate.platform].items()
                }
        return served

    def _log(self, request: RankingRequest, resp: RankingResponse, before: Slate) -> None:
        d = resp.decision
        rec = {
            "request_id": before.request_id,
            "user_id": request.user_id,
            "ranker": resp.ranker.value,
            "active": resp.active,
            "platform": before.platform.value,
            "kind": before.kind.value,
            "pass": before.pass_.value,
            "feed": before.feed.value,
            "day": utc_day(resp.served_at_ms - resp.release_offset_ms).isoformat(),
            "n": len(before),
            "added": len(d.added),
            "removed": len(d.removed),
            "normalized_rank_change": normalized_rank_change(before, resp.slate),
            "deadline_met": resp.deadline_met,
            "release_offset_ms": resp.release_offset_ms,
            "flags": list(d.flags),
        }
        with self._log_lock:
            self.counters["requests"] += 1
            self.counters["deadline_missed"] += not resp.deadline_met
            self.counters["treated"] += resp.active
            if self.keep_events:
                self.events.append(rec)
            if self.event_sink is not None:
                self.event_sink.write(json.dumps(rec, sort_keys=True) + "\n")

    # persistence
    def snapshot(self, path: str) -> None:
        from .inventory import write_json_atomic

        rec = {
            "users": [st.to_record() for st in self.users.values()],
            "inventory": None if self.inventory is None else self.inventory.to_record(),
            "config": asdict(self.config),
        }
        write_json_atomic(path, rec)

    def restore(self, path: str) -> None:
        with open(path, encoding="utf-8") as fp:
            rec = json.load(fp)
        for ur in rec["users"]:
            st = UserState.from_record(ur, self.config.history_requests)
            with self._global:
                self.users[st.enrollment.user_id] = st
                self._locks.setdefault(st.enrollment.user_id, threading.Lock())
        if rec["inventory"] is not None and self.inventory is not None:
            self.inventory.load_record(rec["inventory"])

    def stats(self) -> dict:
        with self._log_lock:
            out = dict(self.counters)
        out["users"] = len(self.users)
        if self.inventory is not None:
            out["pools"] = self.inventory.stats()
        return out


def make_http_server(service: RankingService, host: str = "127.0.0.1", port: int = 8000) -> ThreadingHTTPServer:
    """Threaded HTTP front end: POST /rank, POST /enroll, GET /health, GET /stats.

    Each request sleeps until its release time on its own thread so the
    hold never blocks other users.
    """

    class Handler(BaseHTTPRequestHandler):
        def _send(self, code: int, body: dict) -> None:
            data = json.dumps(body).encode("utf-8")
            self.send_response(code)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def do_GET(self) -> None:
            if self.path == "/health":
                self._send(200, {"status": "ok"})
            elif self.path == "/stats":
                self._send(200, service.stats())
            else:
                self._send(404, {"error": "not found"})

        def do_POST(self) -> None:
            if self.path == "/enroll":
                self._enroll()
                return
            if self.path != "/rank":
                self._send(404, {"error": "not found"})
                return
            try:
                body = json.loads(self.rfile.read(int(self.headers.get("Content-Length", 0))))
                resp = service.handle(RankingRequest.from_record(body))
            except EnrollmentError as exc:
                self._send(404, {"error": str(exc)})
                return
            except (ContractViolation, ValueError, KeyError, TypeError) as exc:
                self._send(400, {"error": str(exc)})
                return
            wait = resp.served_at_ms - service.clock.now_ms()
            if wait > 0 and not getattr(service.clock, "simulated", False):
                time.sleep(wait / 1000)
            self._send(200, resp.to_record())

        def _enroll(self) -> None:
            try:
                body = json.loads(self.rfile.read(int(self.headers.get("Content-Length", 0))))
                e = enroll(body["user_id"], body["enrolled_at"], service.seed, body.get("covariates"))
            except (ValueError, KeyError, TypeError) as exc:
                self._send(400, {"error": str(exc)})
                return
            service.enroll(e, body.get("profile"))
            self._send(200, e.to_record())

        def log_message(self, fmt, *args) -> None:
            log.debug("http: " + fmt, *args)

    return ThreadingHTTPServer((host, port), Handler)
