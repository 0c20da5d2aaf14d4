"""Content classifiers behind one backend interface.

:class:`StubBackend` derives every score from a seeded 64-bit hash of the
text, so tests and simulations are reproducible without any model.
:class:`ExternalBackend` forwards attribute requests to a provider over a
caller-supplied transport and degrades to the stub on failure.
"""
from __future__ import annotations

import functools
import hashlib
import logging
import math
import re
import struct
import time
from dataclasses import dataclass, field, fields
from fractions import Fraction
from importlib import resources
from typing import Callable, Mapping, Protocol, Sequence

import numpy as np

from .feed import ContentItem, ContractViolation, Platform

log = logging.getLogger(__name__)

BRIDGING_ATTRIBUTES = ("affinity", "compassion", "curiosity", "nuance", "personal_story", "reasoning", "respect")
NEGATIVE_ATTRIBUTES = (
    "alienation", "fearmongering", "stereotyping", "moral_outrage", "scapegoating", "identity_attack", "insult",
)
ATTRIBUTES = BRIDGING_ATTRIBUTES + NEGATIVE_ATTRIBUTES + ("toxicity", "threat")

WeightTable = Mapping[str, Fraction]

UPRANK_WEIGHTS: dict[str, Fraction] = {
    "reasoning": Fraction(1, 6),
    "personal_story": Fraction(1, 6),
    "affinity": Fraction(1, 6),
    "compassion": Fraction(1, 6),
    "respect": Fraction(1, 6),
    "curiosity": Fraction(1, 6),
}

UPRANK_DOWNRANK_WEIGHTS: dict[str, Fraction] = {
    **UPRANK_WEIGHTS,
    "fearmongering": Fraction(-1, 6),
    "stereotyping": Fraction(-1, 6),
    "scapegoating": Fraction(-1, 18),
    "moral_outrage": Fraction(-1, 18),
    "alienation": Fraction(-1, 18),
    "toxicity": Fraction(-1, 8),
    "identity_attack": Fraction(-1, 8),
    "insult": Fraction(-1, 8),
    "threat": Fraction(-1, 8),
}

# checked at import so a typo in either table fails loudly
assert sum(UPRANK_WEIGHTS.values()) == 1
assert sum(UPRANK_DOWNRANK_WEIGHTS.values()) == 0

CIVIC_LEXICON = frozenset({
    "election", "vote", "voters", "congress", "senate", "president", "policy", "democrat", "democrats",
    "republican", "republicans", "immigration", "abortion", "tax", "taxes", "economy", "healthcare",
    "climate", "governor", "campaign", "ballot", "court", "law", "rights", "government", "political",
})

OPINION_FIELDS = (
    "opinion_trump", "opinion_media", "opinion_immigration", "opinion_abortion", "opinion_israel",
    "opinion_climate", "opinion_racism", "opinion_military", "opinion_economy",
)


class ScoreUnavailable(RuntimeError):
    """The scoring provider failed or timed out."""


def normalize_text(text: str) -> str:
    return " ".join(text.lower().split())


@functools.lru_cache(maxsize=64)
def _keyed_hasher(seed: int):
    return hashlib.blake2b(digest_size=8, key=struct.pack("<q", seed))


def hash_unit(seed: int, *parts: str) -> float:
    """Stable hash of ``parts`` mapped to [0, 1)."""
    h = _keyed_hasher(seed).copy()
    h.update("".join(p + "\x1f" for p in parts).encode("utf-8"))
    return int.from_bytes(h.digest(), "little") / 2.0**64


@dataclass(frozen=True)
class TwoPartyBridging:
    dem_score: int
    rep_score: int

    def __post_init__(self) -> None:
        for v in (self.dem_score, self.rep_score):
            if v not in (1, 2, 3, 4, 5):
                raise ContractViolation(f"party scores must be in 1..5, got {v}")

    @property
    def bridging_score(self) -> int:
        return min(self.dem_score, self.rep_score)

    @property
    def is_bridging(self) -> bool:
        return self.bridging_score >= 3


@dataclass(frozen=True)
class CsAnnotation:
    """Quality and ideology annotation of one candidate post.

    Boolean prompt outputs are stored as 0.0/1.0 so thresholds apply
    uniformly.
    """

    nsfw: float = 0.0
    niche: float = 0.0
    frivolous: float = 0.0
    outrage: float = 0.0
    conspiratorial: float = 0.0
    pessimistic: float = 0.0
    sarcastic: float = 0.0
    logistical: float = 0.0
    has_enough_context: float = 1.0
    is_political_social: float = 0.0
    is_ideologically_surprising: float = 0.0
    political_orientation: int | None = None
    opinion_trump: int | None = None
    opinion_media: int | None = None
    opinion_immigration: int | None = None
    opinion_abortion: int | None = None
    opinion_israel: int | None = None
    opinion_climate: int | None = None
    opinion_racism: int | None = None
    opinion_military: int | None = None
    opinion_economy: int | None = None

    def __post_init__(self) -> None:
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "political_orientation":
                if v is not None and not 1 <= v <= 7:
                    raise ContractViolation(f"political_orientation out of range: {v}")
            elif f.name.startswith("opinion_"):
                if v is not None and not 1 <= v <= 5:
                    raise ContractViolation(f"{f.name} out of range: {v}")
            elif not 0.0 <= v <= 1.0:
                raise ContractViolation(f"{f.name} must be a probability, got {v}")

    def opinions(self) -> dict[str, int | None]:
        return {k: getattr(self, k) for k in OPINION_FIELDS}

    def to_record(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def combine_weighted(scores: Mapping[str, float], table: WeightTable) -> float:
    """Weighted sum of attribute scores under ``table``.

    Weights are scaled to integers over their common denominator and the
    products summed with :func:`math.fsum`, so the only rounding is the final
    division. All-ones inputs therefore give exactly the rational weight sum.
    """
    missing = [a for a in table if a not in scores]
    if missing:
        raise ContractViolation(f"scores missing attributes {missing}")
    ints, denom = _integer_weights(table)
    return math.fsum(w * scores[a] for a, w in ints.items()) / denom


_INT_TABLES: dict[int, tuple[Mapping, dict[str, int], int]] = {}


def _integer_weights(table: WeightTable) -> tuple[dict[str, int], int]:
    hit = _INT_TABLES.get(id(table))
    if hit is None or hit[0] is not table or len(hit[1]) != len(table):
        denom = math.lcm(*(Fraction(w).denominator for w in table.values())) if table else 1
        ints = {a: int(Fraction(w) * denom) for a, w in table.items()}
        hit = _INT_TABLES[id(table)] = (table, ints, denom)
    return hit[1], hit[2]


def combine_exact(scores: Mapping[str, Fraction | int], table: WeightTable) -> Fraction:
    """Rational version of :func:`combine_weighted` for symbolic checks."""
    missing = [a for a in table if a not in scores]
    if missing:
        raise ContractViolation(f"scores missing attributes {missing}")
    return sum((w * Fraction(scores[a]) for a, w in table.items()), Fraction(0))


_UNIVERSAL_BELOW = {
    "nsfw": 0.1, "niche": 0.4, "frivolous": 0.4, "outrage": 0.66, "conspiratorial": 0.7, "pessimistic": 0.66,
}


def passes_cs_filters(a: CsAnnotation, platform: Platform) -> bool:
    """Quality filters for stereotype-challenging candidates. Strict bounds."""
    platform = Platform(platform)
    if any(not getattr(a, k) < bound for k, bound in _UNIVERSAL_BELOW.items()):
        return False
    if a.political_orientation is None or not 2.1 < a.political_orientation < 5.9:
        return False
    if platform is Platform.REDDIT:
        return a.sarcastic < 0.75
    ok = a.has_enough_context > 0.75 and a.sarcastic < 0.75
    if platform is Platform.FACEBOOK:
        ok = ok and a.logistical < 0.2
    return ok


def cs_final_score(challenging: float, mismatch: float) -> float:
    if not 0.0 <= challenging <= 1.0:
        raise ContractViolation(f"challenging score out of [0,1]: {challenging}")
    if not 0.0 <= mismatch <= 0.9:
        raise ContractViolation(f"mismatch out of [0,0.9]: {mismatch}")
    return max(challenging, mismatch)


def opinion_similarity(user_profile: Mapping[str, int | None], post: Mapping[str, int | None]) -> float | None:
    """1 minus the mean absolute gap on shared opinion fields, scaled to [0,1].

    Returns ``None`` when no field is non-null on both sides.
    """
    gaps = [
        abs(user_profile[k] - post[k]) / 4.0
        for k in OPINION_FIELDS
        if user_profile.get(k) is not None and post.get(k) is not None
    ]
    if not gaps:
        return None
    return 1.0 - sum(gaps) / len(gaps)


def _high(x: float) -> float:
    return min(1.0, max(0.0, (x - 0.6) / 0.4))


def _moderate(x: float) -> float:
    return max(0.0, 1.0 - abs(x - 0.5) / 0.3)


def mismatch_from_similarities(post_sim: float, source_sim: float) -> float:
    return 0.9 * max(_high(source_sim) * _moderate(post_sim), _high(post_sim) * _moderate(source_sim))


def source_post_mismatch(
    user_profile: Mapping[str, int | None], post: CsAnnotation, source_similarity: float | None
) -> float:
    """Score in [0, 0.9] for posts the user agrees with but not their source, or vice versa.

    The "high" similarity is a ramp from 0.6 to 1 and the "moderate" one a
    triangle peaking at 0.5 and vanishing at 0.2 and 0.8.
    """
    post_sim = opinion_similarity(user_profile, post.opinions())
    if post_sim is None or source_similarity is None:
        return 0.0
    return mismatch_from_similarities(post_sim, source_similarity)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def load_cs_prompt() -> str:
    """Annotation prompt for the optional live LLM backend (never sent by default)."""
    return resources.files("prosocial_ranking.data").joinpath("challenging_stereotypes_prompt.txt").read_text("utf-8")


class ScorerBackend(Protocol):
    def attributes(self, item: ContentItem, names: Sequence[str] = ATTRIBUTES) -> dict[str, float]: ...
    def civic(self, item: ContentItem) -> float: ...
    def bridging(self, item: ContentItem) -> TwoPartyBridging: ...
    def cs_annotation(self, item: ContentItem) -> CsAnnotation: ...
    def embed(self, text: str) -> np.ndarray: ...


@dataclass(frozen=True)
class StubBackend:
    """Deterministic pseudo-classifier keyed on (seed, text)."""

    seed: int = 0
    dim: int = 64
    ngram: int = 3
    lexicon: frozenset = CIVIC_LEXICON
    surprising_rate: float = 0.2
    flag_rate: float = 0.08

    def _u(self, *parts: str) -> float:
        return hash_unit(self.seed, *parts)

    def attributes(self, item: ContentItem, names: Sequence[str] = ATTRIBUTES) -> dict[str, float]:
        text = normalize_text(item.text)
        if not text:
            return {a: 0.0 for a in names}
        return {a: self._u(a, text) for a in names}

    def lexicon_hits(self, text: str) -> int:
        return sum(1 for w in re.findall(r"[a-z]+", text.lower()) if w in self.lexicon)

    def civic(self, item: ContentItem) -> float:
        text = normalize_text(item.text)
        if not text:
            return 0.0
        # two lexicon hits alone reach 0.5; without any hit the ceiling is 0.45
        return min(1.0, 0.45 * self._u("civic", text) + 0.25 * min(self.lexicon_hits(text), 4))

    def bridging(self, item: ContentItem) -> TwoPartyBridging:
        text = normalize_text(item.text)
        dem = 1 + int(5 * self._u("bridging_dem", text))
        rep = 1 + int(5 * self._u("bridging_rep", text))
        return TwoPartyBridging(dem, rep)

    def national_interest(self, item: ContentItem) -> bool:
        return self._u("national", normalize_text(item.text)) < 0.9

    def cs_annotation(self, item: ContentItem) -> CsAnnotation:
        text = normalize_text(item.text)
        u = lambda *name: self._u("cs", *name, text)  # noqa: E731
        flag = lambda name, rate=self.flag_rate: 1.0 if u(name) < rate else 0.0  # noqa: E731
        political = self.lexicon_hits(text) > 0 or u("political") < 0.5
        kw: dict = dict(
            nsfw=flag("nsfw", 0.02),
            niche=flag("niche"),
            frivolous=flag("frivolous"),
            outrage=flag("outrage"),
            conspiratorial=flag("conspiratorial", 0.04),
            pessimistic=flag("pessimistic"),
            sarcastic=flag("sarcastic"),
            logistical=flag("logistical"),
            has_enough_context=1.0 - flag("context"),
            is_political_social=1.0 if political else 0.0,
            is_ideologically_surprising=flag("surprising", self.surprising_rate),
        )
        if political:
            kw["political_orientation"] = 1 + int(7 * u("orientation"))
            for name in OPINION_FIELDS:
                if u(name, "present") < 0.6:
                    kw[name] = 1 + int(5 * u(name))
        return CsAnnotation(**kw)

    def embed(self, text: str) -> np.ndarray:
        """Signed feature hashing of character n-grams, L2-normalized."""
        return _hashed_embedding(normalize_text(text), self.seed, self.dim, self.ngram).copy()


def _gram_bucket(gram: str, seed: int, dim: int) -> tuple[int, float]:
    h = hashlib.blake2b(gram.encode("utf-8"), digest_size=8, key=struct.pack("<q", seed)).digest()
    return int.from_bytes(h[:4], "little") % dim, (1.0 if h[4] & 1 else -1.0)


@functools.lru_cache(maxsize=65536)
def _hashed_embedding(text: str, seed: int, dim: int, ngram: int) -> np.ndarray:
    v = np.zeros(dim)
    if not text:
        return v
    padded = f" {text} "
    for k in range(max(1, len(padded) - ngram + 1)):
        idx, sign = _cached_bucket(padded[k : k + ngram], seed, dim)
        v[idx] += sign
    n = np.linalg.norm(v)
    return v / n if n > 0 else v


_cached_bucket = functools.lru_cache(maxsize=262144)(_gram_bucket)


Transport = Callable[[list[dict]], list[dict]]


@dataclass
class ExternalBackend:
    """Client for a remote attribute scorer.

    The transport receives ``[{"id", "text", "attributes"}]`` and returns
    ``[{"id", "scores": {attr: score}}]``. Requests are batched, each batch is
    retried once, and on a second failure the stub answers (``fallback``) or
    :class:`ScoreUnavailable` is raised when no fallback is configured.
    Structured annotations and embeddings always come from ``fallback``.
    """

    transport: Transport
    fallback: StubBackend | None = field(default_factory=StubBackend)
    batch_size: int = 16
    timeout_s: float = 0.3
    retries: int = 1
    degraded: int = 0

    def request(self, items: Sequence[ContentItem], names: Sequence[str]) -> dict[str, dict[str, float]]:
        out: dict[str, dict[str, float]] = {}
        for start in range(0, len(items), self.batch_size):
            batch = items[start : start + self.batch_size]
            payload = [{"id": it.id, "text": it.text, "attributes": list(names)} for it in batch]
            out.update(self._send(payload, batch, names))
        return out

    def _send(self, payload: list[dict], batch: Sequence[ContentItem], names: Sequence[str]) -> dict:
        last: Exception | None = None
        for _ in range(self.retries + 1):
            t0 = time.monotonic()
            try:
                resp = self.transport(payload)
                if time.monotonic() - t0 > self.timeout_s * len(payload):
                    raise TimeoutError("scorer exceeded per-item timeout")
                return {r["id"]: {a: min(1.0, max(0.0, float(s))) for a, s in r["scores"].items()} for r in resp}
            except Exception as exc:  # transport errors are opaque by contract
                last = exc
        if self.fallback is None:
            raise ScoreUnavailable(str(last)) from last
        self.degraded += len(batch)
        log.warning("external scorer failed (%s); using stub scores for %d items", last, len(batch))
        return {it.id: self.fallback.attributes(it, names) for it in batch}

    def attributes(self, item: ContentItem, names: Sequence[str] = ATTRIBUTES) -> dict[str, float]:
        if not normalize_text(item.text):
            return {a: 0.0 for a in names}
        got = self.request([item], names).get(item.id, {})
        missing = [a for a in names if a not in got]
        if missing:
            raise ScoreUnavailable(f"provider omitted {missing} for {item.id}")
        return got

    def civic(self, item: ContentItem) -> float:
        if not normalize_text(item.text):
            return 0.0
        return self.request([item], ["civic"])[item.id]["civic"]

    def _fb(self) -> StubBackend:
        if self.fallback is None:
            raise ScoreUnavailable("no local backend for structured annotations")
        return self.fallback

    def bridging(self, item: ContentItem) -> TwoPartyBridging:
        return self._fb().bridging(item)

    def cs_annotation(self, item: ContentItem) -> CsAnnotation:
        return self._fb().cs_annotation(item)

    def embed(self, text: str) -> np.ndarray:
        return self._fb().embed(text)


class ScoreCache:
    """Memoizes backend calls by item id; safe because ids are immutable content.

    Each table is dropped wholesale once it holds ``max_entries`` items.
    """

    def __init__(self, backend: ScorerBackend, max_entries: int = 200_000):
        self.backend = backend
        self.max_entries = max_entries
        self._attrs: dict[str, dict[str, float]] = {}
        self._civic: dict[str, float] = {}
        self._embed: dict[str, np.ndarray] = {}

    def attributes(self, item: ContentItem) -> dict[str, float]:
        got = self._attrs.get(item.id)
        if got is None:
            if len(self._attrs) >= self.max_entries:
                self._attrs = {}
            got = self._attrs[item.id] = self.backend.attributes(item)
        return got

    def civic(self, item: ContentItem) -> float:
        got = self._civic.get(item.id)
        if got is None:
            if len(self._civic) >= self.max_entries:
                self._civic = {}
            got = self._civic[item.id] = self.backend.civic(item)
        return got

    def embed(self, item: ContentItem) -> np.ndarray:
        got = self._embed.get(item.id)
        if got is None:
            if len(self._embed) >= self.max_entries:
                self._embed = {}
            got = self._embed[item.id] = self.backend.embed(item.text)
        return got

