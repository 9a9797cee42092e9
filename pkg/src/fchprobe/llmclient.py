"""Chat-completion client with a disk cache, retries and rate limiting, plus a mock backend."""
from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

from ._io import atomic_write_text
from .casegen import NO, YES, QaCase
from .evaluation import verbalize
from .knowledge import TIME_PREDICATES, Fact, FactStore, RelationCategory

log = logging.getLogger(__name__)

API_KEY_ENV = "FCHPROBE_API_KEY"
BASE_URL_ENV = "FCHPROBE_BASE_URL"
RETRY_STATUS = frozenset({429, 500, 502, 503, 504})


class LlmError(RuntimeError):
    pass


class AuthError(LlmError):
    pass


class MalformedResponseError(LlmError):
    pass


class RequestTimeout(LlmError):
    pass


@dataclass(frozen=True)
class EndpointConfig:
    base_url: Optional[str] = None
    model: str = "mock"
    api_key_env: str = API_KEY_ENV
    temperature: float = 0.0
    timeout: float = 60.0
    max_parallel: int = 4
    requests_per_minute: Optional[float] = 60.0
    max_retries: int = 3
    backoff: float = 1.0
    cache_dir: Optional[str] = None

    def __post_init__(self):
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.max_parallel < 1:
            raise ValueError("max_parallel must be at least 1")
        if self.requests_per_minute is not None and self.requests_per_minute <= 0:
            raise ValueError("requests_per_minute must be positive")
        if not 0 <= self.max_retries <= 3:
            raise ValueError("max_retries must be within [0, 3]")

    @property
    def url(self) -> str:
        base = self.base_url or os.environ.get(BASE_URL_ENV)
        if not base:
            raise LlmError(f"no base_url configured and {BASE_URL_ENV} is unset")
        return base.rstrip("/") + "/chat/completions"


# --- cache -------------------------------------------------------------------------


def cache_key(model: str, prompt: str, temperature: float) -> str:
    blob = json.dumps([model, prompt, float(temperature)], ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class CacheEntry:
    key: str
    raw_text: str
    timestamp: float


class ResponseCache:
    """Content-addressed responses under ``<root>/<model>/<key>.json``.

    Entries are written once via temp-file-and-rename; an existing entry is
    never replaced.
    """

    def __init__(self, root):
        self.root = Path(root)

    def _path(self, model: str, key: str) -> Path:
        return self.root / re.sub(r"[^\w.-]+", "_", model) / f"{key}.json"

    def get(self, model: str, key: str) -> Optional[CacheEntry]:
        path = self._path(model, key)
        try:
            rec = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            return None
        except ValueError:
            log.warning("ignoring unreadable cache entry %s", path)
            return None
        return CacheEntry(rec["key"], rec["raw_text"], rec["timestamp"])

    def put(self, model: str, entry: CacheEntry) -> None:
        path = self._path(model, entry.key)
        if path.exists():
            return
        atomic_write_text(path, json.dumps({"key": entry.key, "raw_text": entry.raw_text, "timestamp": entry.timestamp}))


# --- rate limiting ----------------------------------------------------------------------


class TokenBucket:
    """Spaces requests ``60 / rate`` seconds apart (bucket of capacity one).

    Callers reserve the next free slot under a lock and sleep outside it.
    """

    def __init__(self, per_minute: float, clock: Callable[[], float] = time.monotonic,
                 sleep: Callable[[float], None] = time.sleep):
        self.interval = 60.0 / per_minute
        self.clock = clock
        self.sleep = sleep
        self._next: Optional[float] = None
        self._lock = threading.Lock()

    def acquire(self) -> None:
        with self._lock:
            now = self.clock()
            slot = now if self._next is None else max(now, self._next)
            self._next = slot + self.interval
        if slot > now:
            self.sleep(slot - now)


# --- transport and client -----------------------------------------------------------------


def _http_post(url: str, headers: dict, payload: dict, timeout: float):
    import requests

    try:
        resp = requests.post(url, headers=headers, json=payload, timeout=timeout)
    except requests.Timeout as exc:
        raise TimeoutError(str(exc)) from exc
    return resp.status_code, resp.text


def _content(body: str) -> str:
    try:
        return json.loads(body)["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError):
        raise MalformedResponseError(f"unexpected response body: {body[:200]!r}") from None


@dataclass(frozen=True)
class BatchItem:
    index: int
    text: Optional[str] = None
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None


class ChatClient:
    """Sends prompts through ``backend`` or over HTTP.

    ``transport(url, headers, payload, timeout) -> (status, body)`` and the
    clock/sleep pair are injectable for tests. With a ``backend`` (any object
    with ``complete(prompt, case_id)``) no HTTP is attempted and no key is
    needed.
    """

    def __init__(self, cfg: EndpointConfig, transport: Optional[Callable] = None, backend=None,
                 clock: Callable[[], float] = time.monotonic, sleep: Callable[[float], None] = time.sleep):
        self.cfg = cfg
        self.transport = transport or _http_post
        self.backend = backend
        self.sleep = sleep
        self.clock = clock
        self.cache = ResponseCache(cfg.cache_dir) if cfg.cache_dir else None
        self.bucket = TokenBucket(cfg.requests_per_minute, clock, sleep) if cfg.requests_per_minute else None
        self.network_calls = 0
        self._count_lock = threading.Lock()

    def chat(self, prompt: str, case_id: Optional[str] = None) -> str:
        if self.backend is not None:
            return self.backend.complete(prompt, case_id)
        key = cache_key(self.cfg.model, prompt, self.cfg.temperature)
        if self.cache is not None:
            hit = self.cache.get(self.cfg.model, key)
            if hit is not None:
                return hit.raw_text
        text = self._request(prompt)
        if self.cache is not None:
            self.cache.put(self.cfg.model, CacheEntry(key, text, time.time()))
        return text

    def _request(self, prompt: str) -> str:
        api_key = os.environ.get(self.cfg.api_key_env)
        if not api_key:
            raise AuthError(f"environment variable {self.cfg.api_key_env} is not set")
        url = self.cfg.url
        headers = {"Authorization": f"Bearer {api_key}", "Content-Type": "application/json"}
        payload = {
            "model": self.cfg.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.cfg.temperature,
        }
        last = "no attempt made"
        timed_out = False
        for attempt in range(self.cfg.max_retries + 1):
            if attempt:
                self.sleep(self.cfg.backoff * 2 ** (attempt - 1))
            if self.bucket is not None:
                self.bucket.acquire()
            with self._count_lock:
                self.network_calls += 1
            try:
                status, body = self.transport(url, headers, payload, self.cfg.timeout)
            except TimeoutError as exc:
                last, timed_out = f"timeout: {exc}", True
                continue
            except OSError as exc:
                last, timed_out = f"connection error: {exc}", False
                continue
            if status == 200:
                return _content(body)
            if status in (401, 403):
                raise AuthError(f"HTTP {status} from {url}")
            if status in RETRY_STATUS:
                last, timed_out = f"HTTP {status}", False
                continue
            raise LlmError(f"HTTP {status} from {url}: {body[:200]}")
        if timed_out:
            raise RequestTimeout(f"gave up after {self.cfg.max_retries + 1} attempts ({last})")
        raise LlmError(f"gave up after {self.cfg.max_retries + 1} attempts ({last})")

    def chat_batch(self, prompts: Sequence[str], case_ids: Optional[Sequence[str]] = None) -> list:
        """Order-preserving results; a failing prompt yields an error item, not an exception."""
        ids = list(case_ids) if case_ids is not None else [None] * len(prompts)
        if len(ids) != len(prompts):
            raise ValueError("case_ids and prompts differ in length")

        def one(i: int) -> BatchItem:
            try:
                return BatchItem(i, text=self.chat(prompts[i], ids[i]))
            except (LlmError, OSError, ValueError) as exc:
                return BatchItem(i, error=f"{type(exc).__name__}: {exc}")

        with ThreadPoolExecutor(max_workers=self.cfg.max_parallel) as pool:
            return list(pool.map(one, range(len(prompts))))


def chat(cfg: EndpointConfig, prompt: str, **kwargs) -> str:
    return ChatClient(cfg, **kwargs).chat(prompt)


def chat_batch(cfg: EndpointConfig, prompts: Sequence[str], **kwargs) -> list:
    return ChatClient(cfg, **kwargs).chat_batch(prompts)


# --- mock backend ---------------------------------------------------------------------------

MOCK_LABELS = ("CO", "EI", "EK", "OL", "Refusal")
MOCK_WEIGHTS = (0.35, 0.25, 0.15, 0.15, 0.10)

_FIRST = ("Zorvan", "Ilsa", "Brevik", "Talon", "Maro", "Quenna", "Dovic", "Saphir")
_LAST = ("Quill", "Marrow", "Ostrand", "Vell", "Karsk", "Lindqvar", "Threnody", "Paskow")
_FAKE_RELS = ("mentor", "rival", "patron", "sponsor")


@dataclass(frozen=True)
class MockResponse:
    text: str
    intended: str  # category the response is built to land in


def _fake_entity(rng: random.Random, taken: set) -> str:
    while True:
        name = f"{rng.choice(_FIRST)} {rng.choice(_LAST)}"
        if name not in taken:
            taken.add(name)
            return name


def _category_for(fact: Fact, store: Optional[FactStore]) -> Optional[RelationCategory]:
    if fact.nm in TIME_PREDICATES or store is None:
        return None
    meta = store.relations.get(fact.nm)
    if meta is not None:
        return meta.category
    from .derivation import INVERSE_OVERRIDES, inverse_relation

    # an inverse predicate named after its source
    for src in store.relations.values():
        if inverse_relation(src)[0] == fact.nm:
            return inverse_relation(src)[1]
    if fact.nm in INVERSE_OVERRIDES:
        return INVERSE_OVERRIDES[fact.nm][1]
    return None


def synthetic_response(case: QaCase, store: Optional[FactStore] = None, seed: int = 0) -> MockResponse:
    """A deterministic reply built to land in a chosen category.

    CO restates the ground facts; EI keeps the entities but renames every
    relation; EK adds edges between fabricated entities (only when the
    edge/node counts allow it, otherwise EI); OL talks about fabricated
    entities only. Refusals are classified CO.
    """
    rng = random.Random(f"{seed}:mock:{case.id}")
    label = rng.choices(MOCK_LABELS, MOCK_WEIGHTS)[0]
    surface = store.surface if store is not None else (lambda s: s)
    facts = sorted(set(case.ground_facts))
    if label == "Refusal":
        return MockResponse("I don't know. The question is outside what I can verify.", "CO")
    if label == "CO":
        answer = case.answer
    else:
        answer = case.answer if rng.random() < 0.3 else (NO if case.answer == YES else YES)
    lines = [verbalize(f, _category_for(f, store), surface) for f in facts]
    taken = {surface(x) for f in facts for x in (f.subject, f.object)}
    if label == "EK":
        g = len(facts)
        n = len({x for f in facts for x in (f.subject, f.object)})
        k = g // 4
        # k extra edges over 2k fresh nodes: s_e = g/(g+k) >= 0.8 and s_n = n/(n+2k) < 0.8
        if k >= 1 and 8 * k > n:
            for _ in range(k):
                a, b = _fake_entity(rng, taken), _fake_entity(rng, taken)
                lines.append(f"The {rng.choice(_FAKE_RELS)} of {a} is {b}.")
        else:
            label = "EI"
    if label == "EI":
        lines = [verbalize(Fact("alleged_" + f.nm, f.subject, f.object), RelationCategory.NOUN, surface)
                 for f in facts]
    if label == "OL":
        lines = []
        for _ in range(max(1, len(facts))):
            a, b = _fake_entity(rng, taken), _fake_entity(rng, taken)
            lines.append(f"The {rng.choice(_FAKE_RELS)} of {a} is {b}.")
    body = "\n".join(f"{i}. {line}" for i, line in enumerate(lines, 1))
    return MockResponse(f"{answer}. Here is the knowledge I used.\n{body}", label)


class MockBackend:
    """Offline backend: ``<fixture_dir>/<case_id>.txt`` if present, else a synthetic reply."""

    def __init__(self, fixture_dir=None, cases: Optional[Mapping[str, QaCase]] = None,
                 store: Optional[FactStore] = None, seed: int = 0):
        self.fixture_dir = Path(fixture_dir) if fixture_dir else None
        self.cases = dict(cases or {})
        self.store = store
        self.seed = seed

    def complete(self, prompt: str, case_id: Optional[str] = None) -> str:
        if case_id and self.fixture_dir is not None:
            path = self.fixture_dir / f"{case_id}.txt"
            if path.is_file():
                return path.read_text(encoding="utf-8")
        if case_id in self.cases:
            return synthetic_response(self.cases[case_id], self.store, self.seed).text
        return "I don't know."
