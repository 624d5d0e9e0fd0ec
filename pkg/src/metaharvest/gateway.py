"""Provider-agnostic chat-completion and embedding access.

``Gateway`` sits in front of a backend (an OpenAI-style HTTP endpoint or the
offline ``MockBackend``) and adds response caching, retries with exponential
backoff, and a process-wide request rate limit. Every downstream module talks
to a ``Gateway``, so the whole pipeline runs offline against the mock.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import re
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np
import requests

from .store import Store, content_key, utc_now

logger = logging.getLogger(__name__)

ENV_BASE_URL = "METAHARVEST_LLM_BASE_URL"
ENV_API_KEY = "METAHARVEST_LLM_API_KEY"
ENV_MODEL = "METAHARVEST_LLM_MODEL"
ENV_EMBED_MODEL = "METAHARVEST_EMBED_MODEL"

DEFAULT_MODEL = "gpt-4"
DEFAULT_EMBED_MODEL = "all-MiniLM-L6-v2"
MOCK_MODEL = "mock-llm"
MOCK_EMBED_MODEL = "mock-hash-embedder"
ROLES = ("system", "user")


class GatewayError(Exception):
    pass


class ConfigError(GatewayError):
    pass


class AuthError(GatewayError):
    """Credential rejected. Never retried."""


class TransientError(GatewayError):
    """Worth retrying: rate limits, 5xx, dropped connections."""


class RateLimitError(TransientError):
    pass


class ProviderResponseError(GatewayError):
    """The provider answered, but not with something we can use."""


@dataclass(frozen=True)
class ChatRequest:
    model: str
    messages: tuple[tuple[str, str], ...]
    temperature: float = 0.0
    max_tokens: int = 4096
    # routing label for mocks and logs; not part of the cache key
    task: str = ""
    # notes raised while building the prompt (e.g. truncation)
    warnings: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "messages", tuple((r, t) for r, t in self.messages))
        if not self.messages:
            raise ValueError("a chat request needs at least one message")
        for role, _ in self.messages:
            if role not in ROLES:
                raise ValueError(f"message role must be one of {ROLES}, got {role!r}")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")

    @property
    def prompt_hash(self) -> str:
        return prompt_hash(self.messages)

    def text(self, role: str = "user") -> str:
        return "\n\n".join(t for r, t in self.messages if r == role)


def prompt_hash(messages: Sequence[tuple[str, str]]) -> str:
    blob = json.dumps([list(m) for m in messages], ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class EmbeddingVector:
    values: tuple[float, ...]
    model: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if not self.values:
            raise ValueError("embedding is empty")
        if not all(math.isfinite(v) for v in self.values):
            raise ValueError("embedding has non-finite values")

    def __len__(self) -> int:
        return len(self.values)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)


# --------------------------------------------------------------------------
# backends


class Backend(Protocol):
    endpoint: str

    def chat(self, req: ChatRequest) -> str: ...

    def embed(self, text: str, model: str) -> list[float]: ...


class HTTPBackend:
    """OpenAI-compatible ``/chat/completions`` and ``/embeddings`` endpoints."""

    def __init__(self, base_url: str, api_key: str, timeout: float = 120.0, session: requests.Session | None = None):
        self.endpoint = base_url.rstrip("/")
        self.api_key = api_key
        self.timeout = timeout
        self.session = session or requests.Session()
        self.calls = 0

    def _post(self, path: str, payload: dict) -> dict:
        self.calls += 1
        url = f"{self.endpoint}/{path}"
        try:
            resp = self.session.post(
                url,
                json=payload,
                timeout=self.timeout,
                headers={"Authorization": f"Bearer {self.api_key}"},
            )
        except (requests.ConnectionError, requests.Timeout) as exc:
            raise TransientError(f"{url}: {exc}") from exc
        except requests.RequestException as exc:
            raise GatewayError(f"{url}: {exc}") from exc
        if resp.status_code in (401, 403):
            raise AuthError(f"{url}: HTTP {resp.status_code} (check {ENV_API_KEY})")
        if resp.status_code == 429:
            raise RateLimitError(f"{url}: HTTP 429")
        if resp.status_code >= 500:
            raise TransientError(f"{url}: HTTP {resp.status_code}")
        if resp.status_code >= 400:
            raise ProviderResponseError(f"{url}: HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            return resp.json()
        except ValueError as exc:
            raise ProviderResponseError(f"{url}: response is not JSON") from exc

    def chat(self, req: ChatRequest) -> str:
        body = self._post(
            "chat/completions",
            {
                "model": req.model,
                "messages": [{"role": r, "content": t} for r, t in req.messages],
                "temperature": req.temperature,
                "max_tokens": req.max_tokens,
            },
        )
        try:
            content = body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderResponseError("chat response lacks choices[0].message.content") from exc
        if not isinstance(content, str):
            raise ProviderResponseError("chat response content is not text")
        return content

    def embed(self, text: str, model: str) -> list[float]:
        body = self._post("embeddings", {"model": model, "input": text})
        try:
            values = body["data"][0]["embedding"]
            return [float(v) for v in values]
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise ProviderResponseError("embedding response lacks data[0].embedding") from exc


_TOKEN = re.compile(r"[^\W_]+")


class HashEmbedder:
    """Deterministic stand-in for a sentence embedder.

    Tokens are feature-hashed into a signed bag-of-words, so texts sharing
    vocabulary point in similar directions. A small text-seeded noise term is
    added so that two different strings never map to the same vector.
    """

    def __init__(self, dim: int = 256, noise: float = 0.25):
        self.dim = dim
        self.noise = noise

    def __call__(self, text: str) -> list[float]:
        bag = np.zeros(self.dim)
        for tok in _TOKEN.findall(text.lower()):
            h = hashlib.sha256(tok.encode("utf-8")).digest()
            idx = int.from_bytes(h[:4], "little") % self.dim
            bag[idx] += 1.0 if h[4] & 1 else -1.0
        seed = int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "little")
        jitter = np.random.default_rng(seed).standard_normal(self.dim)
        bag_norm = np.linalg.norm(bag)
        scale = self.noise * bag_norm if bag_norm > 0 else 1.0
        vec = bag + scale * jitter / np.linalg.norm(jitter)
        return (vec / np.linalg.norm(vec)).tolist()


class MockBackend:
    """Offline backend.

    Chat requests are answered from ``table`` (prompt hash -> text) first,
    then by ``responder`` if one is given. Embeddings come from ``embedder``.
    """

    endpoint = "mock://"

    def __init__(
        self,
        table: dict[str, str] | None = None,
        responder: Callable[[ChatRequest], str] | None = None,
        embedder: Callable[[str], list[float]] | None = None,
    ):
        self.table = dict(table or {})
        self.responder = responder
        self.embedder = embedder or HashEmbedder()
        self.calls = 0
        self.embed_calls = 0
        self._lock = threading.Lock()

    def chat(self, req: ChatRequest) -> str:
        with self._lock:
            self.calls += 1
        h = req.prompt_hash
        if h in self.table:
            return self.table[h]
        if self.responder is not None:
            return self.responder(req)
        raise ProviderResponseError(f"mock has no response for prompt hash {h[:12]} (task {req.task!r})")

    def embed(self, text: str, model: str) -> list[float]:
        with self._lock:
            self.embed_calls += 1
        return list(self.embedder(text))


# --------------------------------------------------------------------------
# rate limiting


class TokenBucket:
    def __init__(
        self,
        requests_per_minute: float,
        burst: int | None = None,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if requests_per_minute <= 0:
            raise ValueError("requests_per_minute must be positive")
        self.rate = requests_per_minute / 60.0
        self.capacity = float(burst if burst is not None else max(1, int(requests_per_minute // 6)))
        self.tokens = self.capacity
        self.clock = clock
        self.sleep = sleep
        self._last = clock()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = self.clock()
                self.tokens = min(self.capacity, self.tokens + (now - self._last) * self.rate)
                self._last = now
                if self.tokens >= 1:
                    self.tokens -= 1
                    return
                wait = (1 - self.tokens) / self.rate
            self.sleep(wait)


_shared_limiter: TokenBucket | None = None
_shared_lock = threading.Lock()


def shared_rate_limiter(requests_per_minute: float = 60.0) -> TokenBucket:
    """The process-wide limiter. The rate is fixed by the first caller."""
    global _shared_limiter
    with _shared_lock:
        if _shared_limiter is None:
            _shared_limiter = TokenBucket(requests_per_minute)
        return _shared_limiter


# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Completion:
    text: str
    key: str
    created_at: str
    cached: bool


@dataclass
class Gateway:
    backend: Backend
    store: Store | None = None
    model: str = DEFAULT_MODEL
    embed_model: str = DEFAULT_EMBED_MODEL
    max_retries: int = 3
    backoff: float = 1.0
    rate_limiter: TokenBucket | None = None
    sleep: Callable[[float], None] = time.sleep
    network_calls: int = 0
    cache_hits: int = 0
    _memory: dict[str, tuple[bytes, str]] = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @property
    def endpoint(self) -> str:
        return self.backend.endpoint

    def request(
        self,
        messages: Sequence[tuple[str, str]],
        *,
        task: str = "",
        temperature: float = 0.0,
        max_tokens: int = 4096,
        model: str | None = None,
        warnings: Sequence[str] = (),
    ) -> ChatRequest:
        return ChatRequest(
            model=model or self.model,
            messages=tuple(messages),
            temperature=temperature,
            max_tokens=max_tokens,
            task=task,
            warnings=tuple(warnings),
        )

    def cache_key(self, req: ChatRequest) -> str:
        return content_key("chat", self.endpoint, req.model, [list(m) for m in req.messages], req.temperature)

    def _lookup(self, key: str) -> tuple[bytes, str] | None:
        if self.store is not None:
            entry = self.store.entry(key)
            return (entry.payload, entry.created_at) if entry else None
        with self._lock:
            return self._memory.get(key)

    def _save(self, key: str, payload: bytes, kind: str) -> str:
        if self.store is not None:
            return self.store.put(key, payload, kind).created_at
        with self._lock:
            self._memory.setdefault(key, (payload, utc_now()))
            return self._memory[key][1]

    def _call(self, fn: Callable[[], object], key: str, what: str):
        attempt = 0
        while True:
            if self.rate_limiter is not None:
                self.rate_limiter.acquire()
            with self._lock:
                self.network_calls += 1
            try:
                return fn()
            except AuthError:
                logger.error("%s %s: authentication failed", what, key[:12])
                raise
            except TransientError as exc:
                if attempt >= self.max_retries:
                    logger.error("%s %s: giving up after %d retries: %s", what, key[:12], attempt, exc)
                    raise
                delay = self.backoff * (2**attempt)
                logger.warning("%s %s: %s; retrying in %.1fs", what, key[:12], exc, delay)
                self.sleep(delay)
                attempt += 1

    def complete_entry(self, req: ChatRequest) -> Completion:
        key = self.cache_key(req)
        hit = self._lookup(key)
        if hit is not None:
            with self._lock:
                self.cache_hits += 1
            logger.debug("chat %s (%s): cache hit", key[:12], req.task)
            return Completion(hit[0].decode("utf-8"), key, hit[1], True)
        logger.info("chat %s (%s) model=%s prompt=%s", key[:12], req.task, req.model, req.prompt_hash[:12])
        text = self._call(lambda: self.backend.chat(req), key, "chat")
        created_at = self._save(key, text.encode("utf-8"), "llm")
        return Completion(text, key, created_at, False)

    def complete(self, req: ChatRequest) -> str:
        return self.complete_entry(req).text

    def embed(self, text: str, model: str | None = None) -> EmbeddingVector:
        if not text or not text.strip():
            raise ValueError("cannot embed empty text")
        model = model or self.embed_model
        key = content_key("embed", self.endpoint, model, text)
        hit = self._lookup(key)
        if hit is not None:
            with self._lock:
                self.cache_hits += 1
            return EmbeddingVector(json.loads(hit[0]), model)
        values = self._call(lambda: self.backend.embed(text, model), key, "embed")
        vec = EmbeddingVector(values, model)
        self._save(key, json.dumps(list(vec.values)).encode("utf-8"), "embedding")
        return vec


def mock_gateway(
    store: Store | None = None,
    table: dict[str, str] | None = None,
    responder: Callable[[ChatRequest], str] | None = None,
    embedder: Callable[[str], list[float]] | None = None,
) -> Gateway:
    backend = MockBackend(table=table, responder=responder, embedder=embedder)
    return Gateway(backend, store=store, model=MOCK_MODEL, embed_model=MOCK_EMBED_MODEL)


def live_gateway(
    store: Store | None = None,
    *,
    base_url: str | None = None,
    api_key: str | None = None,
    model: str | None = None,
    embed_model: str | None = None,
    requests_per_minute: float = 60.0,
    env: dict[str, str] | None = None,
    manifest: dict | None = None,
) -> Gateway:
    """Gateway against a live endpoint.

    Each setting resolves as: explicit argument, then environment variable,
    then the manifest's ``llm`` block, then the built-in default.
    """
    env = os.environ if env is None else env
    manifest = manifest or {}
    base_url = base_url or env.get(ENV_BASE_URL) or manifest.get("base_url")
    api_key = api_key or env.get(ENV_API_KEY)
    if not base_url:
        raise ConfigError(f"no LLM endpoint configured: set {ENV_BASE_URL}")
    if not api_key:
        raise ConfigError(f"no LLM credential configured: set {ENV_API_KEY}")
    return Gateway(
        HTTPBackend(base_url, api_key),
        store=store,
        model=model or env.get(ENV_MODEL) or manifest.get("model") or DEFAULT_MODEL,
        embed_model=embed_model or env.get(ENV_EMBED_MODEL) or manifest.get("embed_model") or DEFAULT_EMBED_MODEL,
        rate_limiter=shared_rate_limiter(requests_per_minute),
    )
