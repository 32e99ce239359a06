"""Chat-completion client: HTTP transport, caching, retries, concurrency.

The wire protocol is the common JSON chat shape: POST a ``model`` +
``messages`` payload, read ``choices[0].message.content`` back, so any
compatible server works. Credentials travel only through an
environment variable, never through flags or config files. A mock
backend with the same interface supports tests and offline runs.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Iterator, Protocol

import requests

log = logging.getLogger(__name__)

DEFAULT_TEMPERATURE = 0.9
DEFAULT_K = 5
DEFAULT_MAX_NEW_TOKENS = 1024
DEFAULT_MAX_ATTEMPTS = 4
DEFAULT_CONCURRENCY = 8
DEFAULT_CREDENTIAL_ENV = "GRAPHREASON_API_KEY"
DEFAULT_TIMEOUT = 60.0


class ClientError(Exception):
    """Base for completion failures."""


class AuthError(ClientError):
    """Missing or rejected credential; never retried."""


class ProtocolError(ClientError):
    """The server replied with something that is not a completion."""


class TransientError(ClientError):
    """Retryable condition: timeout, connection drop, 429 or 5xx."""

    def __init__(self, message: str, status: int | None = None) -> None:
        super().__init__(message)
        self.status = status


class TransportExhaustedError(ClientError):
    """Every allowed attempt failed with a transient condition."""

    def __init__(self, message: str, attempts: int, last: TransientError) -> None:
        super().__init__(message)
        self.attempts = attempts
        self.last = last


class AllSamplesFailedError(ClientError):
    """sample_trajectories got zero usable completions back."""


@dataclass
class SamplingConfig:
    model_name: str
    temperature: float = DEFAULT_TEMPERATURE
    k: int = DEFAULT_K
    max_new_tokens: int = DEFAULT_MAX_NEW_TOKENS
    seed: int | None = None

    def __post_init__(self) -> None:
        if not self.model_name:
            raise ValueError("model_name must be non-empty")
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError(f"temperature out of range [0, 2]: {self.temperature}")
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.max_new_tokens < 1:
            raise ValueError(f"max_new_tokens must be >= 1, got {self.max_new_tokens}")


@dataclass
class CompletionRequest:
    system_prompt: str
    user_prompt: str
    config: SamplingConfig
    # Distinguishes sibling samples of one question in the cache and in
    # scripted mocks; not part of the wire payload.
    sample_index: int | None = None

    def __post_init__(self) -> None:
        if not self.user_prompt:
            raise ValueError("user_prompt must be non-empty")


@dataclass
class CompletionResult:
    text: str
    cached: bool
    attempt_count: int
    latency: float


@dataclass
class TrajectorySamples:
    """Index-aligned sampling outcome: texts[i] is None where errors[i] says why."""

    texts: list[str | None]
    errors: dict[int, str]

    def successful(self) -> list[tuple[int, str]]:
        return [(i, t) for i, t in enumerate(self.texts) if t is not None]


def cache_key(request: CompletionRequest) -> str:
    """Content hash identifying a completion request."""
    payload = {
        "model": request.config.model_name,
        "system": request.system_prompt,
        "user": request.user_prompt,
        "temperature": request.config.temperature,
        "seed": request.config.seed,
        "max_new_tokens": request.config.max_new_tokens,
        "sample_index": request.sample_index,
    }
    blob = json.dumps(payload, sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class ResponseCache:
    """Content-addressed on-disk store of completion texts."""

    def __init__(self, root: str | Path) -> None:
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _path(self, key: str) -> Path:
        return self.root / key[:2] / f"{key}.txt"

    def get(self, key: str) -> str | None:
        path = self._path(key)
        try:
            return path.read_text(encoding="utf-8")
        except FileNotFoundError:
            return None

    def put(self, key: str, text: str) -> None:
        # Temp file + rename so a crashed writer never leaves a torn entry.
        path = self._path(key)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(f".tmp.{os.getpid()}.{threading.get_ident()}")
        tmp.write_text(text, encoding="utf-8")
        os.replace(tmp, path)


class Backend(Protocol):
    def send(self, request: CompletionRequest) -> str: ...


class HttpBackend:
    """POSTs chat payloads to one endpoint with a Bearer credential."""

    def __init__(
        self,
        endpoint: str,
        credential_env: str = DEFAULT_CREDENTIAL_ENV,
        timeout: float = DEFAULT_TIMEOUT,
        session: requests.Session | None = None,
    ) -> None:
        if not endpoint:
            raise ValueError("endpoint must be non-empty")
        self.endpoint = endpoint
        self.credential_env = credential_env
        self.timeout = timeout
        self._session = session or requests.Session()

    def payload(self, request: CompletionRequest) -> dict:
        messages = []
        if request.system_prompt:
            messages.append({"role": "system", "content": request.system_prompt})
        messages.append({"role": "user", "content": request.user_prompt})
        body = {
            "model": request.config.model_name,
            "messages": messages,
            "temperature": request.config.temperature,
            "max_tokens": request.config.max_new_tokens,
        }
        if request.config.seed is not None:
            body["seed"] = request.config.seed
        return body

    def send(self, request: CompletionRequest) -> str:
        credential = os.environ.get(self.credential_env)
        if not credential:
            # Checked before any socket is opened.
            raise AuthError(f"credential env var {self.credential_env!r} is not set")
        try:
            response = self._session.post(
                self.endpoint,
                json=self.payload(request),
                headers={"Authorization": f"Bearer {credential}"},
                timeout=self.timeout,
            )
        except requests.Timeout as err:
            raise TransientError(f"request timed out: {err}") from err
        except requests.ConnectionError as err:
            raise TransientError(f"connection failed: {err}") from err
        except requests.RequestException as err:
            raise ProtocolError(f"request failed: {err}") from err

        status = response.status_code
        if status in (401, 403):
            raise AuthError(f"credential rejected with HTTP {status}")
        if status == 429 or status >= 500:
            raise TransientError(f"retryable HTTP status {status}", status=status)
        if not 200 <= status < 300:
            raise ProtocolError(f"unexpected HTTP status {status}")
        try:
            data = response.json()
            text = data["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as err:
            raise ProtocolError(f"malformed completion body: {err}") from err
        if not isinstance(text, str):
            raise ProtocolError("completion content is not a string")
        return text


class MockBackend:
    """Scripted in-process backend for tests and offline runs.

    Reply resolution order: explicit ``responder`` callable, request-hash
    entries, substring matches against the user prompt (list values are
    picked by the request's sample_index so sibling samples differ),
    then ``default``. ``fail_first_attempts`` makes the first n sends of
    every distinct request raise, which exercises retry paths;
    ``queue_failures`` injects globally ordered failures. Thread-safe;
    tracks call and concurrency watermarks for instrumentation.
    """

    def __init__(
        self,
        replies: dict[str, str | list[str]] | None = None,
        *,
        default: str | None = None,
        responder: Callable[[CompletionRequest], str] | None = None,
        delay: float = 0.0,
    ) -> None:
        self.replies = dict(replies or {})
        self.default = default
        self.responder = responder
        self.delay = delay
        self.hash_replies: dict[str, str] = {}
        self.calls = 0
        self.max_concurrent = 0
        self._concurrent = 0
        self._lock = threading.Lock()
        self._send_counts: dict[str, int] = {}
        self._fail_queue: list[ClientError] = []
        self._fail_first_n = 0
        self._fail_factory: Callable[[], ClientError] | None = None

    @classmethod
    def from_file(cls, path: str | Path) -> "MockBackend":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        backend = cls(data.get("replies"), default=data.get("default"))
        backend.hash_replies = dict(data.get("hashes", {}))
        return backend

    def fail_first_attempts(self, n: int, factory: Callable[[], ClientError] | None = None) -> None:
        self._fail_first_n = n
        self._fail_factory = factory or (lambda: TransientError("scripted 429", status=429))

    def queue_failures(self, *errors: ClientError) -> None:
        self._fail_queue.extend(errors)

    def send(self, request: CompletionRequest) -> str:
        with self._lock:
            self.calls += 1
            self._concurrent += 1
            self.max_concurrent = max(self.max_concurrent, self._concurrent)
        try:
            if self.delay:
                time.sleep(self.delay)
            with self._lock:
                if self._fail_queue:
                    raise self._fail_queue.pop(0)
                if self._fail_factory is not None:
                    key = cache_key(request)
                    count = self._send_counts.get(key, 0) + 1
                    self._send_counts[key] = count
                    if count <= self._fail_first_n:
                        raise self._fail_factory()
            return self._resolve(request)
        finally:
            with self._lock:
                self._concurrent -= 1

    def _resolve(self, request: CompletionRequest) -> str:
        if self.responder is not None:
            return self.responder(request)
        key = cache_key(request)
        if key in self.hash_replies:
            return self.hash_replies[key]
        for fragment, value in self.replies.items():
            if fragment in request.user_prompt:
                if isinstance(value, list):
                    index = request.sample_index or 0
                    return value[index % len(value)]
                return value
        if self.default is not None:
            return self.default
        raise ProtocolError(
            f"mock backend has no reply for prompt starting {request.user_prompt[:60]!r}"
        )


@dataclass
class ClientStats:
    """Instrumentation counters; max_in_flight observes the concurrency bound."""

    requests_attempted: int = 0
    completions: int = 0
    cache_hits: int = 0
    retries: int = 0
    max_in_flight: int = 0


class ChatClient:
    """Caching, retrying, concurrency-bounded completion front-end.

    Transient failures retry with exponential backoff (base * 2**n,
    +/- jitter) up to ``max_attempts``; auth and protocol failures
    propagate immediately. A semaphore shared by every caller keeps the
    number of in-flight backend sends at or under ``concurrency``.
    """

    def __init__(
        self,
        backend: Backend,
        *,
        cache: ResponseCache | None = None,
        max_attempts: int = DEFAULT_MAX_ATTEMPTS,
        backoff_base: float = 1.0,
        backoff_jitter: float = 0.2,
        concurrency: int = DEFAULT_CONCURRENCY,
        sleep: Callable[[float], None] = time.sleep,
        rng: random.Random | None = None,
    ) -> None:
        if max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        if concurrency < 1:
            raise ValueError("concurrency must be >= 1")
        self.backend = backend
        self.cache = cache
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self.backoff_jitter = backoff_jitter
        self.concurrency = concurrency
        self.stats = ClientStats()
        self._sleep = sleep
        self._rng = rng or random.Random()
        self._semaphore = threading.Semaphore(concurrency)
        self._lock = threading.Lock()
        self._in_flight_now = 0

    @contextmanager
    def _in_flight(self) -> Iterator[None]:
        self._semaphore.acquire()
        with self._lock:
            self._in_flight_now += 1
            self.stats.max_in_flight = max(self.stats.max_in_flight, self._in_flight_now)
        try:
            yield
        finally:
            with self._lock:
                self._in_flight_now -= 1
            self._semaphore.release()

    def _backoff_delay(self, attempt: int) -> float:
        jitter = 1.0 + self._rng.uniform(-self.backoff_jitter, self.backoff_jitter)
        return self.backoff_base * (2 ** (attempt - 1)) * jitter

    def complete(self, request: CompletionRequest) -> CompletionResult:
        """One completion; served from cache when an identical request was seen."""
        start = time.monotonic()
        key = cache_key(request)
        if self.cache is not None:
            hit = self.cache.get(key)
            if hit is not None:
                with self._lock:
                    self.stats.cache_hits += 1
                    self.stats.completions += 1
                return CompletionResult(hit, cached=True, attempt_count=1,
                                        latency=time.monotonic() - start)

        attempt = 0
        while True:
            attempt += 1
            with self._lock:
                self.stats.requests_attempted += 1
            try:
                with self._in_flight():
                    text = self.backend.send(request)
                break
            except TransientError as err:
                if attempt >= self.max_attempts:
                    raise TransportExhaustedError(
                        f"gave up after {attempt} attempts: {err}", attempt, err
                    ) from err
                with self._lock:
                    self.stats.retries += 1
                delay = self._backoff_delay(attempt)
                log.warning(
                    "transient failure (%s); attempt %d/%d, retrying in %.2fs",
                    err, attempt, self.max_attempts, delay,
                )
                self._sleep(delay)

        if self.cache is not None:
            self.cache.put(key, text)
        with self._lock:
            self.stats.completions += 1
        return CompletionResult(text, cached=False, attempt_count=attempt,
                                latency=time.monotonic() - start)

    def sample_trajectories(self, question: str, config: SamplingConfig, prompt) -> TrajectorySamples:
        """k independent completions for one question, index-ordered.

        ``prompt`` is any object with fill(question=...) -> (system, user).
        When config.seed is set, sample i is sent with seed + i so
        siblings stay distinct yet reproducible. Partial failures are
        reported per index; only a fully failed round raises.
        """
        system, user = prompt.fill(question=question)
        requests_by_index = []
        for i in range(config.k):
            cfg = config if config.seed is None else replace(config, seed=config.seed + i)
            requests_by_index.append(
                CompletionRequest(system, user, cfg, sample_index=i)
            )

        texts: list[str | None] = [None] * config.k
        errors: dict[int, str] = {}
        with ThreadPoolExecutor(max_workers=config.k) as pool:
            futures = [pool.submit(self.complete, req) for req in requests_by_index]
            for i, future in enumerate(futures):
                try:
                    texts[i] = future.result().text
                except ClientError as err:
                    errors[i] = str(err)
                    log.warning("sample %d/%d failed: %s", i + 1, config.k, err)
        if all(t is None for t in texts):
            raise AllSamplesFailedError(
                f"all {config.k} samples failed: " + "; ".join(errors.values())
            )
        return TrajectorySamples(texts=texts, errors=errors)
