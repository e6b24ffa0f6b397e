"""Chat-completion gateway: transports, retries, fixtures, cost accounting.

Speaks the OpenAI-compatible chat-completions shape (POST to
`{base_url}/v1/chat/completions` with a bearer token from the environment).
A request can be served live, recorded to an append-only JSONL fixture
store, or replayed from fixtures by content hash, which lets every pipeline
run offline and bit-deterministically.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from concurrent.futures import FIRST_COMPLETED, Future, ThreadPoolExecutor, wait
from dataclasses import dataclass, replace
from fractions import Fraction
from pathlib import Path
from typing import Callable, Iterable, Mapping, Protocol, Sequence, TypeVar

from syncse.pools import ChatTranscript

DEFAULT_MODEL = "gpt-3.5-turbo-0301"
DEFAULT_BASE_URL = "https://api.openai.com"
API_KEY_ENV = "SYNCSE_API_KEY"
BASE_URL_ENV = "SYNCSE_BASE_URL"
CHAT_COMPLETIONS_PATH = "/v1/chat/completions"

STAGES = ("unlabeled", "positive", "hard_negative")


class GatewayError(Exception):
    """Base class for gateway failures."""


class TransportError(GatewayError):
    def __init__(self, message: str, *, retryable: bool = False, status: int | None = None):
        super().__init__(message)
        self.retryable = retryable
        self.status = status


class MalformedResponseError(GatewayError):
    """Response body does not carry a usable completion."""


class ReplayMissError(GatewayError):
    """Replay mode has no fixture for the requested key."""


# ---------------------------------------------------------------------------
# Configs, usage, prices
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GenerationConfig:
    model: str = DEFAULT_MODEL
    temperature: float = 1.0
    top_p: float = 1.0
    presence_penalty: float = 0.0
    frequency_penalty: float = 0.0
    max_tokens: int | None = None

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if not 0 < self.top_p <= 1:
            raise ValueError("top_p must be in (0, 1]")
        if self.max_tokens is not None and self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")

    def as_dict(self) -> dict:
        d = {
            "model": self.model,
            "temperature": self.temperature,
            "top_p": self.top_p,
            "presence_penalty": self.presence_penalty,
            "frequency_penalty": self.frequency_penalty,
        }
        if self.max_tokens is not None:
            d["max_tokens"] = self.max_tokens
        return d


# Per-stage sampling defaults used throughout the pipeline.
UNLABELED_CONFIG = GenerationConfig(
    temperature=1.3, top_p=1.0, presence_penalty=0.3, frequency_penalty=0.3
)
POSITIVE_CONFIG = GenerationConfig(temperature=1.0, top_p=0.9)
HARD_NEGATIVE_CONFIG = GenerationConfig(temperature=1.0, top_p=0.95)

_STAGE_CONFIGS = {
    "unlabeled": UNLABELED_CONFIG,
    "positive": POSITIVE_CONFIG,
    "hard_negative": HARD_NEGATIVE_CONFIG,
}


def stage_config(stage: str, model: str | None = None, **overrides) -> GenerationConfig:
    """Default GenerationConfig for a pipeline stage, optionally overridden."""
    if stage not in _STAGE_CONFIGS:
        raise ValueError(f"unknown stage '{stage}', expected one of {STAGES}")
    config = _STAGE_CONFIGS[stage]
    if model is not None:
        overrides = {"model": model, **overrides}
    return replace(config, **overrides) if overrides else config


@dataclass(frozen=True)
class Usage:
    prompt_tokens: int = 0
    completion_tokens: int = 0

    def __post_init__(self):
        if self.prompt_tokens < 0 or self.completion_tokens < 0:
            raise ValueError("token counts must be >= 0")

    def __add__(self, other: "Usage") -> "Usage":
        return Usage(
            self.prompt_tokens + other.prompt_tokens,
            self.completion_tokens + other.completion_tokens,
        )


@dataclass(frozen=True)
class PriceTable:
    input_per_1k: float = 0.0015
    output_per_1k: float = 0.002

    def __post_init__(self):
        if self.input_per_1k < 0 or self.output_per_1k < 0:
            raise ValueError("prices must be >= 0")


def exact_cost(usage: Usage, prices: PriceTable) -> Fraction:
    """Dollar cost as an exact rational."""
    return Fraction(usage.prompt_tokens, 1000) * Fraction(str(prices.input_per_1k)) + Fraction(
        usage.completion_tokens, 1000
    ) * Fraction(str(prices.output_per_1k))


def estimate_cost(usage: Usage, prices: PriceTable) -> float:
    """Dollar cost, exact rational arithmetic rounded to 6 decimals for display."""
    return float(round(exact_cost(usage, prices), 6))


# ---------------------------------------------------------------------------
# Cost ledger
# ---------------------------------------------------------------------------


class CostLedger:
    """Per-stage token/cost accumulators plus the raw event log.

    Thread safe; totals always equal the fold of the recorded entries.
    """

    def __init__(self, prices: PriceTable | None = None):
        self.prices = prices or PriceTable()
        self.entries: list[tuple[str, Usage]] = []
        self.failures: dict[str, int] = {}
        self._lock = threading.Lock()

    def record(self, stage: str, usage: Usage):
        if stage not in STAGES:
            raise ValueError(f"unknown stage '{stage}'")
        with self._lock:
            self.entries.append((stage, usage))

    def record_failure(self, stage: str):
        with self._lock:
            self.failures[stage] = self.failures.get(stage, 0) + 1

    def stage_usage(self, stage: str) -> Usage:
        total = Usage()
        for s, usage in self.entries:
            if s == stage:
                total = total + usage
        return total

    def stage_cost(self, stage: str) -> Fraction:
        return sum(
            (exact_cost(usage, self.prices) for s, usage in self.entries if s == stage),
            Fraction(0),
        )

    def total_cost(self) -> Fraction:
        return sum((exact_cost(usage, self.prices) for _, usage in self.entries), Fraction(0))

    @property
    def request_count(self) -> int:
        return len(self.entries)

    @property
    def failure_count(self) -> int:
        return sum(self.failures.values())

    def summary(self) -> dict:
        stages = {}
        for stage in STAGES:
            usage = self.stage_usage(stage)
            requests = sum(1 for s, _ in self.entries if s == stage)
            if requests == 0 and not self.failures.get(stage):
                continue
            stages[stage] = {
                "requests": requests,
                "prompt_tokens": usage.prompt_tokens,
                "completion_tokens": usage.completion_tokens,
                "cost": float(round(self.stage_cost(stage), 6)),
            }
        return {
            "prices": {
                "input_per_1k": self.prices.input_per_1k,
                "output_per_1k": self.prices.output_per_1k,
            },
            "stages": stages,
            "requests": self.request_count,
            "failures": self.failure_count,
            "total_cost": float(round(self.total_cost(), 6)),
        }

    def merge(self, other: "CostLedger"):
        with self._lock:
            self.entries.extend(other.entries)
            for stage, count in other.failures.items():
                self.failures[stage] = self.failures.get(stage, 0) + count

    def save(self, path: str | Path):
        payload = self.summary()
        payload["entries"] = [
            {"stage": s, "prompt_tokens": u.prompt_tokens, "completion_tokens": u.completion_tokens}
            for s, u in self.entries
        ]
        Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "CostLedger":
        payload = json.loads(Path(path).read_text())
        prices = PriceTable(**payload.get("prices", {}))
        ledger = cls(prices)
        for entry in payload.get("entries", []):
            ledger.record(entry["stage"], Usage(entry["prompt_tokens"], entry["completion_tokens"]))
        for stage, count in payload.get("failures_by_stage", {}).items():
            ledger.failures[stage] = count
        return ledger


# ---------------------------------------------------------------------------
# Canonical request identity
# ---------------------------------------------------------------------------


def build_payload(transcript: ChatTranscript, config: GenerationConfig) -> dict:
    payload = config.as_dict()
    payload["messages"] = transcript.to_wire()
    return payload


def payload_key(payload: Mapping) -> str:
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=True)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def canonical_request_key(transcript: ChatTranscript, config: GenerationConfig) -> str:
    """Stable content hash over (sampling config, messages in order)."""
    return payload_key(build_payload(transcript, config))


# ---------------------------------------------------------------------------
# Transports
# ---------------------------------------------------------------------------


class Transport(Protocol):
    def send(self, payload: dict) -> dict: ...


class HttpTransport:
    """Live OpenAI-compatible endpoint; auth and base URL come from the env."""

    def __init__(
        self,
        base_url: str | None = None,
        api_key: str | None = None,
        timeout: float = 60.0,
    ):
        self.base_url = (base_url or os.environ.get(BASE_URL_ENV) or DEFAULT_BASE_URL).rstrip("/")
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV, "")
        self.timeout = timeout

    def send(self, payload: dict) -> dict:
        import requests

        url = self.base_url + CHAT_COMPLETIONS_PATH
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            response = requests.post(url, json=payload, headers=headers, timeout=self.timeout)
        except requests.RequestException as exc:
            raise TransportError(f"request to {url} failed: {exc}", retryable=True) from exc
        if response.status_code == 429 or response.status_code >= 500:
            raise TransportError(
                f"{url} returned {response.status_code}",
                retryable=True,
                status=response.status_code,
            )
        if response.status_code != 200:
            raise TransportError(
                f"{url} returned {response.status_code}: {response.text[:200]}",
                status=response.status_code,
            )
        try:
            return response.json()
        except ValueError as exc:
            raise MalformedResponseError(f"{url} returned non-JSON body") from exc


def load_fixtures(paths: Iterable[str | Path]) -> dict[str, dict]:
    """Load fixture JSONL files into a key -> response map (last entry wins)."""
    store: dict[str, dict] = {}
    for path in paths:
        path = Path(path)
        with path.open(encoding="utf-8") as handle:
            for lineno, line in enumerate(handle, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    entry = json.loads(line)
                    store[entry["key"]] = entry["response"]
                except (ValueError, KeyError) as exc:
                    raise GatewayError(f"{path}:{lineno}: bad fixture entry: {exc}") from exc
    return store


class ReplayTransport:
    """Serves responses from recorded fixtures; misses are hard errors."""

    def __init__(self, fixture_paths: Sequence[str | Path]):
        self.store = load_fixtures(fixture_paths)

    def send(self, payload: dict) -> dict:
        key = payload_key(payload)
        try:
            return self.store[key]
        except KeyError:
            raise ReplayMissError(f"no fixture recorded for request key {key}") from None


# ---------------------------------------------------------------------------
# Gateway
# ---------------------------------------------------------------------------


def backoff_delays(max_attempts: int, base: float = 1.0, cap: float = 32.0) -> list[float]:
    """Pre-jitter retry delays: exponential from `base`, capped. Non-decreasing."""
    return [min(base * (2**i), cap) for i in range(max_attempts - 1)]


@dataclass(frozen=True)
class CompletionRequest:
    transcript: ChatTranscript
    config: GenerationConfig
    stage: str | None = None


class ChatGateway:
    """Completes chat transcripts with retries, recording, and cost accounting."""

    def __init__(
        self,
        transport: Transport,
        *,
        ledger: CostLedger | None = None,
        record_path: str | Path | None = None,
        max_attempts: int = 5,
        backoff_base: float = 1.0,
        backoff_cap: float = 32.0,
        sleep: Callable[[float], None] = time.sleep,
        jitter: Callable[[], float] | None = None,
    ):
        self.transport = transport
        self.ledger = ledger
        self.record_path = Path(record_path) if record_path else None
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self.backoff_cap = backoff_cap
        self._sleep = sleep
        # Full jitter: each delay is scaled by a uniform draw in [0, 1).
        import random as _random

        self._jitter = jitter or _random.random
        self._record_lock = threading.Lock()

    def _record(self, key: str, payload: dict, body: dict, usage: Usage):
        entry = {
            "key": key,
            "request": payload,
            "response": body,
            "usage": {
                "prompt_tokens": usage.prompt_tokens,
                "completion_tokens": usage.completion_tokens,
            },
        }
        line = json.dumps(entry, sort_keys=True, separators=(",", ":"), ensure_ascii=True)
        with self._record_lock:
            self.record_path.parent.mkdir(parents=True, exist_ok=True)
            with self.record_path.open("a", encoding="utf-8") as handle:
                handle.write(line + "\n")

    def complete(
        self,
        transcript: ChatTranscript,
        config: GenerationConfig,
        stage: str | None = None,
    ) -> tuple[str, Usage]:
        """Return (assistant text of the first choice, reported usage)."""
        payload = build_payload(transcript, config)
        key = payload_key(payload)
        delays = backoff_delays(self.max_attempts, self.backoff_base, self.backoff_cap)
        attempt = 0
        while True:
            try:
                body = self.transport.send(payload)
                break
            except TransportError as exc:
                if not exc.retryable or attempt >= len(delays):
                    if self.ledger is not None and stage is not None:
                        self.ledger.record_failure(stage)
                    if exc.retryable:
                        raise TransportError(
                            f"gave up after {self.max_attempts} attempts: {exc}",
                            status=exc.status,
                        ) from exc
                    raise
                self._sleep(delays[attempt] * self._jitter())
                attempt += 1
            except GatewayError:
                if self.ledger is not None and stage is not None:
                    self.ledger.record_failure(stage)
                raise
        text, usage = parse_completion(body)
        if self.record_path is not None:
            self._record(key, payload, body, usage)
        if self.ledger is not None and stage is not None:
            self.ledger.record(stage, usage)
        return text, usage

    def complete_many(
        self,
        requests: Sequence[CompletionRequest],
        max_in_flight: int = 1,
        rate: float | None = None,
    ) -> list[tuple[str, Usage]]:
        return throttled_map(
            lambda req: self.complete(req.transcript, req.config, req.stage),
            requests,
            max_in_flight=max_in_flight,
            rate=rate,
        )


def parse_completion(body: Mapping) -> tuple[str, Usage]:
    try:
        text = body["choices"][0]["message"]["content"]
        usage_raw = body["usage"]
        usage = Usage(int(usage_raw["prompt_tokens"]), int(usage_raw["completion_tokens"]))
    except (KeyError, IndexError, TypeError, ValueError) as exc:
        raise MalformedResponseError(f"response body missing completion fields: {exc}") from exc
    if not isinstance(text, str):
        raise MalformedResponseError("completion content is not a string")
    return text, usage


# ---------------------------------------------------------------------------
# Throttled fan-out
# ---------------------------------------------------------------------------


class RateLimiter:
    """Spaces call starts so the long-run rate stays at or below `rate`/second."""

    def __init__(self, rate: float, clock=time.monotonic, sleep=time.sleep):
        if rate <= 0:
            raise ValueError("rate must be positive")
        self.interval = 1.0 / rate
        self._clock = clock
        self._sleep = sleep
        self._next = 0.0
        self._lock = threading.Lock()

    def wait(self):
        with self._lock:
            now = self._clock()
            start = max(now, self._next)
            self._next = start + self.interval
        delay = start - now
        if delay > 0:
            self._sleep(delay)


T = TypeVar("T")
R = TypeVar("R")


def throttled_map(
    fn: Callable[[T], R],
    items: Sequence[T],
    *,
    max_in_flight: int = 1,
    rate: float | None = None,
) -> list[R]:
    """Apply fn to items with bounded concurrency; results in input order.

    At most `max_in_flight` calls are outstanding at any instant.  On the
    first failure no new work is submitted; in-flight calls drain, then the
    failed item with the smallest input index has its error re-raised.
    """
    if max_in_flight < 1:
        raise ValueError("max_in_flight must be >= 1")
    items = list(items)
    results: list = [None] * len(items)
    errors: dict[int, BaseException] = {}
    limiter = RateLimiter(rate) if rate is not None else None

    def call(item):
        if limiter is not None:
            limiter.wait()
        return fn(item)

    with ThreadPoolExecutor(max_workers=max_in_flight) as executor:
        pending: dict[Future, int] = {}
        iterator = enumerate(items)
        exhausted = False
        failed = False
        while True:
            while not exhausted and not failed and len(pending) < max_in_flight:
                try:
                    i, item = next(iterator)
                except StopIteration:
                    exhausted = True
                    break
                pending[executor.submit(call, item)] = i
            if not pending:
                break
            done, _ = wait(pending, return_when=FIRST_COMPLETED)
            for future in done:
                i = pending.pop(future)
                exc = future.exception()
                if exc is not None:
                    errors[i] = exc
                    failed = True
                else:
                    results[i] = future.result()
    if errors:
        raise errors[min(errors)]
    return results


# ---------------------------------------------------------------------------
# Construction helper
# ---------------------------------------------------------------------------


def make_gateway(
    backend: str,
    *,
    base_url: str | None = None,
    fixtures: Sequence[str | Path] | None = None,
    record_path: str | Path | None = None,
    ledger: CostLedger | None = None,
    **gateway_kwargs,
) -> ChatGateway:
    """Build a gateway for backend 'live', 'record', or 'replay'."""
    if backend == "replay":
        if not fixtures:
            raise ValueError("backend=replay requires at least one fixture file")
        transport: Transport = ReplayTransport(fixtures)
        record_path = None
    elif backend in ("live", "record"):
        transport = HttpTransport(base_url=base_url)
        if backend == "live":
            record_path = None
        elif record_path is None:
            raise ValueError("backend=record requires a record path")
    else:
        raise ValueError(f"unknown backend '{backend}' (expected live, record, or replay)")
    return ChatGateway(transport, ledger=ledger, record_path=record_path, **gateway_kwargs)
