"""Provider client: retries, in-flight limits, trace recording, cost."""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

from ..errors import DimensionMismatch, TransportError
from .backends import ChatBackend, EmbeddingBackend, count_tokens
from .models import ChatExchange, EmbeddingVector, ModelSpec, Role, whitespace_tokens
from .trace import TraceWriter, embed_record

_CHAT_ROLES = (Role.GENERATOR, Role.JUDGE, Role.TARGET)


@dataclass(frozen=True, slots=True)
class RetryPolicy:
    attempts: int = 3
    backoffs_s: tuple[float, ...] = (1.0, 4.0, 16.0)


class Clock:
    """Time source. The wall clock for live runs; ``TickClock`` for
    deterministic offline runs, where time advances one millisecond per
    provider call so traces and manifests are byte-reproducible."""

    def now_ms(self) -> int:
        return int(time.time() * 1000)

    def tick(self) -> None:
        pass


class TickClock(Clock):
    BASE_MS = 1735689600000  # fixed epoch so offline timestamps are stable

    def __init__(self) -> None:
        self._ticks = 0
        self._lock = threading.Lock()

    def now_ms(self) -> int:
        with self._lock:
            return self.BASE_MS + self._ticks

    def tick(self) -> None:
        with self._lock:
            self._ticks += 1

    @property
    def ticks(self) -> int:
        with self._lock:
            return self._ticks


def _iso_utc(epoch_ms: int) -> str:
    from datetime import datetime, timezone

    return datetime.fromtimestamp(epoch_ms / 1000.0, tz=timezone.utc).strftime(
        "%Y-%m-%dT%H:%M:%S.%f"
    )[:-3] + "Z"


@dataclass
class ProviderClient:
    """Shared gateway for all chat and embedding calls in a run.

    Thread-safe: concurrent callers are admitted up to each model's
    ``max_in_flight``; trace appends go through a single writer so lines
    never interleave mid-record.
    """

    chat_backend: ChatBackend
    embedding_backend: EmbeddingBackend
    trace: TraceWriter | None = None
    retry: RetryPolicy = field(default_factory=RetryPolicy)
    clock: Clock = field(default_factory=Clock)
    sleep: Callable[[float], None] = time.sleep
    default_seed: int | None = None
    _semaphores: dict[str, threading.Semaphore] = field(default_factory=dict)
    _sem_lock: threading.Lock = field(default_factory=threading.Lock)

    def _semaphore(self, model: ModelSpec) -> threading.Semaphore:
        with self._sem_lock:
            sem = self._semaphores.get(model.model_id)
            if sem is None:
                sem = threading.Semaphore(model.max_in_flight)
                self._semaphores[model.model_id] = sem
            return sem

    def chat(self, model: ModelSpec, prompt: str, seed: int | None = None) -> ChatExchange:
        """One chat completion with retry on transient transport failures.

        Raises ``TransportError`` (after retries) or ``ProviderRefusal``;
        both are also recorded in the trace so callers can skip-and-log.
        """
        if model.role not in _CHAT_ROLES:
            raise ValueError(f"model {model.model_id!r} has role {model.role.value!r}, not a chat role")
        if not prompt:
            raise ValueError("prompt must be nonempty")
        seed = self.default_seed if seed is None else seed

        started = self.clock.now_ms()
        error: Exception | None = None
        reply = None
        with self._semaphore(model):
            for attempt in range(self.retry.attempts):
                try:
                    reply = self.chat_backend.complete(model, prompt, seed)
                    error = None
                    break
                except TransportError as exc:
                    error = exc
                    if attempt + 1 < self.retry.attempts:
                        self.sleep(self.retry.backoffs_s[min(attempt, len(self.retry.backoffs_s) - 1)])
                except Exception as exc:  # non-retryable (ProviderRefusal etc.)
                    error = exc
                    break
        self.clock.tick()
        finished = self.clock.now_ms()

        if error is not None:
            exchange = ChatExchange(
                model_id=model.model_id,
                prompt_text=prompt,
                response_text="",
                input_tokens=whitespace_tokens(prompt),
                output_tokens=0,
                latency_ms=finished - started,
                timestamp=_iso_utc(finished),
                seed=seed,
                error=f"{type(error).__name__}: {error}",
            )
            if self.trace is not None:
                self.trace.append(exchange.to_json_dict())
            raise error

        assert reply is not None
        exchange = ChatExchange(
            model_id=model.model_id,
            prompt_text=prompt,
            response_text=reply.text,
            input_tokens=count_tokens(reply.input_tokens, prompt),
            output_tokens=count_tokens(reply.output_tokens, reply.text),
            latency_ms=finished - started,
            timestamp=_iso_utc(finished),
            seed=seed,
        )
        if self.trace is not None:
            self.trace.append(exchange.to_json_dict())
        return exchange

    def embed(self, model: ModelSpec, texts: Sequence[str]) -> list[EmbeddingVector]:
        """Embed a batch, order-preserving; one trace line per call."""
        if model.role is not Role.EMBEDDER:
            raise ValueError(f"model {model.model_id!r} has role {model.role.value!r}, expected embedder")
        if not texts or any(not t for t in texts):
            raise ValueError("texts must be nonempty and each text nonempty")

        with self._semaphore(model):
            vectors = self.embedding_backend.embed_batch(model, texts)
        self.clock.tick()
        if len(vectors) != len(texts):
            raise DimensionMismatch(f"backend returned {len(vectors)} vectors for {len(texts)} texts")
        dims = {len(v) for v in vectors}
        if len(dims) != 1:
            raise DimensionMismatch(f"inconsistent embedding dimensions: {sorted(dims)}")
        if self.trace is not None:
            self.trace.append(embed_record(model.model_id, texts, vectors))
        return [
            EmbeddingVector.from_values(source_id=f"{model.model_id}:{i}", values=vec)
            for i, vec in enumerate(vectors)
        ]


@dataclass(frozen=True, slots=True)
class CostReport:
    """Per-model output-token cost; unpriced models surface separately."""

    costs: dict[str, float]
    unpriced_output_tokens: dict[str, int]


def run_cost(exchanges: Sequence[ChatExchange], prices: dict[str, float]) -> CostReport:
    """cost(m) = sum of output tokens times the per-token price for m."""
    costs: dict[str, float] = {}
    unpriced: dict[str, int] = {}
    for ex in exchanges:
        if ex.model_id in prices:
            costs[ex.model_id] = costs.get(ex.model_id, 0.0) + ex.output_tokens * prices[ex.model_id]
        else:
            unpriced[ex.model_id] = unpriced.get(ex.model_id, 0) + ex.output_tokens
    return CostReport(costs=costs, unpriced_output_tokens=unpriced)
