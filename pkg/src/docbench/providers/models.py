"""Provider-facing record types: model specs, call traces, embeddings."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Sequence


class Role(str, Enum):
    GENERATOR = "generator"
    JUDGE = "judge"
    EMBEDDER = "embedder"
    TARGET = "target"


@dataclass(frozen=True, slots=True)
class SamplingParams:
    temperature: float = 0.0
    top_p: float = 1.0
    max_output_tokens: int = 2048

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if not (0 < self.top_p <= 1):
            raise ValueError("top_p must be in (0, 1]")
        if self.max_output_tokens < 1:
            raise ValueError("max_output_tokens must be positive")


@dataclass(frozen=True, slots=True)
class ModelSpec:
    """One model endpoint and the fixed sampling settings used for it."""

    model_id: str
    family: str
    role: Role
    endpoint: str = "mock://chat"
    max_in_flight: int = 4
    sampling: SamplingParams = field(default_factory=SamplingParams)
    price_per_output_token: float | None = None

    def __post_init__(self) -> None:
        if not self.model_id:
            raise ValueError("model_id must be nonempty")
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        if self.price_per_output_token is not None and self.price_per_output_token < 0:
            raise ValueError("price_per_output_token must be nonnegative")

    def with_sampling(self, **kwargs: Any) -> "ModelSpec":
        return replace(self, sampling=replace(self.sampling, **kwargs))

    def to_json_dict(self) -> dict:
        return {
            "model_id": self.model_id,
            "family": self.family,
            "role": self.role.value,
            "endpoint": self.endpoint,
            "max_in_flight": self.max_in_flight,
            "sampling": {
                "temperature": self.sampling.temperature,
                "top_p": self.sampling.top_p,
                "max_output_tokens": self.sampling.max_output_tokens,
            },
            "price_per_output_token": self.price_per_output_token,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "ModelSpec":
        sampling = data.get("sampling") or {}
        return cls(
            model_id=data["model_id"],
            family=data.get("family", ""),
            role=Role(data["role"]),
            endpoint=data.get("endpoint", "mock://chat"),
            max_in_flight=int(data.get("max_in_flight", 4)),
            sampling=SamplingParams(
                temperature=float(sampling.get("temperature", 0.0)),
                top_p=float(sampling.get("top_p", 1.0)),
                max_output_tokens=int(sampling.get("max_output_tokens", 2048)),
            ),
            price_per_output_token=data.get("price_per_output_token"),
        )


@dataclass(frozen=True, slots=True)
class ChatExchange:
    """One completed (or failed) chat call, as recorded in the run trace."""

    model_id: str
    prompt_text: str
    response_text: str
    input_tokens: int
    output_tokens: int
    latency_ms: int
    timestamp: str
    seed: int | None = None
    error: str | None = None

    def __post_init__(self) -> None:
        if self.input_tokens < 0 or self.output_tokens < 0:
            raise ValueError("token counts must be nonnegative")
        if self.latency_ms < 0:
            raise ValueError("latency_ms must be nonnegative")
        if self.error is None and self.response_text == "":
            raise ValueError("response_text required when no error recorded")
        if self.error is not None and self.response_text != "":
            raise ValueError("response_text must be empty when an error is recorded")

    def to_json_dict(self) -> dict:
        return {
            "kind": "chat",
            "model_id": self.model_id,
            "prompt_text": self.prompt_text,
            "response_text": self.response_text,
            "input_tokens": self.input_tokens,
            "output_tokens": self.output_tokens,
            "latency_ms": self.latency_ms,
            "timestamp": self.timestamp,
            "seed": self.seed,
            "error": self.error,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "ChatExchange":
        return cls(
            model_id=data["model_id"],
            prompt_text=data["prompt_text"],
            response_text=data["response_text"],
            input_tokens=int(data["input_tokens"]),
            output_tokens=int(data["output_tokens"]),
            latency_ms=int(data["latency_ms"]),
            timestamp=data["timestamp"],
            seed=data.get("seed"),
            error=data.get("error"),
        )


@dataclass(frozen=True, slots=True)
class EmbeddingVector:
    """A dense embedding tied back to the text it represents."""

    source_id: str
    vector: tuple[float, ...]
    norm: float

    def __post_init__(self) -> None:
        if not self.vector:
            raise ValueError("vector must be nonempty")
        actual = math.sqrt(sum(v * v for v in self.vector))
        if actual <= 0:
            raise ValueError("vector must have positive norm")
        if abs(actual - self.norm) > 1e-9 * max(actual, 1.0):
            raise ValueError("norm does not match vector length")

    @classmethod
    def from_values(cls, source_id: str, values: Sequence[float]) -> "EmbeddingVector":
        vec = tuple(float(v) for v in values)
        norm = math.sqrt(sum(v * v for v in vec))
        return cls(source_id=source_id, vector=vec, norm=norm)


def whitespace_tokens(text: str) -> int:
    """Fallback token count when the backend reports none."""
    return len(text.split())
