"""Uniform gateway to chat and embedding backends, with trace recording."""

from .backends import (
    BackendReply,
    ChatBackend,
    EmbeddingBackend,
    HashEmbeddingBackend,
    HTTPChatBackend,
    HTTPEmbeddingBackend,
    MockChatBackend,
)
from .client import Clock, CostReport, ProviderClient, RetryPolicy, TickClock, run_cost
from .models import ChatExchange, EmbeddingVector, ModelSpec, Role, SamplingParams, whitespace_tokens
from .trace import (
    RecordedTrace,
    ReplayChatBackend,
    ReplayEmbeddingBackend,
    TraceWriter,
    embed_record,
)

__all__ = [
    "BackendReply",
    "ChatBackend",
    "ChatExchange",
    "Clock",
    "CostReport",
    "EmbeddingBackend",
    "EmbeddingVector",
    "HashEmbeddingBackend",
    "HTTPChatBackend",
    "HTTPEmbeddingBackend",
    "MockChatBackend",
    "ModelSpec",
    "ProviderClient",
    "RecordedTrace",
    "ReplayChatBackend",
    "ReplayEmbeddingBackend",
    "RetryPolicy",
    "Role",
    "SamplingParams",
    "TickClock",
    "TraceWriter",
    "embed_record",
    "run_cost",
    "whitespace_tokens",
]
