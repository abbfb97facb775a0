"""Run-trace recording and replay.

The trace is JSON Lines, one line per provider call: chat lines carry the
full ChatExchange, embedding lines carry the batch inputs and vectors under
a ``kind`` discriminator. A recorded trace can stand in for the network:
the replay backends answer calls by prompt fingerprint and raise
``TraceMiss`` for anything the trace does not cover.
"""

from __future__ import annotations

import threading
from pathlib import Path
from typing import Sequence

from ..errors import TraceMiss, TransportError
from .._serde import canonical_json, fingerprint, read_jsonl
from .backends import BackendReply
from .models import ChatExchange, ModelSpec


class TraceWriter:
    """Append-only, whole-line-atomic trace sink shared across threads."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._fh = open(self.path, "w", encoding="utf-8")
        self._lines = 0

    def append(self, record: dict) -> None:
        line = canonical_json(record)
        with self._lock:
            self._fh.write(line)
            self._fh.write("\n")
            self._fh.flush()
            self._lines += 1

    @property
    def line_count(self) -> int:
        with self._lock:
            return self._lines

    def close(self) -> None:
        with self._lock:
            if not self._fh.closed:
                self._fh.close()

    def __enter__(self) -> "TraceWriter":
        return self

    def __exit__(self, *exc_info: object) -> None:
        self.close()


def embed_record(model_id: str, texts: Sequence[str], vectors: Sequence[Sequence[float]]) -> dict:
    return {
        "kind": "embed",
        "model_id": model_id,
        "texts": list(texts),
        "vectors": [list(v) for v in vectors],
    }


def _embed_key(model_id: str, texts: Sequence[str]) -> str:
    return fingerprint(model_id + "\x1f" + "\x1f".join(texts))


class RecordedTrace:
    """Indexed view of a trace file, keyed by prompt/batch fingerprints."""

    def __init__(self, chat: dict[tuple[str, str], dict], embed: dict[str, list[list[float]]], lines: int):
        self.chat = chat
        self.embed = embed
        self.lines = lines

    @classmethod
    def load(cls, path: str | Path) -> "RecordedTrace":
        chat: dict[tuple[str, str], dict] = {}
        embed: dict[str, list[list[float]]] = {}
        lines = 0
        for rec in read_jsonl(path):
            lines += 1
            if rec.get("kind") == "embed":
                embed[_embed_key(rec["model_id"], rec["texts"])] = rec["vectors"]
            else:
                chat[(rec["model_id"], fingerprint(rec["prompt_text"]))] = rec
        return cls(chat, embed, lines)


class ReplayChatBackend:
    """Answers chat calls from a recorded trace instead of the network."""

    def __init__(self, trace: RecordedTrace):
        self.trace = trace

    def complete(self, model: ModelSpec, prompt: str, seed: int | None) -> BackendReply:
        fp = fingerprint(prompt)
        rec = self.trace.chat.get((model.model_id, fp))
        if rec is None:
            raise TraceMiss(
                f"no recorded chat call for model {model.model_id!r} with prompt fingerprint {fp}",
                fingerprint=fp,
            )
        exchange = ChatExchange.from_json_dict(rec)
        if exchange.error is not None:
            # reproduce the original failure so degraded paths replay identically
            raise TransportError(exchange.error)
        return BackendReply(
            text=exchange.response_text,
            input_tokens=exchange.input_tokens,
            output_tokens=exchange.output_tokens,
        )


class ReplayEmbeddingBackend:
    def __init__(self, trace: RecordedTrace):
        self.trace = trace

    def embed_batch(self, model: ModelSpec, texts: Sequence[str]) -> list[list[float]]:
        key = _embed_key(model.model_id, texts)
        vectors = self.trace.embed.get(key)
        if vectors is None:
            raise TraceMiss(
                f"no recorded embedding call for model {model.model_id!r} with batch fingerprint {key}",
                fingerprint=key,
            )
        return [list(v) for v in vectors]
