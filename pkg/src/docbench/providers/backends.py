"""Chat and embedding backends.

``MockChatBackend`` and ``HashEmbeddingBackend`` make the whole pipeline
runnable offline: responses are pure functions of (model_id, seed, prompt),
so repeated runs are byte-identical. The HTTP backends speak the de-facto
completion-API JSON shape.
"""

from __future__ import annotations

import hashlib
import json
import random
import re
from pathlib import Path
from typing import Protocol, Sequence

import requests

from ..errors import ProviderRefusal, TransportError
from .._serde import fingerprint
from .models import ModelSpec, Role, whitespace_tokens


class BackendReply:
    __slots__ = ("text", "input_tokens", "output_tokens")

    def __init__(self, text: str, input_tokens: int | None = None, output_tokens: int | None = None):
        self.text = text
        self.input_tokens = input_tokens
        self.output_tokens = output_tokens


class ChatBackend(Protocol):
    def complete(self, model: ModelSpec, prompt: str, seed: int | None) -> BackendReply: ...


class EmbeddingBackend(Protocol):
    def embed_batch(self, model: ModelSpec, texts: Sequence[str]) -> list[list[float]]: ...


def _seeded_rng(*parts: object) -> random.Random:
    digest = hashlib.sha256(":".join(str(p) for p in parts).encode("utf-8")).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


def _extract_block(prompt: str, tag: str) -> str:
    m = re.search(rf"<{tag}>\n?(.*?)\n?</{tag}>", prompt, flags=re.DOTALL)
    return m.group(1) if m else ""


_QUESTION_TEMPLATES = (
    "What does the text say about {topic}?",
    "According to the passage, what is stated regarding {topic}?",
    "Which details does the text give about {topic}?",
    "How does the passage describe {topic}?",
    "What can be concluded from the text about {topic}?",
)

_JUNK_WORDS = ("zyxq", "vrblat", "qoof", "xkcdy", "wubzil", "jfqr")


class MockChatBackend:
    """Deterministic offline chat backend.

    A script file can pin exact responses by ``role:prompt-fingerprint``;
    anything unscripted falls through to a seeded template generator that
    inspects the prompt to decide what kind of reply is expected (summary,
    QA payload, judge verdict, plain answer).
    """

    def __init__(self, seed: int = 0, script: dict[str, str] | None = None):
        self.seed = seed
        self.script = dict(script or {})

    @classmethod
    def with_script_file(cls, path: str | Path, seed: int = 0) -> "MockChatBackend":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(seed=seed, script=data)

    @staticmethod
    def script_key(role: Role, prompt: str) -> str:
        return f"{role.value}:{fingerprint(prompt)}"

    def complete(self, model: ModelSpec, prompt: str, seed: int | None) -> BackendReply:
        key = self.script_key(model.role, prompt)
        if key in self.script:
            text = self.script[key]
        else:
            text = self._generate(model, prompt, self.seed if seed is None else seed)
        return BackendReply(text=text)

    def _generate(self, model: ModelSpec, prompt: str, seed: int) -> str:
        rng = _seeded_rng(model.model_id, seed, prompt)
        if "<final_summary>" in prompt:
            return self._summary(prompt, rng)
        if "Return a JSON array" in prompt:
            return self._qa_payload(prompt, rng, mcq='"choices"' in prompt)
        if "<verdict>" in prompt:
            value = round(rng.uniform(-1.0, 1.0), 2)
            return f"<analysis>Compared both answers against the source.</analysis>\n<verdict>{value}</verdict>"
        if "Respond with the letter" in prompt:
            return f"The answer is {rng.choice('ABCD')}."
        return self._answer(prompt, rng)

    def _summary(self, prompt: str, rng: random.Random) -> str:
        doc = _extract_block(prompt, "document")
        words = doc.split()
        lead = " ".join(words[: min(60, len(words))])
        summary = f"The document discusses the following material: {lead}"
        return (
            "<scratchpad>Scanned the document for its main subject and key facts.</scratchpad>\n"
            f"<final_summary>{summary}</final_summary>"
        )

    def _answer(self, prompt: str, rng: random.Random) -> str:
        source = _extract_block(prompt, "source_text")
        question = _extract_block(prompt, "question")
        span = self._span(source or question, rng)
        return f"Based on the source text, the answer is: {span}."

    def _span(self, text: str, rng: random.Random, lo: int = 5, hi: int = 12) -> str:
        words = text.split()
        if len(words) <= lo:
            return " ".join(words) if words else "the text"
        length = rng.randint(lo, min(hi, len(words)))
        start = rng.randrange(0, len(words) - length + 1)
        return " ".join(words[start : start + length])

    def _anchored_span(self, text: str) -> str:
        # anchor chosen from the chunk text alone, so every generator model
        # lands on the same span and dedup has real duplicates to find
        rng = _seeded_rng("anchor", text)
        return self._span(text, rng)

    def _corrupt(self, span: str, rng: random.Random) -> str:
        words = span.split()
        for i in range(0, len(words), 2):
            words[i] = rng.choice(_JUNK_WORDS)
        return " ".join(words)

    def _qa_payload(self, prompt: str, rng: random.Random, mcq: bool) -> str:
        chunk = _extract_block(prompt, "text_chunks") or _extract_block(prompt, "text_chunk")
        items = []
        for _ in range(rng.randint(2, 3)):
            anchored = rng.random() < 0.35
            span = self._anchored_span(chunk) if anchored else self._span(chunk, rng)
            topic = " ".join(span.split()[:4])
            if anchored:
                question = f"What does the text say about {topic}?"
            else:
                question = rng.choice(_QUESTION_TEMPLATES).format(topic=topic)
            citation = span
            roll = rng.random()
            if roll < 0.10:
                citations: list[str] = []
            elif roll < 0.30:
                citations = [self._corrupt(span, rng)]
            else:
                citations = [citation]
            item: dict = {
                "question": question,
                "answer": f"The text states: {span}.",
                "citations": citations,
                "difficulty": rng.choice(("basic", "advanced")),
                "kind": rng.choice(("factual", "multi-hop", "numeric")),
            }
            if mcq:
                gold = span if len(span) < 80 else " ".join(span.split()[:8])
                distractors = [self._corrupt(gold, rng) for _ in range(3)]
                gold_pos = rng.randrange(4)
                choices = distractors[:gold_pos] + [gold] + distractors[gold_pos:]
                item["choices"] = choices
                item["gold"] = "ABCD"[gold_pos]
            items.append(item)
        return "```json\n" + json.dumps(items, ensure_ascii=False, indent=2) + "\n```"


class HashEmbeddingBackend:
    """Offline embedder: seeded character-trigram feature hashing.

    Texts sharing most trigrams land close in cosine space, which is what
    the chunker and the deduplicator need; identical texts map to identical
    unit vectors.
    """

    def __init__(self, dim: int = 64, seed: int = 0):
        if dim < 2:
            raise ValueError("dim must be >= 2")
        self.dim = dim
        self.seed = seed

    def embed_batch(self, model: ModelSpec, texts: Sequence[str]) -> list[list[float]]:
        return [self._embed_one(t) for t in texts]

    def _embed_one(self, text: str) -> list[float]:
        normalized = " ".join(text.casefold().split())
        padded = f"  {normalized}  "
        vec = [0.0] * self.dim
        for i in range(len(padded) - 2):
            gram = padded[i : i + 3]
            digest = hashlib.sha256(f"{self.seed}:{gram}".encode("utf-8")).digest()
            bucket = int.from_bytes(digest[:4], "big") % self.dim
            sign = 1.0 if digest[4] % 2 == 0 else -1.0
            vec[bucket] += sign
        norm = sum(v * v for v in vec) ** 0.5
        if norm == 0:
            vec[0] = 1.0
            norm = 1.0
        return [v / norm for v in vec]


class HTTPChatBackend:
    """JSON-over-HTTP chat completions (de-facto completion-API shape)."""

    def __init__(self, timeout: float = 60.0, session: requests.Session | None = None):
        self.timeout = timeout
        self.session = session or requests.Session()

    def complete(self, model: ModelSpec, prompt: str, seed: int | None) -> BackendReply:
        payload = {
            "model": model.model_id,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": model.sampling.temperature,
            "top_p": model.sampling.top_p,
            "max_tokens": model.sampling.max_output_tokens,
        }
        if seed is not None:
            payload["seed"] = seed
        data = _post_json(self.session, model.endpoint, payload, self.timeout)
        try:
            text = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderRefusal(f"malformed completion payload from {model.endpoint}") from exc
        usage = data.get("usage") or {}
        return BackendReply(
            text=text,
            input_tokens=usage.get("prompt_tokens"),
            output_tokens=usage.get("completion_tokens"),
        )


class HTTPEmbeddingBackend:
    """JSON-over-HTTP embeddings endpoint."""

    def __init__(self, timeout: float = 60.0, session: requests.Session | None = None):
        self.timeout = timeout
        self.session = session or requests.Session()

    def embed_batch(self, model: ModelSpec, texts: Sequence[str]) -> list[list[float]]:
        payload = {"model": model.model_id, "input": list(texts)}
        data = _post_json(self.session, model.endpoint, payload, self.timeout)
        try:
            rows = data["data"]
            return [list(map(float, row["embedding"])) for row in rows]
        except (KeyError, TypeError, ValueError) as exc:
            raise ProviderRefusal(f"malformed embedding payload from {model.endpoint}") from exc


def _post_json(session: requests.Session, url: str, payload: dict, timeout: float) -> dict:
    try:
        resp = session.post(url, json=payload, timeout=timeout)
    except (requests.ConnectionError, requests.Timeout) as exc:
        raise TransportError(f"cannot reach {url}: {exc}") from exc
    if resp.status_code >= 500:
        raise TransportError(f"{url} returned {resp.status_code}")
    if resp.status_code >= 400:
        raise ProviderRefusal(f"{url} returned {resp.status_code}: {resp.text[:200]}")
    try:
        return resp.json()
    except ValueError as exc:
        raise ProviderRefusal(f"non-JSON response from {url}") from exc


def count_tokens(reply_tokens: int | None, text: str) -> int:
    """Prefer backend-reported counts, fall back to whitespace tokens."""
    return reply_tokens if reply_tokens is not None else whitespace_tokens(text)
