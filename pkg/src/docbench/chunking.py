"""Semantic chunking: sentences, similarity-driven boundaries, multihop sets.

Sentence splitting is deterministic and rule-based. Markdown block
boundaries (headings, list items, table rows, paragraph breaks) always
start a new sentence; inside a block, a sentence ends at terminal
punctuation (. ! ?) followed by whitespace and an uppercase letter or
digit, unless the preceding word is on the abbreviation list below.

Chunk boundaries follow the length/similarity rule: close the current
chunk after sentence i once its token length exceeds l_min and either the
similarity to the next sentence drops below tau or appending the next
sentence would push the chunk past l_max. A single sentence longer than
l_max therefore ends up in its own chunk; sentences are never split.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .errors import InsufficientChunks, ZeroVector
from .providers.models import EmbeddingVector

#: Words after which a period never ends a sentence.
ABBREVIATIONS = frozenset(
    {
        "mr", "mrs", "ms", "dr", "prof", "sr", "jr", "st", "vs", "etc",
        "fig", "eq", "no", "al", "inc", "ltd", "dept", "est", "approx",
        "e.g", "i.e", "cf", "ca", "vol", "pp",
    }
)


@dataclass(frozen=True, slots=True)
class ChunkingParams:
    l_min: int = 128
    l_max: int = 512
    tau: float = 0.6
    h_min: int = 2
    h_max: int = 5
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.l_min < 1 or self.l_max < 1:
            raise ValueError("l_min and l_max must be positive")
        if self.l_min > self.l_max:
            raise ValueError("l_min must not exceed l_max")
        if self.h_min < 1 or self.h_min > self.h_max:
            raise ValueError("need 1 <= h_min <= h_max")
        if not (-1.0 <= self.tau <= 1.0):
            raise ValueError("tau must be in [-1, 1]")


@dataclass(frozen=True, slots=True)
class Sentence:
    doc_id: str
    index: int
    text: str
    token_count: int
    embedding: EmbeddingVector | None = None

    def with_embedding(self, vector: EmbeddingVector) -> "Sentence":
        return replace(self, embedding=vector)


@dataclass(frozen=True, slots=True)
class Chunk:
    chunk_id: str
    doc_id: str
    sentence_span: tuple[int, int]  # inclusive
    text: str
    token_count: int

    def to_json_dict(self) -> dict:
        return {
            "kind": "chunk",
            "chunk_id": self.chunk_id,
            "doc_id": self.doc_id,
            "sentence_span": list(self.sentence_span),
            "text": self.text,
            "token_count": self.token_count,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "Chunk":
        return cls(
            chunk_id=data["chunk_id"],
            doc_id=data["doc_id"],
            sentence_span=(int(data["sentence_span"][0]), int(data["sentence_span"][1])),
            text=data["text"],
            token_count=int(data["token_count"]),
        )


@dataclass(frozen=True, slots=True)
class MultihopChunk:
    chunk_id: str
    doc_id: str
    member_chunk_ids: tuple[str, ...]
    text: str

    def to_json_dict(self) -> dict:
        return {
            "kind": "multihop",
            "chunk_id": self.chunk_id,
            "doc_id": self.doc_id,
            "member_chunk_ids": list(self.member_chunk_ids),
            "text": self.text,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "MultihopChunk":
        return cls(
            chunk_id=data["chunk_id"],
            doc_id=data["doc_id"],
            member_chunk_ids=tuple(data["member_chunk_ids"]),
            text=data["text"],
        )


# --- sentence splitting -------------------------------------------------------

_FENCE_RE = re.compile(r"^```")
_BLOCK_LINE_RE = re.compile(r"^(#{1,6}\s|\s*[-*+]\s|\s*\d+\.\s|\|)")
_BOUNDARY_RE = re.compile(r"[.!?]+[\"'”’)\]]*\s+(?=[A-Z0-9])")
_FINAL_WORD_RE = re.compile(r"([A-Za-z][A-Za-z.]*)$")


def _blocks(text: str) -> list[str]:
    """Markdown-aware block segmentation."""
    blocks: list[str] = []
    paragraph: list[str] = []
    fence: list[str] | None = None

    def close_paragraph() -> None:
        if paragraph:
            blocks.append(" ".join(paragraph))
            paragraph.clear()

    for line in text.split("\n"):
        stripped = line.strip()
        if fence is not None:
            fence.append(line)
            if _FENCE_RE.match(stripped):
                blocks.append("\n".join(fence))
                fence = None
            continue
        if _FENCE_RE.match(stripped):
            close_paragraph()
            fence = [line]
            continue
        if not stripped:
            close_paragraph()
            continue
        if _BLOCK_LINE_RE.match(line) or stripped.startswith("[image:"):
            close_paragraph()
            blocks.append(stripped)
            continue
        paragraph.append(stripped)
    close_paragraph()
    if fence is not None:
        blocks.append("\n".join(fence))
    return blocks


def _split_block(block: str) -> list[str]:
    if block.startswith("```"):
        return [block]
    pieces: list[str] = []
    start = 0
    for match in _BOUNDARY_RE.finditer(block):
        word = _FINAL_WORD_RE.search(block[: match.start()])
        if word is not None and word.group(1).rstrip(".").casefold() in ABBREVIATIONS:
            continue
        pieces.append(block[start : match.end()].strip())
        start = match.end()
    tail = block[start:].strip()
    if tail:
        pieces.append(tail)
    return pieces


def split_sentences(doc_text: str, doc_id: str) -> list[Sentence]:
    """Decompose a normalized document into indexed sentences."""
    sentences: list[Sentence] = []
    for block in _blocks(doc_text):
        for piece in _split_block(block):
            tokens = len(piece.split())
            if tokens == 0:
                continue
            sentences.append(
                Sentence(doc_id=doc_id, index=len(sentences), text=piece, token_count=tokens)
            )
    return sentences


# --- similarity ----------------------------------------------------------------


def cosine_similarity(a: EmbeddingVector, b: EmbeddingVector) -> float:
    if len(a.vector) != len(b.vector):
        raise ValueError(f"dimension mismatch: {len(a.vector)} vs {len(b.vector)}")
    if a.norm == 0 or b.norm == 0:
        raise ZeroVector("cosine similarity undefined for zero vectors")
    dot = sum(x * y for x, y in zip(a.vector, b.vector))
    return dot / (a.norm * b.norm)


# --- chunk construction ----------------------------------------------------------


def chunk_document(sentences: Sequence[Sentence], params: ChunkingParams) -> list[Chunk]:
    """Partition a document's sentences into chunks via the boundary rule."""
    if not sentences:
        return []
    if len(sentences) > 1 and any(s.embedding is None for s in sentences):
        raise ValueError("sentences must carry embeddings before chunking")

    doc_id = sentences[0].doc_id
    chunks: list[Chunk] = []

    def close(start: int, end: int) -> None:
        members = sentences[start : end + 1]
        text = " ".join(s.text for s in members)
        chunks.append(
            Chunk(
                chunk_id=f"{doc_id}:c{len(chunks):04d}",
                doc_id=doc_id,
                sentence_span=(start, end),
                text=text,
                token_count=sum(s.token_count for s in members),
            )
        )

    start = 0
    tokens = 0
    for i, sentence in enumerate(sentences):
        tokens += sentence.token_count
        if i == len(sentences) - 1:
            close(start, i)
            break
        if tokens > params.l_min:
            sim = cosine_similarity(sentences[i].embedding, sentences[i + 1].embedding)  # type: ignore[arg-type]
            if sim < params.tau or tokens + sentences[i + 1].token_count > params.l_max:
                close(start, i)
                start = i + 1
                tokens = 0
    return chunks


def default_multihop_count(n_chunks: int) -> int:
    return math.ceil(0.3 * n_chunks)


def make_multihop_chunks(
    chunks: Sequence[Chunk],
    params: ChunkingParams,
    count: int,
    rng: np.random.Generator | None = None,
) -> list[MultihopChunk]:
    """Sample composite chunks: k ~ U(h_min, h_max) members each, without
    replacement, members kept in document order. The hop range is capped by
    the number of available chunks."""
    if len(chunks) < params.h_min:
        raise InsufficientChunks(
            f"{len(chunks)} chunks available, need at least h_min={params.h_min}"
        )
    if count < 1:
        raise ValueError("count must be positive")
    if rng is None:
        rng = np.random.default_rng(params.rng_seed)

    doc_id = chunks[0].doc_id
    high = min(params.h_max, len(chunks))
    out: list[MultihopChunk] = []
    for i in range(count):
        k = int(rng.integers(params.h_min, high + 1))
        member_idx = sorted(int(j) for j in rng.choice(len(chunks), size=k, replace=False))
        members = [chunks[j] for j in member_idx]
        out.append(
            MultihopChunk(
                chunk_id=f"{doc_id}:m{i:04d}",
                doc_id=doc_id,
                member_chunk_ids=tuple(c.chunk_id for c in members),
                text="\n\n".join(c.text for c in members),
            )
        )
    return out
