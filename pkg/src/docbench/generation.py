"""Ensemble question generation: prompts out, structured QA candidates in.

Each (chunk, generator) pair gets one chat call. Responses are expected to
contain a JSON array of question/answer/citations objects, but models drift,
so parsing is forgiving: the first well-formed JSON array anywhere in the
response is used, malformed elements are dropped individually, and a
response with no array at all contributes nothing rather than aborting.
"""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Sequence

from .chunking import Chunk, MultihopChunk
from .errors import ProviderRefusal, TransportError
from .prompts import load_template, render
from .providers.client import ProviderClient
from .providers.models import ModelSpec
from .summarization import Summary

logger = logging.getLogger(__name__)


class QuestionMode(str, Enum):
    OPEN_ENDED = "open_ended"
    MULTIPLE_CHOICE = "multiple_choice"


@dataclass(frozen=True, slots=True)
class GenerationConfig:
    generator_model_ids: tuple[str, ...]
    question_modes: frozenset[QuestionMode] = frozenset({QuestionMode.OPEN_ENDED})
    difficulty_targets: tuple[str, ...] = ("basic", "advanced")
    question_type_hints: tuple[str, ...] = ()
    max_questions_per_chunk: int | None = None

    def __post_init__(self) -> None:
        if not self.generator_model_ids:
            raise ValueError("need at least one generator model")
        if not self.question_modes:
            raise ValueError("need at least one question mode")
        if not self.difficulty_targets:
            raise ValueError("need at least one difficulty target")
        if self.max_questions_per_chunk is not None and self.max_questions_per_chunk < 1:
            raise ValueError("max_questions_per_chunk must be positive")


@dataclass(frozen=True, slots=True)
class Citation:
    text: str
    claimed_chunk_id: str

    def __post_init__(self) -> None:
        if not self.text:
            raise ValueError("citation text must be nonempty")


@dataclass(frozen=True, slots=True)
class QAPair:
    qa_id: str
    doc_id: str
    chunk_id: str
    question: str
    answer: str
    citations: tuple[Citation, ...]
    generator_model_id: str
    mode: QuestionMode
    difficulty_label: str = "unspecified"
    question_type_label: str = "unspecified"
    choices: tuple[str, ...] | None = None
    gold_index: int | None = None

    def __post_init__(self) -> None:
        if not self.question or not self.answer:
            raise ValueError("question and answer must be nonempty")
        if self.mode is QuestionMode.MULTIPLE_CHOICE:
            if self.choices is None or len(self.choices) != 4:
                raise ValueError("multiple-choice pairs need exactly 4 choices")
            if self.gold_index is None or not (0 <= self.gold_index <= 3):
                raise ValueError("gold_index must be in [0, 3]")

    def to_json_dict(self) -> dict:
        return {
            "qa_id": self.qa_id,
            "doc_id": self.doc_id,
            "chunk_id": self.chunk_id,
            "question": self.question,
            "answer": self.answer,
            "citations": [{"text": c.text, "claimed_chunk_id": c.claimed_chunk_id} for c in self.citations],
            "generator_model_id": self.generator_model_id,
            "mode": self.mode.value,
            "difficulty_label": self.difficulty_label,
            "question_type_label": self.question_type_label,
            "choices": list(self.choices) if self.choices is not None else None,
            "gold_index": self.gold_index,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "QAPair":
        return cls(
            qa_id=data["qa_id"],
            doc_id=data["doc_id"],
            chunk_id=data["chunk_id"],
            question=data["question"],
            answer=data["answer"],
            citations=tuple(
                Citation(text=c["text"], claimed_chunk_id=c["claimed_chunk_id"])
                for c in data["citations"]
            ),
            generator_model_id=data["generator_model_id"],
            mode=QuestionMode(data["mode"]),
            difficulty_label=data.get("difficulty_label", "unspecified"),
            question_type_label=data.get("question_type_label", "unspecified"),
            choices=tuple(data["choices"]) if data.get("choices") is not None else None,
            gold_index=data.get("gold_index"),
        )


def qa_identifier(doc_id: str, chunk_id: str, model_id: str, question: str) -> str:
    payload = "\x1f".join((doc_id, chunk_id, model_id, question))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def _guidance_block(config: GenerationConfig) -> str:
    lines = [f"Difficulty targets: {', '.join(config.difficulty_targets)}."]
    if config.question_type_hints:
        lines.append(f"Question types to favor: {', '.join(config.question_type_hints)}.")
    if config.max_questions_per_chunk is not None:
        lines.append(f"Write at most {config.max_questions_per_chunk} questions.")
    return "\n".join(lines)


def build_generation_prompt(
    summary: Summary,
    chunk: Chunk | MultihopChunk,
    config: GenerationConfig,
    mode: QuestionMode = QuestionMode.OPEN_ENDED,
) -> str:
    if summary.doc_id != chunk.doc_id:
        raise ValueError(f"summary {summary.doc_id!r} does not match chunk doc {chunk.doc_id!r}")
    if mode is QuestionMode.MULTIPLE_CHOICE:
        template = load_template("question_gen_mcq")
    elif isinstance(chunk, MultihopChunk):
        template = load_template("question_gen_multihop")
    else:
        template = load_template("question_gen")
    return render(
        template,
        summary=summary.text,
        chunk=chunk.text,
        guidance=_guidance_block(config),
    )


def _first_json_array(response: str) -> list | None:
    decoder = json.JSONDecoder()
    idx = response.find("[")
    while idx != -1:
        try:
            value, _ = decoder.raw_decode(response, idx)
        except ValueError:
            value = None
        if isinstance(value, list):
            return value
        idx = response.find("[", idx + 1)
    return None


def _parse_gold(element: dict) -> int | None:
    gold = element.get("gold")
    if isinstance(gold, str) and gold.strip().upper() in ("A", "B", "C", "D"):
        return "ABCD".index(gold.strip().upper())
    gold_index = element.get("gold_index")
    if isinstance(gold_index, int) and 0 <= gold_index <= 3:
        return gold_index
    return None


def parse_qa_response(
    response: str,
    doc_id: str,
    chunk_id: str,
    model_id: str,
    mode: QuestionMode,
) -> list[QAPair]:
    """Extract QA pairs from a model response; drops malformed elements."""
    array = _first_json_array(response)
    if array is None:
        logger.warning("no JSON array in response from %s for %s", model_id, chunk_id)
        return []
    pairs: list[QAPair] = []
    for pos, element in enumerate(array):
        reason = _element_problem(element, mode)
        if reason:
            logger.warning("dropping element %d from %s/%s: %s", pos, model_id, chunk_id, reason)
            continue
        citations = tuple(
            Citation(text=c, claimed_chunk_id=chunk_id)
            for c in element["citations"]
            if isinstance(c, str) and c
        )
        choices = None
        gold_index = None
        if mode is QuestionMode.MULTIPLE_CHOICE:
            choices = tuple(element["choices"])
            gold_index = _parse_gold(element)
        pairs.append(
            QAPair(
                qa_id=qa_identifier(doc_id, chunk_id, model_id, element["question"]),
                doc_id=doc_id,
                chunk_id=chunk_id,
                question=element["question"],
                answer=element["answer"],
                citations=citations,
                generator_model_id=model_id,
                mode=mode,
                difficulty_label=str(element.get("difficulty", "unspecified")),
                question_type_label=str(element.get("kind", "unspecified")),
                choices=choices,
                gold_index=gold_index,
            )
        )
    return pairs


def _element_problem(element: object, mode: QuestionMode) -> str | None:
    if not isinstance(element, dict):
        return "not an object"
    for key in ("question", "answer"):
        if not isinstance(element.get(key), str) or not element[key]:
            return f"missing or empty {key!r}"
    if not isinstance(element.get("citations"), list):
        return "missing citations list"
    if mode is QuestionMode.MULTIPLE_CHOICE:
        choices = element.get("choices")
        if (
            not isinstance(choices, list)
            or len(choices) != 4
            or not all(isinstance(c, str) and c for c in choices)
        ):
            return "multiple-choice element needs exactly 4 nonempty choices"
        if _parse_gold(element) is None:
            return "missing or invalid gold choice"
    return None


def generate_ensemble(
    summaries: Mapping[str, Summary],
    chunks: Sequence[Chunk | MultihopChunk],
    config: GenerationConfig,
    models: Mapping[str, ModelSpec],
    client: ProviderClient,
    parallel: bool = False,
) -> list[QAPair]:
    """Fan (chunk x generator x mode) out to the ensemble; union is Q_raw.

    Per-call failures contribute nothing and are logged; results are
    deduplicated by qa_id and canonically sorted so output files are
    reproducible regardless of completion order.
    """
    tasks: list[tuple[Chunk | MultihopChunk, ModelSpec, QuestionMode]] = []
    for chunk in sorted(chunks, key=lambda c: c.chunk_id):
        if chunk.doc_id not in summaries:
            logger.warning("no summary for %s; skipping chunk %s", chunk.doc_id, chunk.chunk_id)
            continue
        for model_id in sorted(config.generator_model_ids):
            for mode in sorted(config.question_modes, key=lambda m: m.value):
                tasks.append((chunk, models[model_id], mode))

    def run_one(task: tuple[Chunk | MultihopChunk, ModelSpec, QuestionMode]) -> list[QAPair]:
        chunk, model, mode = task
        prompt = build_generation_prompt(summaries[chunk.doc_id], chunk, config, mode)
        try:
            exchange = client.chat(model, prompt)
        except (TransportError, ProviderRefusal) as exc:
            logger.warning("generator %s failed on %s: %s", model.model_id, chunk.chunk_id, exc)
            return []
        return parse_qa_response(exchange.response_text, chunk.doc_id, chunk.chunk_id, model.model_id, mode)

    results: list[QAPair] = []
    if parallel and len(tasks) > 1:
        with ThreadPoolExecutor(max_workers=8) as pool:
            for batch in pool.map(run_one, tasks):
                results.extend(batch)
    else:
        for task in tasks:
            results.extend(run_one(task))

    by_id = {qa.qa_id: qa for qa in results}
    return [by_id[k] for k in sorted(by_id)]
