"""Exact-match evaluation on multiple-choice question sets."""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass
from typing import Mapping, Sequence

from .errors import ProviderRefusal, TransportError
from .generation import QAPair, QuestionMode
from .prompts import load_template, render
from .providers.client import ProviderClient
from .providers.models import ModelSpec, Role

logger = logging.getLogger(__name__)

_LETTER_RE = re.compile(r"(?<![A-Za-z0-9])\(?([A-Da-d])\)?(?![A-Za-z0-9])")


@dataclass(frozen=True, slots=True)
class MCQItem:
    qa_id: str
    question: str
    choices: tuple[str, str, str, str]
    gold_index: int
    subject: str

    def __post_init__(self) -> None:
        if len(self.choices) != 4:
            raise ValueError("exactly 4 choices required")
        if not (0 <= self.gold_index <= 3):
            raise ValueError("gold_index must be in [0, 3]")

    def to_json_dict(self) -> dict:
        return {
            "qa_id": self.qa_id,
            "question": self.question,
            "choices": list(self.choices),
            "gold_index": self.gold_index,
            "subject": self.subject,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "MCQItem":
        return cls(
            qa_id=data["qa_id"],
            question=data["question"],
            choices=tuple(data["choices"]),
            gold_index=int(data["gold_index"]),
            subject=data["subject"],
        )

    @classmethod
    def from_qa(cls, qa: QAPair, subject: str) -> "MCQItem":
        if qa.mode is not QuestionMode.MULTIPLE_CHOICE or qa.choices is None or qa.gold_index is None:
            raise ValueError(f"{qa.qa_id} is not a multiple-choice pair")
        return cls(
            qa_id=qa.qa_id,
            question=qa.question,
            choices=tuple(qa.choices),  # type: ignore[arg-type]
            gold_index=qa.gold_index,
            subject=subject,
        )


@dataclass(frozen=True, slots=True)
class AccuracyCell:
    model_id: str
    subject: str
    n: int
    correct: int
    accuracy: float
    std_err: float

    def formatted(self) -> str:
        return f"{self.accuracy * 100:.2f}% ({self.std_err * 100:.2f}%)"


def binomial_std_err(accuracy: float, n: int) -> float:
    return math.sqrt(accuracy * (1.0 - accuracy) / n)


def parse_letter(response: str) -> int | None:
    """First standalone letter A-D in the response; None means abstention."""
    m = _LETTER_RE.search(response)
    if m is None:
        return None
    return "ABCD".index(m.group(1).upper())


def build_mcq_prompt(item: MCQItem, chunk_text: str) -> str:
    choices = "\n".join(f"{letter}. {text}" for letter, text in zip("ABCD", item.choices))
    return render(load_template("mcq_answer"), chunk=chunk_text, question=item.question, choices=choices)


def pose_mcq(
    model: ModelSpec,
    item: MCQItem,
    chunk_text: str,
    client: ProviderClient,
) -> int | None:
    """Ask one question; unparseable or failed responses count as abstention."""
    if model.role is not Role.TARGET:
        raise ValueError(f"model {model.model_id!r} is not a target")
    prompt = build_mcq_prompt(item, chunk_text)
    try:
        response = client.chat(model, prompt).response_text
    except (TransportError, ProviderRefusal) as exc:
        logger.warning("target %s failed on %s: %s; abstention", model.model_id, item.qa_id, exc)
        return None
    return parse_letter(response)


def score_subject(
    model_id: str,
    subject: str,
    predictions: Sequence[int | None],
    items: Sequence[MCQItem],
) -> AccuracyCell:
    if len(predictions) != len(items):
        raise ValueError("one prediction per item required")
    if not items:
        raise ValueError("cannot score an empty subject")
    correct = sum(1 for pred, item in zip(predictions, items) if pred == item.gold_index)
    accuracy = correct / len(items)
    return AccuracyCell(
        model_id=model_id,
        subject=subject,
        n=len(items),
        correct=correct,
        accuracy=accuracy,
        std_err=binomial_std_err(accuracy, len(items)),
    )


def results_table(cells: Sequence[AccuracyCell]) -> str:
    """CSV table, models as rows and subjects as columns, 'acc (se)' cells."""
    subjects = sorted({c.subject for c in cells})
    models = sorted({c.model_id for c in cells})
    by_key: Mapping[tuple[str, str], AccuracyCell] = {(c.model_id, c.subject): c for c in cells}
    lines = ["model," + ",".join(subjects)]
    for model in models:
        row = [model]
        for subject in subjects:
            cell = by_key.get((model, subject))
            row.append(f'"{cell.formatted()}"' if cell else "")
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"
