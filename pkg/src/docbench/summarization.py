"""Document-level summaries via chain-of-thought prompting and tagged blocks."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass

from .errors import MissingTag, TransportError, ProviderRefusal
from .ingestion import NormalizedDocument
from .prompts import load_template, render
from .providers.client import ProviderClient
from .providers.models import ModelSpec, Role

logger = logging.getLogger(__name__)


@dataclass(frozen=True, slots=True)
class Summary:
    doc_id: str
    text: str
    model_id: str
    raw_response: str

    def to_json_dict(self) -> dict:
        return {"doc_id": self.doc_id, "model_id": self.model_id, "text": self.text}


def extract_tagged_block(response: str, tag: str) -> str:
    """Content of the last <tag>...</tag> pair, trimmed. Raises MissingTag."""
    if not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", tag):
        raise ValueError(f"tag must be a bare identifier, got {tag!r}")
    matches = re.findall(rf"<{tag}>(.*?)</{tag}>", response, flags=re.DOTALL)
    if not matches:
        raise MissingTag(f"no <{tag}> block in response")
    return matches[-1].strip()


def summarize(
    doc: NormalizedDocument,
    model: ModelSpec,
    client: ProviderClient,
    context_token_limit: int = 8000,
) -> Summary:
    """One global summary per document, at temperature zero.

    Documents longer than the context limit are summarized hierarchically:
    window summaries are concatenated and re-summarized once. A response
    with no extractable block is retried once, then degraded to an
    empty-summary sentinel with a warning so the document still proceeds.
    """
    if model.role is not Role.GENERATOR:
        raise ValueError(f"summarization needs a generator model, got {model.role.value}")
    model = model.with_sampling(temperature=0.0)

    text = doc.text
    if len(text.split()) > context_token_limit:
        text = _reduce_long_document(doc, model, client, context_token_limit)

    template = load_template("summarize")
    prompt = render(template, document=text)
    raw = ""
    for attempt in range(2):
        raw = client.chat(model, prompt).response_text
        try:
            return Summary(
                doc_id=doc.doc_id,
                text=extract_tagged_block(raw, "final_summary"),
                model_id=model.model_id,
                raw_response=raw,
            )
        except MissingTag:
            if attempt == 0:
                logger.warning("no final_summary block for %s, retrying once", doc.doc_id)
    logger.warning("no final_summary block for %s after retry; using empty sentinel", doc.doc_id)
    return Summary(doc_id=doc.doc_id, text="", model_id=model.model_id, raw_response=raw)


def _reduce_long_document(
    doc: NormalizedDocument,
    model: ModelSpec,
    client: ProviderClient,
    limit: int,
) -> str:
    """Two-level map-reduce: summarize windows, then stitch the pieces."""
    template = load_template("summarize")
    words = doc.text.split()
    window = max(limit // 2, 1)
    partials: list[str] = []
    for start in range(0, len(words), window):
        piece = " ".join(words[start : start + window])
        prompt = render(template, document=piece)
        try:
            raw = client.chat(model, prompt).response_text
            partials.append(extract_tagged_block(raw, "final_summary"))
        except (MissingTag, TransportError, ProviderRefusal) as exc:
            logger.warning("window summary failed for %s: %s", doc.doc_id, exc)
    return "\n\n".join(partials) if partials else doc.text[: limit * 4]
