"""Normalize heterogeneous text inputs into one markdown-flavored form.

Plain text and markdown pass through with newline normalization only. HTML
goes through a rule-based structural converter: headings, lists, tables,
inline code and links are mapped to their markdown equivalents; scripts,
styles and comments are dropped; images become a literal
``[image: <alt>]`` placeholder line so downstream offsets stay meaningful.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from html.parser import HTMLParser
from pathlib import Path

from ._serde import read_jsonl
from .errors import DuplicateDocId, EmptyAfterNormalization, MissingFile, UndecodableBytes


class SourceFormat(str, Enum):
    TEXT = "text"
    MARKDOWN = "markdown"
    HTML = "html"


_EXTENSION_MAP = {
    ".txt": SourceFormat.TEXT,
    ".md": SourceFormat.MARKDOWN,
    ".markdown": SourceFormat.MARKDOWN,
    ".html": SourceFormat.HTML,
    ".htm": SourceFormat.HTML,
}


@dataclass(frozen=True, slots=True)
class DocumentSource:
    doc_id: str
    origin: str
    format_hint: SourceFormat
    raw_bytes: bytes
    category: str | None = None


@dataclass(frozen=True, slots=True)
class NormalizedDocument:
    doc_id: str
    text: str
    char_length: int
    source_format: SourceFormat

    def to_json_dict(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "text": self.text,
            "char_length": self.char_length,
            "source_format": self.source_format.value,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "NormalizedDocument":
        return cls(
            doc_id=data["doc_id"],
            text=data["text"],
            char_length=int(data["char_length"]),
            source_format=SourceFormat(data["source_format"]),
        )


_HEADING_RE = re.compile(r"^h([1-6])$")
_SKIP_TAGS = {"script", "style", "head", "title", "meta", "link"}
_BLOCK_TAGS = {
    "p", "div", "section", "article", "header", "footer", "main",
    "aside", "figure", "figcaption", "blockquote", "hr",
}


class _HtmlToMarkdown(HTMLParser):
    """Event-driven converter; emits a list of markdown blocks."""

    def __init__(self) -> None:
        super().__init__(convert_charrefs=True)
        self.blocks: list[str] = []
        self._inline: list[str] = []
        self._skip = 0
        self._heading = 0
        self._pre = False
        self._pre_parts: list[str] = []
        self._list_stack: list[tuple[str, int]] = []
        self._list_lines: list[str] = []
        self._table_rows: list[tuple[list[str], bool]] | None = None
        self._row: list[str] | None = None
        self._row_header = False
        self._cell: list[str] | None = None
        self._hrefs: list[str] = []

    # -- block assembly --------------------------------------------------

    def _flush_inline(self) -> None:
        text = _collapse("".join(self._inline))
        self._inline = []
        if not text:
            return
        if self._heading:
            self.blocks.append("#" * self._heading + " " + text)
        elif self._list_stack:
            kind, count = self._list_stack[-1]
            indent = "  " * (len(self._list_stack) - 1)
            marker = f"{count}." if kind == "ol" else "-"
            self._list_lines.append(f"{indent}{marker} {text}")
            self._list_stack[-1] = (kind, count + 1)
        else:
            self.blocks.append(text)

    def _close_list_if_done(self) -> None:
        if not self._list_stack and self._list_lines:
            self.blocks.append("\n".join(self._list_lines))
            self._list_lines = []

    def _flush_table(self) -> None:
        if not self._table_rows:
            self._table_rows = None
            return
        lines = []
        for i, (cells, is_header) in enumerate(self._table_rows):
            lines.append("| " + " | ".join(cells) + " |")
            if i == 0 and is_header:
                lines.append("|" + "|".join(" --- " for _ in cells) + "|")
        self.blocks.append("\n".join(lines))
        self._table_rows = None

    # -- parser events -----------------------------------------------------

    def handle_starttag(self, tag: str, attrs: list[tuple[str, str | None]]) -> None:
        if tag in _SKIP_TAGS:
            self._skip += 1
            return
        if self._skip:
            return
        heading = _HEADING_RE.match(tag)
        if heading:
            self._flush_inline()
            self._heading = int(heading.group(1))
        elif tag == "pre":
            self._flush_inline()
            self._pre = True
            self._pre_parts = []
        elif tag == "code":
            if not self._pre:
                self._inline.append("`")
        elif tag in ("ul", "ol"):
            self._flush_inline()
            self._list_stack.append((tag, 1))
        elif tag == "li":
            self._flush_inline()
        elif tag == "table":
            self._flush_inline()
            self._table_rows = []
        elif tag == "tr":
            self._row = []
            self._row_header = False
        elif tag in ("td", "th"):
            self._cell = []
            if tag == "th":
                self._row_header = True
        elif tag in ("b", "strong"):
            self._inline.append("**")
        elif tag in ("i", "em"):
            self._inline.append("*")
        elif tag == "a":
            href = dict(attrs).get("href") or ""
            self._hrefs.append(href)
            self._inline.append("[")
        elif tag == "img":
            alt = (dict(attrs).get("alt") or "").strip() or "no description"
            self._flush_inline()
            self.blocks.append(f"[image: {alt}]")
        elif tag == "br":
            self._inline.append("\n")
        elif tag in _BLOCK_TAGS:
            self._flush_inline()

    def handle_startendtag(self, tag: str, attrs: list[tuple[str, str | None]]) -> None:
        if tag in ("img", "br", "hr"):
            self.handle_starttag(tag, attrs)

    def handle_endtag(self, tag: str) -> None:
        if tag in _SKIP_TAGS:
            self._skip = max(0, self._skip - 1)
            return
        if self._skip:
            return
        if _HEADING_RE.match(tag):
            self._flush_inline()
            self._heading = 0
        elif tag == "pre":
            code = "\n".join(part.rstrip() for part in "".join(self._pre_parts).strip("\n").split("\n"))
            if code.strip():
                self.blocks.append(f"```\n{code}\n```")
            self._pre = False
        elif tag == "code":
            if not self._pre:
                self._inline.append("`")
        elif tag in ("ul", "ol"):
            self._flush_inline()
            if self._list_stack:
                self._list_stack.pop()
            self._close_list_if_done()
        elif tag == "li":
            self._flush_inline()
        elif tag == "table":
            if self._table_rows is not None:
                self._flush_table()
        elif tag == "tr":
            if self._row is not None and self._table_rows is not None:
                self._table_rows.append((self._row, self._row_header))
            self._row = None
        elif tag in ("td", "th"):
            if self._cell is not None and self._row is not None:
                self._row.append(_collapse("".join(self._cell)).replace("\n", " "))
            self._cell = None
        elif tag in ("b", "strong"):
            self._inline.append("**")
        elif tag in ("i", "em"):
            self._inline.append("*")
        elif tag == "a":
            href = self._hrefs.pop() if self._hrefs else ""
            self._inline.append(f"]({href})" if href else "]")
        elif tag in _BLOCK_TAGS:
            self._flush_inline()

    def handle_data(self, data: str) -> None:
        if self._skip:
            return
        if self._pre:
            self._pre_parts.append(data)
        elif self._cell is not None:
            self._cell.append(data)
        else:
            self._inline.append(data)

    def handle_comment(self, data: str) -> None:
        pass

    def result(self) -> str:
        self._flush_inline()
        self._close_list_if_done()
        if self._table_rows is not None:
            self._flush_table()
        return "\n\n".join(b for b in self.blocks if b.strip())


def _collapse(text: str) -> str:
    """Collapse whitespace runs, preserving explicit (<br>) line breaks."""
    lines = [re.sub(r"[ \t\f\v]+", " ", ln).strip() for ln in text.split("\n")]
    return "\n".join(ln for ln in lines if ln) if any(lines) else ""


def html_to_markdown(html: str) -> str:
    parser = _HtmlToMarkdown()
    parser.feed(html)
    parser.close()
    return parser.result()


def normalize_newlines(text: str) -> str:
    text = text.replace("\r\n", "\n").replace("\r", "\n")
    text = "\n".join(line.rstrip() for line in text.split("\n"))
    text = re.sub(r"\n{3,}", "\n\n", text)
    return text.strip("\n").strip()


def normalize(source: DocumentSource) -> NormalizedDocument:
    """Produce the unified markdown-like document representation."""
    try:
        raw = source.raw_bytes.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise UndecodableBytes(f"{source.doc_id}: {exc}") from exc

    if source.format_hint is SourceFormat.HTML:
        text = normalize_newlines(html_to_markdown(raw))
    else:
        text = normalize_newlines(raw)

    if not text:
        raise EmptyAfterNormalization(f"{source.doc_id}: nothing left after normalization")
    return NormalizedDocument(
        doc_id=source.doc_id,
        text=text,
        char_length=len(text),
        source_format=source.format_hint,
    )


def load_corpus(root: str | Path) -> list[DocumentSource]:
    """Load sources from a directory tree or a JSON Lines manifest.

    Directory mode maps extensions (.txt/.md/.html/.htm) to formats and uses
    the relative posix path as doc_id. Manifest mode reads one object per
    line: {doc_id, path, format, category}, paths relative to the manifest.
    Ordering is lexicographic by doc_id either way.
    """
    root = Path(root)
    if not root.exists():
        raise MissingFile(f"corpus root {root} does not exist")
    sources: list[DocumentSource] = []
    seen: set[str] = set()

    if root.is_dir():
        for path in sorted(root.rglob("*")):
            fmt = _EXTENSION_MAP.get(path.suffix.lower())
            if fmt is None or not path.is_file():
                continue
            doc_id = path.relative_to(root).as_posix()
            if doc_id in seen:
                raise DuplicateDocId(doc_id)
            seen.add(doc_id)
            sources.append(
                DocumentSource(
                    doc_id=doc_id,
                    origin=str(path),
                    format_hint=fmt,
                    raw_bytes=path.read_bytes(),
                )
            )
    else:
        base = root.parent
        for entry in read_jsonl(root):
            doc_id = entry["doc_id"]
            if doc_id in seen:
                raise DuplicateDocId(doc_id)
            seen.add(doc_id)
            path = base / entry["path"]
            if not path.is_file():
                raise MissingFile(f"{doc_id}: {path} not found")
            fmt = SourceFormat(entry["format"]) if "format" in entry else _EXTENSION_MAP.get(path.suffix.lower())
            if fmt is None:
                raise MissingFile(f"{doc_id}: cannot infer format for {path}")
            sources.append(
                DocumentSource(
                    doc_id=doc_id,
                    origin=str(path),
                    format_hint=fmt,
                    raw_bytes=path.read_bytes(),
                    category=entry.get("category"),
                )
            )

    sources.sort(key=lambda s: s.doc_id)
    return sources
