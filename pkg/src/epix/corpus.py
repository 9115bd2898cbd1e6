"""Document model and ingestion for outbreak-news feeds.

Raw mailing-list posts and bulletin articles are normalized into plain-text
Documents; corpora and gold annotations persist as line-delimited JSON so
collections of tens of thousands of documents stream without loading tricks.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, replace
from datetime import date
from enum import Enum
from html.parser import HTMLParser
from pathlib import Path
from typing import Iterable, Mapping, Optional

from .errors import EmptyInput, SchemaError
from .normalize import IsoDate, normalize_date


class Source(str, Enum):
    PROMED = "PROMED"
    WHO_DON = "WHO_DON"
    OTHER = "OTHER"


@dataclass(frozen=True)
class Document:
    """One normalized outbreak-news item."""

    id: str
    source: Source
    title: str
    body: str
    url: Optional[str] = None
    published: Optional[IsoDate] = None
    warnings: tuple[str, ...] = ()

    @property
    def chars(self) -> int:
        return len(self.body)

    def to_json(self) -> dict:
        record = {
            "id": self.id,
            "source": self.source.value,
            "url": self.url,
            "published": self.published.isoformat() if self.published else None,
            "title": self.title,
            "body": self.body,
        }
        if self.warnings:
            record["warnings"] = list(self.warnings)
        return record

    @staticmethod
    def from_json(record: Mapping) -> "Document":
        doc_id = record.get("id")
        if not isinstance(doc_id, str) or not doc_id:
            raise SchemaError("document id must be a non-empty string")
        try:
            source = Source(record.get("source"))
        except ValueError:
            raise SchemaError(f"unknown source {record.get('source')!r}") from None
        published = record.get("published")
        if published is not None:
            try:
                published = date.fromisoformat(published)
            except (TypeError, ValueError):
                raise SchemaError(f"invalid published date {published!r}") from None
        title = record.get("title")
        body = record.get("body")
        if not isinstance(title, str) or not isinstance(body, str):
            raise SchemaError("title and body must be strings")
        url = record.get("url")
        if url is not None and not isinstance(url, str):
            raise SchemaError("url must be a string or null")
        return Document(
            id=doc_id,
            source=source,
            title=title,
            body=body,
            url=url,
            published=published,
            warnings=tuple(record.get("warnings", ())),
        )


@dataclass(frozen=True)
class GoldAnnotation:
    """Expert-labelled ground truth for one document; any field may be absent."""

    document_id: str
    disease: Optional[str] = None
    country: Optional[str] = None
    date: Optional[IsoDate] = None
    count: Optional[int] = None

    def value(self, field_name: str):
        return getattr(self, field_name)

    def to_json(self) -> dict:
        return {
            "document_id": self.document_id,
            "disease": self.disease,
            "country": self.country,
            "date": self.date.isoformat() if self.date else None,
            "count": self.count,
        }


# --- markup stripping ------------------------------------------------------

_BLOCK_TAGS = {
    "p", "div", "br", "li", "ul", "ol", "tr", "td", "th", "table",
    "h1", "h2", "h3", "h4", "h5", "h6", "section", "article", "header",
    "footer", "blockquote", "pre", "dd", "dt",
}
_SKIP_TAGS = {"script", "style"}


class _TextExtractor(HTMLParser):
    # Every tag acts as a whitespace boundary; block-level tags additionally
    # break lines so header detection (Subject:, date lines) keeps working.
    def __init__(self):
        super().__init__(convert_charrefs=True)
        self.parts: list[str] = []
        self._skip_depth = 0

    def handle_starttag(self, tag, attrs):
        if tag in _SKIP_TAGS:
            self._skip_depth += 1
        self.parts.append("\n" if tag in _BLOCK_TAGS else " ")

    def handle_endtag(self, tag):
        if tag in _SKIP_TAGS and self._skip_depth:
            self._skip_depth -= 1
        self.parts.append("\n" if tag in _BLOCK_TAGS else " ")

    def handle_data(self, data):
        if not self._skip_depth:
            self.parts.append(data)


_STRAY_TAG_RE = re.compile(r"<[a-zA-Z!/]")


def _to_lines(raw: str) -> tuple[list[str], bool]:
    """Strip markup into normalized non-empty lines; flags suspect input.

    Stripping is best-effort and never fatal: if the parser chokes, a crude
    regex pass takes over and the result is flagged as malformed.
    """
    malformed = False
    try:
        extractor = _TextExtractor()
        extractor.feed(raw)
        extractor.close()
        text = "".join(extractor.parts)
    except Exception:
        text = re.sub(r"<[^>]*>?", " ", raw)
        malformed = True
    # An opening angle bracket after the last close is an unterminated tag.
    last_lt = raw.rfind("<")
    if last_lt > raw.rfind(">") and _STRAY_TAG_RE.match(raw, last_lt):
        malformed = True
    lines = [" ".join(line.split()) for line in text.split("\n")]
    return [line for line in lines if line], malformed


def strip_markup(raw: str) -> str:
    """Best-effort tag removal; output is whitespace-normalized linear text."""
    lines, _ = _to_lines(raw)
    return " ".join(lines)


_SUBJECT_RE = re.compile(r"^subject\s*:\s*(.+)$", re.IGNORECASE)
_TITLE_TAG_RE = re.compile(r"<(?:title|h1)[^>]*>(.*?)</(?:title|h1)>", re.IGNORECASE | re.DOTALL)
_TITLE_FALLBACK_CHARS = 120


def _content_id(prefix: str, *parts: str) -> str:
    digest = hashlib.sha256("\x1f".join(parts).encode("utf-8")).hexdigest()
    return f"{prefix}-{digest[:12]}"


def parse_promed_post(raw: str, hint: Mapping | None = None) -> Document:
    """Normalize one mailing-list post.

    The title comes from the first Subject: line when one exists, otherwise
    from the first 120 characters of the stripped body. ``hint`` may supply
    id, url, and published metadata from the feed envelope.
    """
    if raw is None or not raw.strip():
        raise EmptyInput("post is empty")
    hint = hint or {}
    lines, malformed = _to_lines(raw)

    title = None
    body_lines = []
    for line in lines:
        match = _SUBJECT_RE.match(line)
        if title is None and match:
            title = match.group(1).strip()
        else:
            body_lines.append(line)
    body = " ".join(body_lines)
    if title is None:
        title = body[:_TITLE_FALLBACK_CHARS]

    published = hint.get("published")
    if isinstance(published, str):
        published = normalize_date(published)
    return Document(
        id=hint.get("id") or _content_id("promed", title, body),
        source=Source.PROMED,
        title=title,
        body=body,
        url=hint.get("url"),
        published=published,
        warnings=("malformed-markup",) if malformed else (),
    )


def parse_don_article(raw: str, url: str) -> Document:
    """Normalize one bulletin article; markup problems are never fatal.

    The publication date is picked up from a date-like header line near the
    top of the article when one is present.
    """
    if raw is None or not raw.strip():
        raise EmptyInput("article is empty")
    lines, malformed = _to_lines(raw)
    body = " ".join(lines)

    title_match = _TITLE_TAG_RE.search(raw)
    if title_match:
        title = strip_markup(title_match.group(1))
    else:
        title = body[:_TITLE_FALLBACK_CHARS]

    published = None
    for line in lines[:10]:
        for segment in [line, *line.split("|")]:
            published = normalize_date(segment.strip())
            if published:
                break
        if published:
            break

    return Document(
        id=_content_id("don", url or "", title, body),
        source=Source.WHO_DON,
        title=title,
        body=body,
        url=url or None,
        published=published,
        warnings=("malformed-markup",) if malformed else (),
    )


def with_id(doc: Document, doc_id: str) -> Document:
    """Copy of a document under an externally assigned id."""
    return replace(doc, id=doc_id)


# --- persistence -----------------------------------------------------------


def save_corpus(docs: Iterable[Document], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for doc in docs:
            fh.write(json.dumps(doc.to_json(), ensure_ascii=False) + "\n")


def load_corpus(path: str | Path) -> list[Document]:
    """Load a line-delimited corpus, preserving order; ids must be unique."""
    docs: list[Document] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"invalid JSON ({exc.msg})", line=lineno) from None
            try:
                doc = Document.from_json(record)
            except SchemaError as exc:
                raise SchemaError(str(exc), line=lineno) from None
            if doc.id in seen:
                raise SchemaError(f"duplicate document id {doc.id!r}", line=lineno)
            seen.add(doc.id)
            docs.append(doc)
    return docs


def load_gold(path: str | Path) -> list[GoldAnnotation]:
    """Load gold annotations; absent fields must be explicit nulls."""
    annotations: list[GoldAnnotation] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"invalid JSON ({exc.msg})", line=lineno) from None
            annotations.append(_gold_from_json(record, lineno))
    return annotations


def _gold_from_json(record: Mapping, lineno: int) -> GoldAnnotation:
    doc_id = record.get("document_id")
    if not isinstance(doc_id, str) or not doc_id:
        raise SchemaError("missing document_id", line=lineno)
    for key in ("disease", "country", "date"):
        value = record.get(key)
        if value is not None and (not isinstance(value, str) or not value.strip()):
            raise SchemaError(f"{key} must be null or a non-empty string", line=lineno)
    gold_date = record.get("date")
    if gold_date is not None:
        try:
            gold_date = date.fromisoformat(gold_date)
        except ValueError:
            raise SchemaError(f"invalid date {record.get('date')!r}", line=lineno) from None
    count = record.get("count")
    if count is not None and (isinstance(count, bool) or not isinstance(count, int) or count < 0):
        raise SchemaError("count must be null or a non-negative integer", line=lineno)
    return GoldAnnotation(
        document_id=doc_id,
        disease=record.get("disease"),
        country=record.get("country"),
        date=gold_date,
        count=count,
    )


def save_gold(annotations: Iterable[GoldAnnotation], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for gold in annotations:
            fh.write(json.dumps(gold.to_json(), ensure_ascii=False) + "\n")
