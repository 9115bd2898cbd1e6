"""Rule-based extraction: gazetteer entities, counts, and dates per document.

The pipeline scans the body for disease/country mentions (longest surface
form wins), count expressions, and date expressions, then condenses each
class to a single winner by mention frequency.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional, Sequence

from .ensemble import ExtractionRecord
from .corpus import Document
from .gazetteer import COUNTRY, DISEASE, Gazetteer, default_gazetteer, fold
from .normalize import (
    COUNT_EXPR_RE,
    CanonicalDisease,
    CaseCount,
    CountAttribute,
    CountryCode,
    DATE_PATTERNS,
    IsoDate,
    count_from_match,
    country_table,
    resolve_date_match,
)

_TOKEN_RE = re.compile(r"\w+", re.UNICODE)

_ATTRIBUTE_RANK = {
    CountAttribute.CASE: 0,
    CountAttribute.DEATH: 1,
    CountAttribute.UNKNOWN: 2,
}


@dataclass(frozen=True)
class EntitySpan:
    cls: str
    start: int
    end: int
    surface: str
    canonical_id: str


@dataclass(frozen=True)
class CountSpan:
    start: int
    end: int
    count: CaseCount


@dataclass(frozen=True)
class DateSpan:
    start: int
    end: int
    value: IsoDate


@dataclass(frozen=True)
class KeyEntitySet:
    """At most one winner per class, chosen by mention frequency."""

    disease: Optional[str] = None  # canonical id
    country: Optional[str] = None  # alpha-3 code
    date: Optional[IsoDate] = None
    count: Optional[CaseCount] = None


def annotate_entities(doc: Document, gazetteer: Gazetteer) -> list[EntitySpan]:
    """Longest-match scan of the body for gazetteer surface forms.

    A match consumes its tokens, so shorter overlapping surfaces ("Ebola"
    inside "Ebola virus disease") are suppressed.
    """
    body = doc.body
    tokens = [(m.start(), m.end(), fold(m.group())) for m in _TOKEN_RE.finditer(body)]
    spans: list[EntitySpan] = []
    limit = gazetteer.max_surface_tokens
    i = 0
    while i < len(tokens):
        matched = False
        for n in range(min(limit, len(tokens) - i), 0, -1):
            key = " ".join(tok[2] for tok in tokens[i : i + n])
            entry = gazetteer.resolve_key(key)
            if entry is not None:
                start = tokens[i][0]
                end = tokens[i + n - 1][1]
                spans.append(
                    EntitySpan(entry.cls, start, end, body[start:end], entry.canonical_id)
                )
                i += n
                matched = True
                break
        if not matched:
            i += 1
    return spans


def annotate_counts(doc: Document) -> list[CountSpan]:
    """Every count expression in the body (number plus case/death keyword)."""
    return [
        CountSpan(m.start(), m.end(), count_from_match(m))
        for m in COUNT_EXPR_RE.finditer(doc.body)
    ]


def annotate_dates(doc: Document) -> list[DateSpan]:
    """All resolvable date mentions; ranges yield their start date.

    Year-less month-day mentions resolve against the document's published
    year and are dropped when the document is undated.
    """
    default_year = doc.published.year if doc.published else None
    raw_hits: list[tuple[int, int, IsoDate]] = []
    for pattern in DATE_PATTERNS:
        for match in pattern.finditer(doc.body):
            value = resolve_date_match(match, default_year)
            if value is not None:
                raw_hits.append((match.start(), match.end(), value))
    # Longest-first sweep removes submatches of richer patterns.
    raw_hits.sort(key=lambda hit: (hit[0], -(hit[1] - hit[0])))
    spans: list[DateSpan] = []
    cursor = -1
    for start, end, value in raw_hits:
        if start <= cursor:
            continue
        spans.append(DateSpan(start, end, value))
        cursor = end - 1
    return spans


def _most_frequent(occurrences: list[tuple[object, int]], extra_rank=None):
    """Winner among (value, offset) mentions: frequency, then tie rules.

    Ties break to the earliest first mention; ``extra_rank`` slots an extra
    criterion (count attribute preference) between frequency and position.
    """
    if not occurrences:
        return None
    stats: dict[object, dict] = {}
    for value, offset in occurrences:
        entry = stats.setdefault(value, {"freq": 0, "first": offset})
        entry["freq"] += 1
        entry["first"] = min(entry["first"], offset)
    def sort_key(value):
        entry = stats[value]
        rank = extra_rank(value) if extra_rank else 0
        return (-entry["freq"], rank, entry["first"])
    return min(stats, key=sort_key)


def filter_key_entities(
    spans: Sequence[EntitySpan],
    counts: Sequence[CountSpan],
    dates: Sequence[DateSpan],
) -> KeyEntitySet:
    """Condense annotations to one winner per class by mention frequency."""
    disease = _most_frequent(
        [(s.canonical_id, s.start) for s in spans if s.cls == DISEASE]
    )
    country = _most_frequent(
        [(s.canonical_id, s.start) for s in spans if s.cls == COUNTRY]
    )
    date_winner = _most_frequent([(d.value, d.start) for d in dates])

    count_winner = None
    count_groups: dict[int, list[CountSpan]] = {}
    for span in counts:
        count_groups.setdefault(span.count.value, []).append(span)
    if count_groups:
        def group_rank(value):
            return min(_ATTRIBUTE_RANK[s.count.attribute] for s in count_groups[value])
        winning_value = _most_frequent(
            [(s.count.value, s.start) for s in counts], extra_rank=group_rank
        )
        best_rank = group_rank(winning_value)
        count_winner = next(
            s.count
            for s in sorted(count_groups[winning_value], key=lambda s: s.start)
            if _ATTRIBUTE_RANK[s.count.attribute] == best_rank
        )

    return KeyEntitySet(
        disease=disease, country=country, date=date_winner, count=count_winner
    )


def _first_surface(spans: Sequence[EntitySpan], cls: str, canonical_id: str) -> Optional[str]:
    hits = [s for s in spans if s.cls == cls and s.canonical_id == canonical_id]
    if not hits:
        return None
    return min(hits, key=lambda s: s.start).surface


def extract_rule_based(
    doc: Document,
    gazetteer: Gazetteer | None = None,
    extractor_id: str = "rule-based",
) -> ExtractionRecord:
    """Run the three annotators and map the per-class winners into a record."""
    gazetteer = gazetteer or default_gazetteer()
    spans = annotate_entities(doc, gazetteer)
    counts = annotate_counts(doc)
    dates = annotate_dates(doc)
    keys = filter_key_entities(spans, counts, dates)

    disease = None
    disease_raw = None
    if keys.disease is not None:
        disease = CanonicalDisease(keys.disease, gazetteer.display_name(keys.disease))
        disease_raw = _first_surface(spans, DISEASE, keys.disease)

    country: Optional[CountryCode] = None
    country_raw = None
    if keys.country is not None:
        country = country_table().for_code(keys.country)
        country_raw = _first_surface(spans, COUNTRY, keys.country)

    date_raw = None
    if keys.date is not None:
        first = min((d for d in dates if d.value == keys.date), key=lambda d: d.start)
        date_raw = doc.body[first.start : first.end]

    count_raw = None
    if keys.count is not None:
        first = min((c for c in counts if c.count == keys.count), key=lambda c: c.start)
        count_raw = doc.body[first.start : first.end]

    return ExtractionRecord(
        document_id=doc.id,
        extractor_id=extractor_id,
        disease_raw=disease_raw,
        disease=disease,
        country_raw=country_raw,
        country=country,
        date_raw=date_raw,
        date=keys.date,
        count_raw=count_raw,
        count=keys.count,
    )
