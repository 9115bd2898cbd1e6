"""Surface-form gazetteer mapping disease and country mentions to canonical ids.

The gazetteer is a flat in-memory table: every known surface form (a display
name, synonym, or abbreviation) points at one canonical entry. Lookups are
case-, accent-, and punctuation-insensitive.
"""

from __future__ import annotations

import unicodedata
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Iterator

from .errors import SchemaError

DISEASE = "DISEASE"
COUNTRY = "COUNTRY"

_DATA_DIR = Path(__file__).parent / "data"

# Folded aliases too ambiguous to scan for inside running text ("the US" vs
# the pronoun "us"). They stay valid for whole-string lookups elsewhere.
_SCAN_STOPLIST = frozenset({"us"})


def fold(text: str) -> str:
    """Reduce text to a matching key: casefold, strip accents and punctuation."""
    decomposed = unicodedata.normalize("NFKD", text.casefold())
    stripped = "".join(ch for ch in decomposed if not unicodedata.combining(ch))
    cleaned = "".join(ch if ch.isalnum() else " " for ch in stripped)
    return " ".join(cleaned.split())


@dataclass(frozen=True)
class GazetteerEntry:
    cls: str
    canonical_id: str
    display_name: str


class Gazetteer:
    """Immutable-after-load synonym table shared by annotators and normalizers."""

    def __init__(self, rows: Iterable[tuple[str, str, str, str]] = ()):
        self._by_surface: dict[str, GazetteerEntry] = {}
        self._display: dict[str, str] = {}
        self._max_tokens = 1
        for cls, canonical_id, display_name, surface in rows:
            self.add(cls, canonical_id, display_name, surface)

    def add(self, cls: str, canonical_id: str, display_name: str, surface: str) -> None:
        if cls not in (DISEASE, COUNTRY):
            raise SchemaError(f"unknown gazetteer class {cls!r}")
        key = fold(surface)
        if not key:
            raise SchemaError(f"surface form {surface!r} folds to nothing")
        entry = GazetteerEntry(cls, canonical_id, display_name)
        existing = self._by_surface.get(key)
        if existing is not None and existing != entry:
            raise SchemaError(
                f"surface form {surface!r} maps to both "
                f"{existing.canonical_id!r} and {canonical_id!r}"
            )
        self._by_surface[key] = entry
        self._display.setdefault(canonical_id, display_name)
        self._max_tokens = max(self._max_tokens, len(key.split()))

    def resolve(self, surface: str) -> GazetteerEntry | None:
        """Look up one surface form; None when unknown."""
        return self._by_surface.get(fold(surface))

    def resolve_key(self, folded_key: str) -> GazetteerEntry | None:
        """Look up an already-folded key (used by the document scanner)."""
        return self._by_surface.get(folded_key)

    def display_name(self, canonical_id: str) -> str:
        return self._display[canonical_id]

    @property
    def max_surface_tokens(self) -> int:
        """Longest surface form, in folded tokens; bounds the scan window."""
        return self._max_tokens

    def __len__(self) -> int:
        return len(self._by_surface)

    def __contains__(self, surface: str) -> bool:
        return fold(surface) in self._by_surface

    def entries(self) -> Iterator[GazetteerEntry]:
        return iter(set(self._by_surface.values()))

    def validate(self) -> None:
        """Every canonical id must also be reachable through its display name."""
        for entry in self.entries():
            hit = self.resolve(entry.display_name)
            if hit is None or hit.canonical_id != entry.canonical_id:
                raise SchemaError(
                    f"display name {entry.display_name!r} is not a surface form "
                    f"of {entry.canonical_id!r}"
                )


def _iter_tsv(path: Path, columns: int) -> Iterator[tuple[int, list[str]]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != columns:
                raise SchemaError(
                    f"expected {columns} tab-separated columns, got {len(parts)}",
                    line=lineno,
                )
            yield lineno, [p.strip() for p in parts]


def load_gazetteer(path: str | Path) -> Gazetteer:
    """Load a gazetteer resource file (class, canonical_id, display_name, surface_form)."""
    gaz = Gazetteer()
    for _, (cls, canonical_id, display_name, surface) in _iter_tsv(Path(path), 4):
        gaz.add(cls, canonical_id, display_name, surface)
    gaz.validate()
    return gaz


@lru_cache(maxsize=1)
def default_gazetteer() -> Gazetteer:
    """Bundled gazetteer: disease table plus country names and aliases.

    Country entries are derived from the bundled ISO-3166 table so the
    annotator and the country normalizer never disagree; their canonical id
    is the alpha-3 code.
    """
    gaz = Gazetteer()
    for _, (cls, canonical_id, display_name, surface) in _iter_tsv(
        _DATA_DIR / "diseases.tsv", 4
    ):
        gaz.add(cls, canonical_id, display_name, surface)
    for _, (alpha3, display_name, alias) in _iter_tsv(_DATA_DIR / "countries.tsv", 3):
        if fold(alias) in _SCAN_STOPLIST:
            continue
        gaz.add(COUNTRY, alpha3, display_name, alias)
    gaz.validate()
    return gaz
