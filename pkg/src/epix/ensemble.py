"""Majority voting over per-field outputs of multiple extractors.

Also home of ExtractionRecord, the record shape every extractor produces:
the four target fields (disease, country, date, case count), each carried
as the raw string plus its normalized value.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import date
from enum import Enum
from typing import Mapping, Optional, Sequence

from .errors import ConfigError
from .normalize import (
    CanonicalDisease,
    CaseCount,
    CountAttribute,
    CountryCode,
    FIELDS,
    IsoDate,
    values_match,
)


@dataclass(frozen=True)
class ExtractionRecord:
    document_id: str
    extractor_id: str
    disease_raw: Optional[str] = None
    disease: Optional[CanonicalDisease] = None
    country_raw: Optional[str] = None
    country: Optional[CountryCode] = None
    date_raw: Optional[str] = None
    date: Optional[IsoDate] = None
    count_raw: Optional[str] = None
    count: Optional[CaseCount] = None
    parse_failure: bool = False
    truncated_input: bool = False
    field_warnings: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.extractor_id:
            raise ValueError("extractor_id must be non-empty")

    def normalized_value(self, field_name: str):
        if field_name not in FIELDS:
            raise ValueError(f"unknown field {field_name!r}")
        return getattr(self, field_name)

    def raw_value(self, field_name: str) -> Optional[str]:
        if field_name not in FIELDS:
            raise ValueError(f"unknown field {field_name!r}")
        return getattr(self, f"{field_name}_raw")

    def to_json(self) -> dict:
        def field_obj(raw, norm, payload):
            if raw is None and norm is None:
                return None
            obj = {"raw": raw}
            if norm is not None:
                obj.update(payload(norm))
            return obj

        return {
            "document_id": self.document_id,
            "extractor_id": self.extractor_id,
            "disease": field_obj(
                self.disease_raw,
                self.disease,
                lambda d: {"canonical_id": d.canonical_id, "display_name": d.display_name},
            ),
            "country": field_obj(
                self.country_raw,
                self.country,
                lambda c: {"alpha3": c.alpha3, "display_name": c.display_name},
            ),
            "date": field_obj(self.date_raw, self.date, lambda d: {"iso": d.isoformat()}),
            "count": field_obj(
                self.count_raw,
                self.count,
                lambda c: {
                    "value": c.value,
                    "approximate": c.approximate,
                    "attribute": c.attribute.value,
                },
            ),
            "flags": {
                "parse_failure": self.parse_failure,
                "truncated_input": self.truncated_input,
                "field_warnings": list(self.field_warnings),
            },
        }

    @staticmethod
    def from_json(record: Mapping) -> "ExtractionRecord":
        def norm(obj, builder):
            if obj is None:
                return None, None
            return obj.get("raw"), builder(obj)

        disease_raw, disease = norm(
            record.get("disease"),
            lambda o: CanonicalDisease(o["canonical_id"], o["display_name"])
            if "canonical_id" in o
            else None,
        )
        country_raw, country = norm(
            record.get("country"),
            lambda o: CountryCode(o["alpha3"], o["display_name"]) if "alpha3" in o else None,
        )
        date_raw, date_norm = norm(
            record.get("date"),
            lambda o: date.fromisoformat(o["iso"]) if "iso" in o else None,
        )
        count_raw, count = norm(
            record.get("count"),
            lambda o: CaseCount(o["value"], o["approximate"], CountAttribute(o["attribute"]))
            if "value" in o
            else None,
        )
        flags = record.get("flags", {})
        return ExtractionRecord(
            document_id=record["document_id"],
            extractor_id=record["extractor_id"],
            disease_raw=disease_raw,
            disease=disease,
            country_raw=country_raw,
            country=country,
            date_raw=date_raw,
            date=date_norm,
            count_raw=count_raw,
            count=count,
            parse_failure=flags.get("parse_failure", False),
            truncated_input=flags.get("truncated_input", False),
            field_warnings=tuple(flags.get("field_warnings", ())),
        )


class TieBreak(str, Enum):
    PRIORITY_ORDER = "PRIORITY_ORDER"
    ABSTAIN = "ABSTAIN"


@dataclass(frozen=True)
class VotePolicy:
    min_agreement: int = 2
    tie_break: TieBreak = TieBreak.PRIORITY_ORDER
    priority: tuple[str, ...] = ()

    def __post_init__(self):
        if self.min_agreement < 1:
            raise ConfigError("min_agreement must be >= 1")


@dataclass(frozen=True)
class EnsembleConfig:
    ensemble_id: str
    members: tuple[str, ...]
    policy: VotePolicy = field(default_factory=VotePolicy)

    def __post_init__(self):
        if len(self.members) < 2:
            raise ConfigError("an ensemble needs at least 2 members")
        if len(set(self.members)) != len(self.members):
            raise ConfigError("ensemble members must be distinct")
        if self.policy.min_agreement > len(self.members):
            raise ConfigError("min_agreement cannot exceed the member count")
        if self.policy.tie_break is TieBreak.PRIORITY_ORDER:
            missing = set(self.members) - set(self.policy.priority)
            if missing:
                raise ConfigError(f"priority order does not cover members: {sorted(missing)}")


def _winning_group(
    field_name: str,
    candidates: Sequence,
    policy: VotePolicy,
    members: Sequence[str] | None,
) -> list[int] | None:
    """Indices of the winning candidate group, or None when the vote abstains.

    Absent candidates form their own group, so an absence majority wins like
    any value. A winning group must reach min_agreement; among equally large
    maximal groups PRIORITY_ORDER picks the one holding the highest-priority
    member's value, ABSTAIN gives up.
    """
    if members is not None and len(members) != len(candidates):
        raise ConfigError(
            f"{len(candidates)} candidates for {len(members)} members"
        )
    groups: list[tuple[object, list[int]]] = []
    for idx, value in enumerate(candidates):
        for representative, indices in groups:
            if values_match(field_name, value, representative):
                indices.append(idx)
                break
        else:
            groups.append((value, [idx]))

    best_size = max(len(indices) for _, indices in groups)
    if best_size < policy.min_agreement:
        return None
    top = [indices for _, indices in groups if len(indices) == best_size]
    if len(top) == 1:
        return top[0]
    if policy.tie_break is TieBreak.ABSTAIN:
        return None
    if members is not None and policy.priority:
        rank = {member: i for i, member in enumerate(policy.priority)}
        return min(top, key=lambda indices: min(rank[members[i]] for i in indices))
    # No member ids to rank by: candidate position doubles as priority.
    return min(top, key=min)


def vote_field(
    field_name: str,
    candidates: Sequence,
    policy: VotePolicy,
    members: Sequence[str] | None = None,
):
    """Majority vote over one field's candidate values; None means abstain."""
    group = _winning_group(field_name, candidates, policy, members)
    if group is None:
        return None
    return candidates[group[0]]


def ensemble_records(
    records: Sequence[ExtractionRecord], config: EnsembleConfig
) -> ExtractionRecord:
    """Combine one record per member into a single voted record.

    Votes run per field. The winning field's raw and normalized values are
    taken from the highest-priority member inside the winning group.
    """
    by_extractor = {}
    for record in records:
        if record.extractor_id in by_extractor:
            raise ConfigError(f"duplicate record for member {record.extractor_id!r}")
        by_extractor[record.extractor_id] = record
    if set(by_extractor) != set(config.members):
        raise ConfigError(
            f"expected records for {list(config.members)}, got {sorted(by_extractor)}"
        )
    doc_ids = {record.document_id for record in records}
    if len(doc_ids) != 1:
        raise ConfigError(f"records span multiple documents: {sorted(doc_ids)}")

    ordered = [by_extractor[member] for member in config.members]
    if config.policy.priority:
        rank = {member: i for i, member in enumerate(config.policy.priority)}
    else:
        rank = {member: i for i, member in enumerate(config.members)}

    values = {}
    for field_name in FIELDS:
        candidates = [record.normalized_value(field_name) for record in ordered]
        group = _winning_group(field_name, candidates, config.policy, config.members)
        if group is None or candidates[group[0]] is None:
            values[f"{field_name}_raw"] = None
            values[field_name] = None
            continue
        chosen = min(group, key=lambda i: rank[config.members[i]])
        values[f"{field_name}_raw"] = ordered[chosen].raw_value(field_name)
        values[field_name] = ordered[chosen].normalized_value(field_name)

    return ExtractionRecord(
        document_id=records[0].document_id,
        extractor_id=config.ensemble_id,
        **values,
    )
