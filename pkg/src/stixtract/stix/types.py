"""Core STIX-aligned domain types: entity types, indicator subtypes, entities
and relationships.

The eleven entity types mirror the STIX 2.1 domain objects this pipeline
extracts. Their string values double as the answer vocabulary shown to the
typing model, so they must never be reworded.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum


class EntityType(str, Enum):
    """STIX domain-object categories recognised by the pipeline."""

    ATTACK_PATTERN = "ATTACK_PATTERN"
    CAMPAIGN = "CAMPAIGN"
    COURSE_OF_ACTION = "COURSE_OF_ACTION"
    IDENTITY = "IDENTITY"
    INDICATOR = "INDICATOR"
    INFRASTRUCTURE = "INFRASTRUCTURE"
    LOCATION = "LOCATION"
    MALWARE = "MALWARE"
    THREAT_ACTOR = "THREAT_ACTOR"
    TOOL = "TOOL"
    VULNERABILITY = "VULNERABILITY"

    @property
    def stix_type(self) -> str:
        """Lowercase hyphenated STIX object type, e.g. ``threat-actor``."""
        return self.value.lower().replace("_", "-")

    @classmethod
    def from_stix_type(cls, stix_type: str) -> "EntityType":
        return cls(stix_type.upper().replace("-", "_"))


class IndicatorSubtype(str, Enum):
    """Cyber-observable classes an INDICATOR entity can carry.

    Every INDICATOR has exactly one subtype; no other entity type has one.
    """

    DIRECTORY = "DIRECTORY"
    DOMAIN_NAME = "DOMAIN_NAME"
    EMAIL_ADDR = "EMAIL_ADDR"
    FILE_HASH_MD5 = "FILE_HASH_MD5"
    FILE_HASH_SHA1 = "FILE_HASH_SHA1"
    FILE_HASH_SHA256 = "FILE_HASH_SHA256"
    FILE_NAME = "FILE_NAME"
    FILE_PATH = "FILE_PATH"
    IPV4_ADDR = "IPV4_ADDR"
    IPV6_ADDR = "IPV6_ADDR"
    MAC_ADDR = "MAC_ADDR"
    URL = "URL"
    WINDOWS_REGISTRY_KEY = "WINDOWS_REGISTRY_KEY"
    MUTEX = "MUTEX"
    AUTONOMOUS_SYSTEM = "AUTONOMOUS_SYSTEM"
    USER_AGENT = "USER_AGENT"


# STIX patterning property used when rendering an indicator's pattern string.
# FILE_PATH keeps the whole path in file:name; path decomposition is out of
# scope for bundle output.
_PATTERN_PROPERTY = {
    IndicatorSubtype.DIRECTORY: "directory:path",
    IndicatorSubtype.DOMAIN_NAME: "domain-name:value",
    IndicatorSubtype.EMAIL_ADDR: "email-addr:value",
    IndicatorSubtype.FILE_HASH_MD5: "file:hashes.MD5",
    IndicatorSubtype.FILE_HASH_SHA1: "file:hashes.'SHA-1'",
    IndicatorSubtype.FILE_HASH_SHA256: "file:hashes.'SHA-256'",
    IndicatorSubtype.FILE_NAME: "file:name",
    IndicatorSubtype.FILE_PATH: "file:name",
    IndicatorSubtype.IPV4_ADDR: "ipv4-addr:value",
    IndicatorSubtype.IPV6_ADDR: "ipv6-addr:value",
    IndicatorSubtype.MAC_ADDR: "mac-addr:value",
    IndicatorSubtype.URL: "url:value",
    IndicatorSubtype.WINDOWS_REGISTRY_KEY: "windows-registry-key:key",
    IndicatorSubtype.MUTEX: "mutex:name",
    IndicatorSubtype.AUTONOMOUS_SYSTEM: "autonomous-system:number",
    IndicatorSubtype.USER_AGENT: (
        "network-traffic:extensions.'http-request-ext'.request_header.'User-Agent'"
    ),
}


def indicator_pattern(subtype: IndicatorSubtype, value: str) -> str:
    """Render a STIX patterning string for an indicator value.

    >>> indicator_pattern(IndicatorSubtype.IPV4_ADDR, "198.51.100.5")
    "[ipv4-addr:value = '198.51.100.5']"
    """
    prop = _PATTERN_PROPERTY[subtype]
    if subtype is IndicatorSubtype.AUTONOMOUS_SYSTEM:
        digits = re.sub(r"(?i)^ASN?", "", value.strip())
        if digits.isdigit():
            return f"[{prop} = {int(digits)}]"
    escaped = value.replace("\\", "\\\\").replace("'", "\\'")
    return f"[{prop} = '{escaped}']"


@dataclass(frozen=True)
class Span:
    """Location of a mention: character range within one passage."""

    passage_id: str
    start: int
    end: int

    def __post_init__(self) -> None:
        if self.start >= self.end:
            raise ValueError(f"empty span [{self.start}, {self.end})")

    def to_dict(self) -> dict:
        return {"passage_id": self.passage_id, "start": self.start, "end": self.end}

    @classmethod
    def from_dict(cls, d: dict) -> "Span":
        return cls(d["passage_id"], d["start"], d["end"])


@dataclass
class Entity:
    """A detected STIX domain object or indicator.

    ``entity_type`` is None between detection and typing. ``origin`` records
    whether the entity came from the detection model, the regex indicator
    extractors, or a reviewer.
    """

    local_id: str
    name: str
    entity_type: EntityType | None = None
    subtype: IndicatorSubtype | None = None
    spans: list[Span] = field(default_factory=list)
    aliases: set[str] = field(default_factory=set)
    origin: str = "model"  # model | regex | review
    flags: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.name = self.name.strip()
        if not self.name:
            raise ValueError("entity name is empty")
        self.check_subtype()

    def check_subtype(self) -> None:
        if self.entity_type is EntityType.INDICATOR and self.subtype is None:
            raise ValueError(f"indicator entity {self.name!r} has no subtype")
        if self.entity_type is not EntityType.INDICATOR and self.subtype is not None:
            raise ValueError(f"non-indicator entity {self.name!r} carries a subtype")

    @property
    def typed(self) -> bool:
        return self.entity_type is not None

    def first_span(self) -> Span | None:
        if not self.spans:
            return None
        return min(self.spans, key=lambda s: (s.passage_id, s.start))

    def to_dict(self) -> dict:
        return {
            "local_id": self.local_id,
            "name": self.name,
            "entity_type": self.entity_type.value if self.entity_type else None,
            "subtype": self.subtype.value if self.subtype else None,
            "spans": [s.to_dict() for s in self.spans],
            "aliases": sorted(self.aliases),
            "origin": self.origin,
            "flags": list(self.flags),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Entity":
        return cls(
            local_id=d["local_id"],
            name=d["name"],
            entity_type=EntityType(d["entity_type"]) if d.get("entity_type") else None,
            subtype=IndicatorSubtype(d["subtype"]) if d.get("subtype") else None,
            spans=[Span.from_dict(s) for s in d.get("spans", [])],
            aliases=set(d.get("aliases", [])),
            origin=d.get("origin", "model"),
            flags=list(d.get("flags", [])),
        )


class ReviewState(str, Enum):
    """Provenance of a relationship with respect to the human review loop."""

    MACHINE = "machine"
    CONFIRMED = "confirmed"
    EDITED = "edited"
    ADDED = "added"


@dataclass
class Relationship:
    """A directed, labelled edge between two entities of one job."""

    rel_id: str
    source_id: str
    target_id: str
    label: str
    provenance: str | None = None  # passage the relation was read from
    review_state: ReviewState = ReviewState.MACHINE

    def __post_init__(self) -> None:
        if self.source_id == self.target_id:
            raise ValueError("relationship endpoints must differ")

    def to_dict(self) -> dict:
        return {
            "rel_id": self.rel_id,
            "source_id": self.source_id,
            "target_id": self.target_id,
            "label": self.label,
            "provenance": self.provenance,
            "review_state": self.review_state.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Relationship":
        return cls(
            rel_id=d["rel_id"],
            source_id=d["source_id"],
            target_id=d["target_id"],
            label=d["label"],
            provenance=d.get("provenance"),
            review_state=ReviewState(d.get("review_state", "machine")),
        )
