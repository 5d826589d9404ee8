"""Relationship matrix: which (source type, label, target type) triples are
valid STIX relationships.

The matrix is the constraint oracle for candidate-pair enumeration, label
assignment and bundle validation. It is loaded once from a human-auditable
data file (``data/relationship_matrix.txt``) and is immutable afterwards.
"""

from __future__ import annotations

import importlib.resources
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

from .types import Entity, EntityType

Rule = tuple[EntityType, str, EntityType]


class MatrixFormatError(ValueError):
    """Raised when a matrix data file cannot be parsed."""


@dataclass(frozen=True)
class RelationshipMatrix:
    """Immutable set of valid relationship triples plus label vocabulary."""

    labels: frozenset[str]
    rules: frozenset[Rule]
    version: str
    stix_version: str

    def __post_init__(self) -> None:
        bad = {label for _, label, _ in self.rules} - self.labels
        if bad:
            raise MatrixFormatError(f"rules use labels missing from vocabulary: {sorted(bad)}")

    def allowed_labels(self, source: EntityType, target: EntityType) -> frozenset[str]:
        """All valid labels for the ordered type pair; empty set if none.

        Total function: never raises for valid EntityType inputs.
        """
        return self._by_pair().get((source, target), frozenset())

    def is_valid(self, source: EntityType, label: str, target: EntityType) -> bool:
        return label in self.allowed_labels(source, target)

    def _by_pair(self) -> dict[tuple[EntityType, EntityType], frozenset[str]]:
        # Cached on the instance; frozen dataclass, so stash via object.__setattr__.
        cache = getattr(self, "_pair_cache", None)
        if cache is None:
            grouped: dict[tuple[EntityType, EntityType], set[str]] = {}
            for src, label, tgt in self.rules:
                grouped.setdefault((src, tgt), set()).add(label)
            cache = {pair: frozenset(labels) for pair, labels in grouped.items()}
            object.__setattr__(self, "_pair_cache", cache)
        return cache


def parse_matrix(text: str) -> RelationshipMatrix:
    """Parse the matrix file format: key = value header lines, a [labels]
    section with one label per line, then [rules] with one
    ``SOURCE label TARGET`` record per line."""
    headers: dict[str, str] = {}
    labels: list[str] = []
    rules: list[Rule] = []
    section = None
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1]
            if section not in ("labels", "rules"):
                raise MatrixFormatError(f"line {lineno}: unknown section {section!r}")
            continue
        if section is None:
            if "=" not in line:
                raise MatrixFormatError(f"line {lineno}: expected 'key = value' header")
            key, _, value = line.partition("=")
            headers[key.strip()] = value.strip()
        elif section == "labels":
            if line in labels:
                raise MatrixFormatError(f"line {lineno}: duplicate label {line!r}")
            labels.append(line)
        else:
            parts = line.split()
            if len(parts) != 3:
                raise MatrixFormatError(f"line {lineno}: expected 'SOURCE label TARGET'")
            try:
                rule = (EntityType(parts[0]), parts[1], EntityType(parts[2]))
            except ValueError as exc:
                raise MatrixFormatError(f"line {lineno}: {exc}") from exc
            rules.append(rule)
    if not labels:
        raise MatrixFormatError("no [labels] section")
    return RelationshipMatrix(
        labels=frozenset(labels),
        rules=frozenset(rules),
        version=headers.get("version", "0"),
        stix_version=headers.get("stix-version", "2.1"),
    )


def load_matrix(path: str | Path) -> RelationshipMatrix:
    return parse_matrix(Path(path).read_text(encoding="utf-8"))


@lru_cache(maxsize=1)
def default_matrix() -> RelationshipMatrix:
    """The embedded matrix shipped with the package."""
    ref = importlib.resources.files("stixtract.stix").joinpath("data/relationship_matrix.txt")
    return parse_matrix(ref.read_text(encoding="utf-8"))


@dataclass(frozen=True)
class CandidatePair:
    """An ordered entity pair that the matrix allows at least one label for."""

    source_id: str
    target_id: str
    labels: tuple[str, ...]  # sorted


def _span_key(entity: Entity, fallback: int) -> tuple:
    span = entity.first_span()
    if span is None:
        # Entities without any text anchor (e.g. reviewer-added) sort last,
        # in insertion order.
        return (1, "", fallback)
    return (0, span.passage_id, span.start, fallback)


def enumerate_candidate_pairs(
    entities: list[Entity], matrix: RelationshipMatrix | None = None
) -> list[CandidatePair]:
    """Every ordered pair of distinct typed entities whose type pair has a
    nonempty label set.

    Order is deterministic: sources by first-mention position (passage, then
    character offset), targets likewise within each source.
    """
    matrix = matrix or default_matrix()
    for entity in entities:
        if not entity.typed:
            raise ValueError(f"entity {entity.local_id} ({entity.name!r}) is untyped")
    ordered = sorted(
        range(len(entities)), key=lambda i: _span_key(entities[i], i)
    )
    pairs: list[CandidatePair] = []
    for i in ordered:
        for j in ordered:
            if i == j:
                continue
            src, tgt = entities[i], entities[j]
            labels = matrix.allowed_labels(src.entity_type, tgt.entity_type)
            if labels:
                pairs.append(
                    CandidatePair(src.local_id, tgt.local_id, tuple(sorted(labels)))
                )
    return pairs
