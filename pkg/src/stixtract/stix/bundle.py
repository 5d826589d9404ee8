"""STIX 2.1 bundle construction, validation and JSON serialization.

Bundles are plain data: a bundle id plus a list of already-serialized object
records (dicts with stable key order). Validation returns violations as data
rather than raising, so a bundle read from disk can be audited wholesale.
"""

from __future__ import annotations

import json
import random
import re
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone

from .matrix import RelationshipMatrix, default_matrix
from .types import Entity, EntityType, Relationship, indicator_pattern

_STIX_TYPE_RE = re.compile(r"^[a-z][a-z0-9-]*$")
_STIX_ID_RE = re.compile(
    r"^(?P<type>[a-z][a-z0-9-]*)--[0-9a-f]{8}-[0-9a-f]{4}-[0-9a-f]{4}-[0-9a-f]{4}-[0-9a-f]{12}$"
)

SPEC_VERSION = "2.1"


class BundleError(ValueError):
    """Raised when a bundle cannot be constructed from the given inputs."""


class DanglingReference(BundleError):
    pass


class MatrixViolation(BundleError):
    pass


def make_stix_id(stix_type: str, rng: random.Random | None = None) -> str:
    """``<stix-type>--<uuid4>``. With ``rng`` the UUID comes from the given
    generator (still version-4 formatted), which is how replayed runs keep
    bundle bytes reproducible; without it the id is fresh randomness."""
    if not stix_type or not _STIX_TYPE_RE.match(stix_type):
        raise ValueError(f"invalid STIX type name: {stix_type!r}")
    if rng is None:
        generated = uuid.uuid4()
    else:
        generated = uuid.UUID(int=rng.getrandbits(128), version=4)
    return f"{stix_type}--{generated}"


def _format_ts(dt: datetime) -> str:
    return dt.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%f")[:-3] + "Z"


@dataclass
class BundleMeta:
    """Construction-time metadata. ``created`` stamps every object; ``rng``
    makes ids deterministic for replayed runs."""

    created: datetime | None = None
    source: str | None = None
    rng: random.Random | None = None


@dataclass
class StixBundle:
    bundle_id: str
    objects: list[dict] = field(default_factory=list)

    def object_ids(self) -> list[str]:
        return [obj.get("id", "") for obj in self.objects]

    def by_id(self) -> dict[str, dict]:
        return {obj["id"]: obj for obj in self.objects if "id" in obj}


def _entity_object(entity: Entity, stix_id: str, ts: str) -> dict:
    obj = {
        "type": entity.entity_type.stix_type,
        "spec_version": SPEC_VERSION,
        "id": stix_id,
        "created": ts,
        "modified": ts,
        "name": entity.name,
    }
    if entity.entity_type is EntityType.INDICATOR:
        obj["pattern"] = indicator_pattern(entity.subtype, entity.name)
        obj["pattern_type"] = "stix"
        obj["valid_from"] = ts
    elif entity.entity_type is EntityType.MALWARE:
        obj["is_family"] = False
    if entity.aliases:
        obj["aliases"] = sorted(entity.aliases)
    return obj


def build_bundle(
    entities: list[Entity],
    relationships: list[Relationship],
    meta: BundleMeta | None = None,
    matrix: RelationshipMatrix | None = None,
) -> StixBundle:
    """One SDO/SCO per entity, one SRO per relationship.

    Every relationship must reference a known entity and carry a label the
    matrix permits for its endpoint types; violations raise rather than
    producing an invalid bundle.
    """
    meta = meta or BundleMeta()
    matrix = matrix or default_matrix()
    ts = _format_ts(meta.created or datetime.now(timezone.utc))

    by_local: dict[str, Entity] = {}
    for entity in entities:
        if not entity.typed:
            raise BundleError(f"entity {entity.local_id} ({entity.name!r}) is untyped")
        entity.check_subtype()
        if entity.local_id in by_local:
            raise BundleError(f"duplicate entity local_id {entity.local_id}")
        by_local[entity.local_id] = entity

    objects: list[dict] = []
    stix_ids: dict[str, str] = {}
    for entity in entities:
        stix_id = make_stix_id(entity.entity_type.stix_type, meta.rng)
        stix_ids[entity.local_id] = stix_id
        objects.append(_entity_object(entity, stix_id, ts))

    for rel in relationships:
        for ref in (rel.source_id, rel.target_id):
            if ref not in by_local:
                raise DanglingReference(f"relationship {rel.rel_id} references unknown entity {ref}")
        src, tgt = by_local[rel.source_id], by_local[rel.target_id]
        allowed = matrix.allowed_labels(src.entity_type, tgt.entity_type)
        if rel.label not in allowed:
            raise MatrixViolation(
                f"({src.entity_type.value}, {rel.label}, {tgt.entity_type.value}) "
                f"is not a valid relationship; allowed: {sorted(allowed) or 'none'}"
            )
        objects.append(
            {
                "type": "relationship",
                "spec_version": SPEC_VERSION,
                "id": make_stix_id("relationship", meta.rng),
                "created": ts,
                "modified": ts,
                "relationship_type": rel.label,
                "source_ref": stix_ids[rel.source_id],
                "target_ref": stix_ids[rel.target_id],
            }
        )

    return StixBundle(bundle_id=make_stix_id("bundle", meta.rng), objects=objects)


@dataclass(frozen=True)
class Violation:
    object_id: str
    rule: str
    message: str

    def to_dict(self) -> dict:
        return {"object_id": self.object_id, "rule": self.rule, "message": self.message}


def validate_bundle(
    bundle: StixBundle, matrix: RelationshipMatrix | None = None
) -> list[Violation]:
    """Audit a bundle against structural invariants and the matrix.

    Returns an empty list iff the bundle is clean; violations are data, not
    exceptions, so arbitrary externally produced bundles can be checked.
    """
    matrix = matrix or default_matrix()
    violations: list[Violation] = []
    seen_ids: set[str] = set()
    types_by_id: dict[str, str] = {}

    def flag(object_id: str, rule: str, message: str) -> None:
        violations.append(Violation(object_id, rule, message))

    if not _STIX_ID_RE.match(bundle.bundle_id or ""):
        flag(bundle.bundle_id or "<missing>", "id-format", "bundle id is not <type>--<uuid>")

    for obj in bundle.objects:
        oid = obj.get("id", "<missing>")
        match = _STIX_ID_RE.match(oid) if isinstance(oid, str) else None
        if not match:
            flag(str(oid), "id-format", "object id is not <type>--<uuid>")
        elif match.group("type") != obj.get("type"):
            flag(oid, "id-type-mismatch", f"id prefix does not match type {obj.get('type')!r}")
        if oid in seen_ids:
            flag(oid, "id-unique", "duplicate object id within bundle")
        seen_ids.add(oid)
        types_by_id[oid] = obj.get("type", "")
        if obj.get("spec_version") != SPEC_VERSION:
            flag(oid, "spec-version", f"spec_version must be {SPEC_VERSION!r}")
        for key in ("created", "modified"):
            if not obj.get(key):
                flag(oid, "timestamps", f"missing {key}")
        if obj.get("type") == "indicator" and not obj.get("pattern"):
            flag(oid, "indicator-pattern", "indicator object has no pattern")

    for obj in bundle.objects:
        if obj.get("type") != "relationship":
            continue
        oid = obj.get("id", "<missing>")
        label = obj.get("relationship_type", "")
        if label not in matrix.labels:
            flag(oid, "label-vocabulary", f"unknown relationship label {label!r}")
        src_ref, tgt_ref = obj.get("source_ref"), obj.get("target_ref")
        unresolved = False
        for ref in (src_ref, tgt_ref):
            if ref not in types_by_id:
                flag(oid, "ref-resolves", f"reference {ref!r} not found in bundle")
                unresolved = True
        if unresolved:
            continue
        if src_ref == tgt_ref:
            flag(oid, "self-reference", "source_ref equals target_ref")
            continue
        try:
            src_type = EntityType.from_stix_type(types_by_id[src_ref])
            tgt_type = EntityType.from_stix_type(types_by_id[tgt_ref])
        except ValueError:
            flag(oid, "endpoint-type", "relationship endpoint has unrecognised type")
            continue
        if label and label in matrix.labels and not matrix.is_valid(src_type, label, tgt_type):
            flag(
                oid,
                "matrix",
                f"({src_type.value}, {label}, {tgt_type.value}) not permitted by the matrix",
            )

    return violations


def bundle_to_json(bundle: StixBundle) -> str:
    """Serialize with stable key order (insertion order of construction)."""
    doc = {"type": "bundle", "id": bundle.bundle_id, "objects": bundle.objects}
    return json.dumps(doc, indent=2, ensure_ascii=False) + "\n"


def bundle_from_json(text: str) -> StixBundle:
    doc = json.loads(text)
    if doc.get("type") != "bundle":
        raise BundleError("document is not a STIX bundle")
    return StixBundle(bundle_id=doc.get("id", ""), objects=list(doc.get("objects", [])))


def bundle_graph(bundle: StixBundle) -> dict:
    """Lossless nodes/edges projection of a bundle for graph rendering."""
    nodes = []
    edges = []
    for obj in bundle.objects:
        if obj.get("type") == "relationship":
            edges.append(
                {
                    "id": obj.get("id"),
                    "source": obj.get("source_ref"),
                    "target": obj.get("target_ref"),
                    "label": obj.get("relationship_type"),
                }
            )
        else:
            nodes.append(
                {
                    "id": obj.get("id"),
                    "name": obj.get("name"),
                    "entity_type": obj.get("type", "").upper().replace("-", "_"),
                    "pattern": obj.get("pattern"),
                }
            )
    return {"bundle_id": bundle.bundle_id, "nodes": nodes, "edges": edges}
