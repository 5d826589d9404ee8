from .types import (
    Entity,
    EntityType,
    IndicatorSubtype,
    Relationship,
    ReviewState,
    Span,
    indicator_pattern,
)
from .matrix import (
    CandidatePair,
    RelationshipMatrix,
    default_matrix,
    enumerate_candidate_pairs,
    load_matrix,
    parse_matrix,
)
from .bundle import (
    BundleError,
    BundleMeta,
    DanglingReference,
    MatrixViolation,
    StixBundle,
    Violation,
    build_bundle,
    bundle_from_json,
    bundle_to_json,
    make_stix_id,
    validate_bundle,
)

__all__ = [
    "Entity",
    "EntityType",
    "IndicatorSubtype",
    "Relationship",
    "ReviewState",
    "Span",
    "indicator_pattern",
    "CandidatePair",
    "RelationshipMatrix",
    "default_matrix",
    "enumerate_candidate_pairs",
    "load_matrix",
    "parse_matrix",
    "BundleError",
    "BundleMeta",
    "DanglingReference",
    "MatrixViolation",
    "StixBundle",
    "Violation",
    "build_bundle",
    "bundle_from_json",
    "bundle_to_json",
    "make_stix_id",
    "validate_bundle",
]
