import pytest

from stixtract.stix import (
    Entity,
    EntityType,
    IndicatorSubtype,
    Span,
    default_matrix,
    enumerate_candidate_pairs,
    parse_matrix,
)
from stixtract.stix.matrix import MatrixFormatError


@pytest.fixture(scope="module")
def matrix():
    return default_matrix()


def test_label_vocabulary_has_exactly_38_labels(matrix):
    assert len(matrix.labels) == 38


def test_rule_labels_subset_of_vocabulary(matrix):
    assert {label for _, label, _ in matrix.rules} <= matrix.labels


def test_malware_to_location(matrix):
    assert matrix.allowed_labels(EntityType.MALWARE, EntityType.LOCATION) == {
        "targets",
        "originates-from",
    }


def test_no_location_self_relations(matrix):
    assert matrix.allowed_labels(EntityType.LOCATION, EntityType.LOCATION) == frozenset()


def test_indicator_indicates_malware(matrix):
    assert matrix.allowed_labels(EntityType.INDICATOR, EntityType.MALWARE) == {"indicates"}


def test_matrix_not_symmetric(matrix):
    assert "targets" in matrix.allowed_labels(EntityType.MALWARE, EntityType.LOCATION)
    assert "targets" not in matrix.allowed_labels(EntityType.LOCATION, EntityType.MALWARE)


def test_some_pairs_have_empty_label_sets(matrix):
    empty = [
        (src, tgt)
        for src in EntityType
        for tgt in EntityType
        if not matrix.allowed_labels(src, tgt)
    ]
    assert empty  # e.g. VULNERABILITY has no outgoing relationships
    assert (EntityType.VULNERABILITY, EntityType.MALWARE) in empty


def test_no_indicator_to_indicator_rules(matrix):
    assert matrix.allowed_labels(EntityType.INDICATOR, EntityType.INDICATOR) == frozenset()


def _entity(local_id, name, entity_type, start, subtype=None):
    return Entity(
        local_id=local_id,
        name=name,
        entity_type=entity_type,
        subtype=subtype,
        spans=[Span("p0000", start, start + len(name))],
    )


def test_enumerate_orders_by_span_and_filters_by_matrix(matrix):
    malware = _entity("e1", "M", EntityType.MALWARE, 10)
    location = _entity("e2", "L", EntityType.LOCATION, 50)
    pairs = enumerate_candidate_pairs([location, malware], matrix)
    # malware mention comes first, so the malware->location pair leads
    assert [(p.source_id, p.target_id) for p in pairs] == [("e1", "e2")]
    assert pairs[0].labels == ("originates-from", "targets")


def test_enumerate_empty_input():
    assert enumerate_candidate_pairs([]) == []


def test_enumerate_two_indicators_yield_nothing(matrix):
    one = _entity("e1", "1.2.3.4", EntityType.INDICATOR, 0, IndicatorSubtype.IPV4_ADDR)
    two = _entity("e2", "5.6.7.8", EntityType.INDICATOR, 20, IndicatorSubtype.IPV4_ADDR)
    assert enumerate_candidate_pairs([one, two], matrix) == []


def test_enumerate_rejects_untyped():
    untyped = Entity(local_id="e1", name="mystery")
    with pytest.raises(ValueError, match="untyped"):
        enumerate_candidate_pairs([untyped])


def test_enumerate_matches_brute_force_double_loop(matrix):
    types = [
        EntityType.THREAT_ACTOR,
        EntityType.MALWARE,
        EntityType.LOCATION,
        EntityType.IDENTITY,
        EntityType.INDICATOR,
        EntityType.TOOL,
        EntityType.VULNERABILITY,
    ]
    entities = [
        _entity(
            f"e{i}",
            f"ent{i}",
            t,
            i * 10,
            IndicatorSubtype.IPV4_ADDR if t is EntityType.INDICATOR else None,
        )
        for i, t in enumerate(types)
    ]
    got = {(p.source_id, p.target_id) for p in enumerate_candidate_pairs(entities, matrix)}
    expected = {
        (a.local_id, b.local_id)
        for a in entities
        for b in entities
        if a.local_id != b.local_id and matrix.allowed_labels(a.entity_type, b.entity_type)
    }
    assert got == expected


def test_parse_matrix_rejects_unknown_labels():
    text = "\n".join(["version = 1", "[labels]", "uses", "[rules]", "MALWARE drops TOOL"])
    with pytest.raises(MatrixFormatError, match="missing from vocabulary"):
        parse_matrix(text)


def test_parse_matrix_rejects_bad_rule():
    text = "\n".join(["version = 1", "[labels]", "uses", "[rules]", "MALWARE uses"])
    with pytest.raises(MatrixFormatError, match="expected"):
        parse_matrix(text)
