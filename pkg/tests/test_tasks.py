import random
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stixtract.ingest import Passage
from stixtract.stix.types import Entity, EntityType, IndicatorSubtype
from stixtract.tasks import (
    InvalidChoice,
    MissingTag,
    PairContext,
    PromptError,
    Relatedness,
    TaskKind,
    TaskRequest,
    TaskResult,
    build_prompt,
    format_result,
    parse_response,
)

DATA = Path(__file__).parent / "data"
DEMO_TEXT = (DATA / "demo_report.txt").read_text(encoding="utf-8").rstrip("\n")

PASSAGE = Passage("p0000", None, DEMO_TEXT, 0, 0)

SERPENT = Entity("e1", "SerpentStealth", EntityType.MALWARE)
UNITED_STATES = Entity("e2", "United States", EntityType.LOCATION)
C2_IP = Entity("e3", "198.51.100.5", EntityType.INDICATOR, IndicatorSubtype.IPV4_ADDR)


def _golden(name: str) -> str:
    # Golden files carry one trailing newline; prompts none.
    return (DATA / "golden" / name).read_text(encoding="utf-8")[:-1]


def test_t1_prompt_matches_golden():
    prompt = build_prompt(TaskRequest(TaskKind.T1_DETECT, PASSAGE))
    assert prompt == _golden("t1_prompt.txt")


def test_t2_prompt_matches_golden():
    prompt = build_prompt(TaskRequest(TaskKind.T2_TYPE, PASSAGE, focus_entity=SERPENT))
    assert prompt == _golden("t2_prompt.txt")
    assert "- Entity: SerpentStealth" in prompt
    assert prompt.count("ATTACK_PATTERN") >= 2  # definition list and answer list


def test_t3_prompt_matches_golden():
    pair = PairContext(SERPENT, UNITED_STATES, ("originates-from", "targets"))
    prompt = build_prompt(TaskRequest(TaskKind.T3_RELATED, PASSAGE, pair=pair))
    assert prompt == _golden("t3_prompt.txt")
    assert "- Possible Relationship Labels: originates-from, targets" in prompt


def test_t4_prompt_matches_golden():
    pair = PairContext(SERPENT, C2_IP, ("communicates-with", "downloads", "drops"))
    prompt = build_prompt(TaskRequest(TaskKind.T4_LABEL, PASSAGE, pair=pair))
    assert prompt == _golden("t4_prompt.txt")


def test_prompt_answer_format_lines_verbatim():
    t1 = build_prompt(TaskRequest(TaskKind.T1_DETECT, PASSAGE))
    assert "SEPARATED BY PIPE" in t1
    t2 = build_prompt(TaskRequest(TaskKind.T2_TYPE, PASSAGE, focus_entity=SERPENT))
    assert "<entity_type> ONE OF STIX ENTITY TYPES </entity_type>" in t2
    pair = PairContext(SERPENT, UNITED_STATES, ("targets",))
    t3 = build_prompt(TaskRequest(TaskKind.T3_RELATED, PASSAGE, pair=pair))
    assert "<related>YES or NO</related>" in t3
    t4 = build_prompt(TaskRequest(TaskKind.T4_LABEL, PASSAGE, pair=pair))
    assert "<label>Your chosen label</label>" in t4


def test_empty_passage_is_missing_slot():
    empty = Passage("p0001", None, "   x", 1, 0)
    object.__setattr__(empty, "text", "   ")
    with pytest.raises(PromptError, match="missing slot"):
        build_prompt(TaskRequest(TaskKind.T1_DETECT, empty))


def test_t2_without_entity_is_missing_slot():
    with pytest.raises(PromptError):
        build_prompt(TaskRequest(TaskKind.T2_TYPE, PASSAGE))


def test_t3_requires_nonempty_labels():
    pair = PairContext(SERPENT, UNITED_STATES, ())
    with pytest.raises(PromptError):
        build_prompt(TaskRequest(TaskKind.T3_RELATED, PASSAGE, pair=pair))


# --- parse_response ----------------------------------------------------------------


def test_t1_simple():
    result = parse_response(TaskKind.T1_DETECT, "<entities>DodgeBox</entities>")
    assert result.entities == ("DodgeBox",)


def test_t1_trims_dedups_case_insensitively():
    result = parse_response(TaskKind.T1_DETECT, "<entities>A|B| |a</entities>")
    assert result.entities == ("A", "B")


def test_t2_uppercases_and_validates():
    result = parse_response(TaskKind.T2_TYPE, "<entity_type> malware </entity_type>")
    assert result.entity_type is EntityType.MALWARE


def test_t2_invalid_choice():
    with pytest.raises(InvalidChoice):
        parse_response(TaskKind.T2_TYPE, "<entity_type>PAYLOAD</entity_type>")


def test_t3_yes_no_not_sure():
    assert (
        parse_response(TaskKind.T3_RELATED, "<related>YES</related>").relatedness
        is Relatedness.RELATED
    )
    assert (
        parse_response(TaskKind.T3_RELATED, "<related>no</related>").relatedness
        is Relatedness.NOT_RELATED
    )
    assert (
        parse_response(TaskKind.T3_RELATED, "<related>not sure</related>").relatedness
        is Relatedness.NOT_SURE
    )
    assert (
        parse_response(TaskKind.T3_RELATED, "<related>is not related to</related>").relatedness
        is Relatedness.NOT_RELATED
    )


def _t4_request(allowed):
    pair = PairContext(SERPENT, UNITED_STATES, tuple(allowed))
    return TaskRequest(TaskKind.T4_LABEL, PASSAGE, pair=pair)


def test_t4_case_and_hyphen_normalization():
    request = _t4_request(["uses", "drops"])
    assert parse_response(TaskKind.T4_LABEL, "<label>Uses</label>", request).label == "uses"
    request = _t4_request(["originates-from", "targets"])
    assert (
        parse_response(TaskKind.T4_LABEL, "<label>originates from</label>", request).label
        == "originates-from"
    )


def test_t4_outside_allowed_set():
    with pytest.raises(InvalidChoice):
        parse_response(TaskKind.T4_LABEL, "<label>exploits</label>", _t4_request(["uses"]))


def test_missing_tag_raises():
    with pytest.raises(MissingTag):
        parse_response(TaskKind.T1_DETECT, "I could not find any entities.")


def test_tolerates_surrounding_chatter():
    raw = "Sure! Based on the passage:\n<entities>DodgeBox|Config</entities>\nLet me know!"
    assert parse_response(TaskKind.T1_DETECT, raw).entities == ("DodgeBox", "Config")


def test_first_tag_pair_wins():
    raw = "<related>YES</related> ... <related>NO</related>"
    assert parse_response(TaskKind.T3_RELATED, raw).relatedness is Relatedness.RELATED


# --- parse . format identity ----------------------------------------------------------


@given(
    st.lists(
        st.text(
            alphabet=st.characters(min_codepoint=33, max_codepoint=126, exclude_characters="|<>"),
            min_size=1,
            max_size=12,
        ).map(str.strip).filter(lambda s: s),
        min_size=0,
        max_size=6,
    )
)
@settings(max_examples=200, deadline=None)
def test_t1_format_parse_identity(names):
    unique = []
    seen = set()
    for name in names:
        if name.casefold() not in seen:
            seen.add(name.casefold())
            unique.append(name)
    result = TaskResult(TaskKind.T1_DETECT, entities=tuple(unique))
    assert parse_response(TaskKind.T1_DETECT, format_result(result)).entities == tuple(unique)


@pytest.mark.parametrize("entity_type", list(EntityType))
def test_t2_format_parse_identity(entity_type):
    result = TaskResult(TaskKind.T2_TYPE, entity_type=entity_type)
    assert parse_response(TaskKind.T2_TYPE, format_result(result)).entity_type is entity_type


@pytest.mark.parametrize("relatedness", list(Relatedness))
def test_t3_format_parse_identity(relatedness):
    result = TaskResult(TaskKind.T3_RELATED, relatedness=relatedness)
    assert parse_response(TaskKind.T3_RELATED, format_result(result)).relatedness is relatedness


def test_t4_format_parse_identity():
    request = _t4_request(["communicates-with", "downloads", "drops"])
    result = TaskResult(TaskKind.T4_LABEL, label="communicates-with")
    assert parse_response(TaskKind.T4_LABEL, format_result(result), request).label == result.label


# --- adversarial wrappers -----------------------------------------------------------


WRAPPERS = [
    "{}",
    "Answer: {}",
    "  {}  trailing prose",
    "prefix\n\n{}\n\nsuffix",
    "<thinking>hmm</thinking>{}ok",
]


def test_t4_always_within_allowed_labels_under_adversarial_wrappers():
    rng = random.Random(5)
    allowed = ("communicates-with", "downloads", "drops")
    request = _t4_request(allowed)
    casings = [str.upper, str.lower, str.title, lambda s: s]
    for _ in range(300):
        label = rng.choice(allowed)
        cased = rng.choice(casings)(label)
        if rng.random() < 0.5:
            cased = cased.replace("-", " ")
        raw = rng.choice(WRAPPERS).format(f"<label>{cased}</label>")
        parsed = parse_response(TaskKind.T4_LABEL, raw, request)
        assert parsed.label in allowed
