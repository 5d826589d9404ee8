"""Prompt construction and response parsing for the four extraction tasks.

The templates are frozen verbatim: the answer-format lines are what the
task models were conditioned on, so a byte changed here is a silent recall
drop in production. Checked-in golden files pin the exact output.

Task summary:
  T1 detect every entity name in a passage (pipe-separated answer),
  T2 assign one of the eleven entity types to a given entity,
  T3 decide whether an entity pair is related (YES/NO answer),
  T4 pick the relationship label for a related pair from the allowed set.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum

from .ingest import Passage
from .stix.types import Entity, EntityType


class TaskKind(str, Enum):
    T1_DETECT = "T1"
    T2_TYPE = "T2"
    T3_RELATED = "T3"
    T4_LABEL = "T4"


class PromptError(ValueError):
    """A required template slot has no value."""


class ParseError(ValueError):
    """Base for retryable response-parsing failures."""


class MissingTag(ParseError):
    pass


class InvalidChoice(ParseError):
    pass


# One definition line per entity type, shown to the models for T1 and T2.
TYPE_DEFINITIONS: dict[EntityType, str] = {
    EntityType.ATTACK_PATTERN: (
        "A type of TTP that describes ways that adversaries attempt to compromise "
        "targets. (e.g., T1051, T1548.001, etc.)"
    ),
    EntityType.CAMPAIGN: (
        "A grouping of adversarial behaviors that describes a set of malicious "
        "activities or attacks (sometimes called waves) that occur over a period "
        "of time against a specific set of targets."
    ),
    EntityType.COURSE_OF_ACTION: (
        "A recommendation from a producer of intelligence to a consumer on the "
        "actions that they might take in response to that intelligence."
    ),
    EntityType.IDENTITY: (
        "Individuals, organizations, or groups (e.g., ACME, Inc.) as well as "
        "classes of individuals, organizations, systems or groups (e.g., the "
        "finance sector)."
    ),
    EntityType.INDICATOR: (
        "Contains a pattern that can be used to detect suspicious or malicious "
        "cyber activity (e.g., IP addresses, domain names, file hashes, URLs, "
        "email addresses, etc.)."
    ),
    EntityType.INFRASTRUCTURE: (
        "Describes any systems, software services and any associated physical or "
        "virtual resources intended to support some purpose (e.g., C2 servers "
        "used as part of an attack, devices or servers that are part of defense, "
        "database servers targeted by an attack, etc.)."
    ),
    EntityType.LOCATION: (
        "Represents a geographic location (e.g., a country, a region, a city, etc.)."
    ),
    EntityType.MALWARE: (
        "A type of TTP that represents malicious code (e.g., a virus, ransomware, "
        "backdoor, etc.)."
    ),
    EntityType.THREAT_ACTOR: (
        "Actual individuals, groups, or organizations believed to be operating "
        "with malicious intent (e.g., APT29, Lazarus Group, etc.)."
    ),
    EntityType.TOOL: (
        "Legitimate software that can be used by threat actors to perform attacks "
        "(e.g., PsExec, Mimikatz, etc.)."
    ),
    EntityType.VULNERABILITY: (
        "A mistake in software that can be directly used by a hacker to gain "
        "access to a system or network (e.g., CVE-2015-1234, etc.)."
    ),
}

TYPE_ANSWER_LIST = ", ".join(f'"{t.value}"' for t in EntityType)


def _definitions_block() -> str:
    return "\n".join(f"- {t.value}: {TYPE_DEFINITIONS[t]}" for t in EntityType)


_T1_TEMPLATE = """# Instruction:
You are a helpful threat intelligence analyst. Your task is to extract all STIX entities mentioned in the input. To help you, here is a list of the possible STIX entity types.
STIX entity types:
{definitions}
Answer in the following format: <entities>LIST OF IDENTIFIED ENTITIES SEPARATED BY PIPE | (e.g., Ent1|Ent2|...|Entn)</entities>
# Input:
- Text Passage: {text}
# Response:"""

_T2_TEMPLATE = """# Instruction:
You are a helpful threat intelligence analyst. Your task is to assign a STIX entity type to the given Entity in the input. To help you, here is a list of the possible STIX entity types.
STIX entity types:
{definitions}
Choose STIX ENTITY TYPE from list of possible answers: [{answers}].Answer in the following format: <entity_type> ONE OF STIX ENTITY TYPES </entity_type>
# Input:
- Entity: {entity}
- Text Passage: {text}
# Response:"""

_T3_TEMPLATE = """# Instruction:
You are a helpful threat intelligence analyst. Your task is to identify if the source entity and the target entity in the provided text passage are semantically related. To help you, we provide all the possible relationship labels between the source and target entities. If any label applies to the relationship, answer YES. Otherwise, answer NO.Answer in the following format: <related>YES or NO</related>
# Input:
- Source Entity: {source} ({source_type})
- Target Entity: {target} ({target_type})
- Possible Relationship Labels: {labels}
- Text Passage: {text}
# Response:"""

_T4_TEMPLATE = """# Instruction:
You are a helpful threat intelligence analyst. Your task is to identify the label of the relationship between the source entity and the target entity in the provided text passage. To help you, we provide all the possible relationship labels between the source and target entities.Answer in the following format: <label>Your chosen label</label>
# Input:
- Source Entity: {source}
- Target Entity: {target}
- Possible Relationship Labels: {labels}
- Text Passage: {text}
# Response:"""


@dataclass(frozen=True)
class PairContext:
    source: Entity
    target: Entity
    allowed_labels: tuple[str, ...]


@dataclass(frozen=True)
class TaskRequest:
    """One prompt-worth of work. ``focus_entity`` is required for T2 and
    ``pair`` (with a nonempty label set) for T3/T4."""

    kind: TaskKind
    passage: Passage
    focus_entity: Entity | None = None
    pair: PairContext | None = None
    include_heading: bool = True


def _require(value, slot: str):
    if value is None or (isinstance(value, str) and not value.strip()):
        raise PromptError(f"missing slot value: {slot}")
    return value


def build_prompt(request: TaskRequest) -> str:
    """Instantiate the task template. Raises :class:`PromptError` when a
    required slot is empty."""
    text = _require(request.passage.prompt_text(request.include_heading), "text passage")
    if request.kind is TaskKind.T1_DETECT:
        return _T1_TEMPLATE.format(definitions=_definitions_block(), text=text)
    if request.kind is TaskKind.T2_TYPE:
        entity = _require(request.focus_entity, "target entity")
        return _T2_TEMPLATE.format(
            definitions=_definitions_block(),
            answers=TYPE_ANSWER_LIST,
            entity=entity.name,
            text=text,
        )
    pair = _require(request.pair, "entity pair")
    if not pair.allowed_labels:
        raise PromptError("missing slot value: relationship labels")
    labels = ", ".join(sorted(pair.allowed_labels))
    if request.kind is TaskKind.T3_RELATED:
        source_type = _require(pair.source.entity_type, "source entity type")
        target_type = _require(pair.target.entity_type, "target entity type")
        return _T3_TEMPLATE.format(
            source=pair.source.name,
            source_type=source_type.value,
            target=pair.target.name,
            target_type=target_type.value,
            labels=labels,
            text=text,
        )
    return _T4_TEMPLATE.format(
        source=pair.source.name,
        target=pair.target.name,
        labels=labels,
        text=text,
    )


class Relatedness(str, Enum):
    RELATED = "RELATED"
    NOT_RELATED = "NOT_RELATED"
    NOT_SURE = "NOT_SURE"


@dataclass(frozen=True)
class TaskResult:
    kind: TaskKind
    entities: tuple[str, ...] = ()  # T1
    entity_type: EntityType | None = None  # T2
    relatedness: Relatedness | None = None  # T3
    label: str | None = None  # T4


_ANSWER_TAGS = {
    TaskKind.T1_DETECT: "entities",
    TaskKind.T2_TYPE: "entity_type",
    TaskKind.T3_RELATED: "related",
    TaskKind.T4_LABEL: "label",
}


def _extract_tag(tag: str, raw: str) -> str:
    match = re.search(rf"<\s*{tag}\s*>(.*?)</\s*{tag}\s*>", raw, re.DOTALL | re.IGNORECASE)
    if not match:
        raise MissingTag(f"no well-formed <{tag}> tag in response")
    return match.group(1).strip()


def _normalize_label(label: str) -> str:
    return re.sub(r"[\s_]+", "-", label.strip().lower())


def parse_response(kind: TaskKind, raw: str, request: TaskRequest | None = None) -> TaskResult:
    """Turn raw model text into a typed result.

    Tolerates prose around the answer tag; raises :class:`MissingTag` or
    :class:`InvalidChoice` (both retryable) instead of guessing.
    """
    payload = _extract_tag(_ANSWER_TAGS[kind], raw)

    if kind is TaskKind.T1_DETECT:
        names: list[str] = []
        seen: set[str] = set()
        for part in payload.split("|"):
            name = part.strip()
            if not name or name.casefold() in seen:
                continue
            seen.add(name.casefold())
            names.append(name)
        return TaskResult(kind, entities=tuple(names))

    if kind is TaskKind.T2_TYPE:
        candidate = re.sub(r"[\s-]+", "_", payload.strip()).upper().strip("_.\"'")
        try:
            entity_type = EntityType(candidate)
        except ValueError:
            raise InvalidChoice(f"{payload!r} is not one of the STIX entity types") from None
        return TaskResult(kind, entity_type=entity_type)

    if kind is TaskKind.T3_RELATED:
        lowered = payload.lower()
        if re.search(r"\bnot[\s_]*sure\b|\bunsure\b", lowered):
            return TaskResult(kind, relatedness=Relatedness.NOT_SURE)
        if re.search(r"\b(?:not related|no)\b", lowered):
            return TaskResult(kind, relatedness=Relatedness.NOT_RELATED)
        if re.search(r"\byes\b|\brelated\b", lowered):
            return TaskResult(kind, relatedness=Relatedness.RELATED)
        raise InvalidChoice(f"{payload!r} is neither YES, NO nor NOT SURE")

    allowed = request.pair.allowed_labels if request and request.pair else ()
    if not allowed:
        raise InvalidChoice("T4 parsing requires the request's allowed label set")
    by_normal = {_normalize_label(label): label for label in allowed}
    normalized = _normalize_label(payload)
    if normalized not in by_normal:
        raise InvalidChoice(f"label {payload!r} not in allowed set {sorted(allowed)}")
    return TaskResult(kind, label=by_normal[normalized])


def format_result(result: TaskResult) -> str:
    """Canonical answer text for a result; the documented format for replay
    stores and backend mocks. ``parse_response(format_result(r)) == r``."""
    if result.kind is TaskKind.T1_DETECT:
        return f"<entities>{'|'.join(result.entities)}</entities>"
    if result.kind is TaskKind.T2_TYPE:
        return f"<entity_type>{result.entity_type.value}</entity_type>"
    if result.kind is TaskKind.T3_RELATED:
        token = {
            Relatedness.RELATED: "YES",
            Relatedness.NOT_RELATED: "NO",
            Relatedness.NOT_SURE: "NOT SURE",
        }[result.relatedness]
        return f"<related>{token}</related>"
    return f"<label>{result.label}</label>"
