"""Job state machine: staged extraction with review gates.

A job moves INGESTED -> T1_DONE -> T1_REVIEWED -> ... -> T4_REVIEWED ->
FINALIZED, strictly forward. Each extraction stage produces artifacts
(entities, candidate pairs, relationships); each review gate lets an analyst
add, delete or alter them before the next stage consumes them. In ``auto``
review mode the gates accept machine output unchanged, which is how
unattended evaluation runs work.

All mutations append events to the job store, so any job can be rebuilt from
its log and every review decision stays auditable.
"""

from __future__ import annotations

import logging
import random
import re
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum

from .config import PipelineConfig
from .ingest import CleanReport, Passage, RawReport, clean_report_from_raw, split_sections
from .ioc import IocMatch, extract_iocs
from .llm import BackendError, LlmClient
from .stix.bundle import BundleMeta, StixBundle, build_bundle, bundle_to_json, validate_bundle
from .stix.matrix import RelationshipMatrix, default_matrix, enumerate_candidate_pairs, load_matrix
from .stix.types import Entity, EntityType, IndicatorSubtype, Relationship, ReviewState, Span
from .store import JobStore
from .tasks import (
    InvalidChoice,
    MissingTag,
    PairContext,
    ParseError,
    Relatedness,
    TaskKind,
    TaskRequest,
    build_prompt,
    parse_response,
)
from .textnorm import normalize_name, similarity

logger = logging.getLogger(__name__)


class Stage(str, Enum):
    INGESTED = "INGESTED"
    T1_DONE = "T1_DONE"
    T1_REVIEWED = "T1_REVIEWED"
    T2_DONE = "T2_DONE"
    T2_REVIEWED = "T2_REVIEWED"
    T3_DONE = "T3_DONE"
    T3_REVIEWED = "T3_REVIEWED"
    T4_DONE = "T4_DONE"
    T4_REVIEWED = "T4_REVIEWED"
    FINALIZED = "FINALIZED"

    @property
    def rank(self) -> int:
        return STAGE_ORDER.index(self)

    @property
    def is_review_gate(self) -> bool:
        return self.value.endswith("_DONE")


STAGE_ORDER = list(Stage)


class PipelineError(Exception):
    pass


class InvalidStage(PipelineError):
    pass


class ReviewError(PipelineError):
    pass


class UnknownTarget(ReviewError):
    """Review action references an entity/pair/relationship that does not
    exist (distinct from a semantically invalid edit)."""


class FinalizeBlocked(PipelineError):
    def __init__(self, blockers: list[str]):
        super().__init__("finalization blocked: " + "; ".join(blockers))
        self.blockers = blockers


class BackendFault(PipelineError):
    pass


@dataclass
class ReviewAction:
    """One analyst edit. ``kind`` is add/delete/alter; ``target`` names the
    entity, pair or relationship being touched (absent for add)."""

    kind: str
    target: str | None = None
    payload: dict = field(default_factory=dict)
    actor: str = "analyst"

    def __post_init__(self) -> None:
        if self.kind not in ("add", "delete", "alter"):
            raise ReviewError(f"unknown review action kind {self.kind!r}")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "target": self.target, "payload": self.payload, "actor": self.actor}

    @classmethod
    def from_dict(cls, d: dict) -> "ReviewAction":
        return cls(
            kind=d["kind"],
            target=d.get("target"),
            payload=dict(d.get("payload", {})),
            actor=d.get("actor", "analyst"),
        )


class Verdict(str, Enum):
    PENDING = "pending"
    RELATED = "related"
    NOT_RELATED = "not_related"
    SKIPPED = "skipped"  # endpoints never co-occur in a passage
    FAULTED = "faulted"


@dataclass
class PairState:
    pair_id: str
    source_id: str
    target_id: str
    labels: tuple[str, ...]
    passage_id: str | None  # shared context passage; None when skipped
    verdict: Verdict = Verdict.PENDING
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "pair_id": self.pair_id,
            "source_id": self.source_id,
            "target_id": self.target_id,
            "labels": list(self.labels),
            "passage_id": self.passage_id,
            "verdict": self.verdict.value,
            "flags": list(self.flags),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PairState":
        return cls(
            pair_id=d["pair_id"],
            source_id=d["source_id"],
            target_id=d["target_id"],
            labels=tuple(d["labels"]),
            passage_id=d.get("passage_id"),
            verdict=Verdict(d.get("verdict", "pending")),
            flags=list(d.get("flags", [])),
        )


@dataclass
class Job:
    job_id: str
    source: str
    config: PipelineConfig
    passages: list[Passage]
    entities: list[Entity] = field(default_factory=list)
    pairs: list[PairState] = field(default_factory=list)
    relationships: list[Relationship] = field(default_factory=list)
    stage: Stage = Stage.INGESTED
    audit: list[dict] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)
    version: int = 0

    def entity(self, local_id: str) -> Entity:
        for entity in self.entities:
            if entity.local_id == local_id:
                return entity
        raise UnknownTarget(f"unknown entity {local_id}")

    def pair(self, pair_id: str) -> PairState:
        for pair in self.pairs:
            if pair.pair_id == pair_id:
                return pair
        raise UnknownTarget(f"unknown pair {pair_id}")

    def relationship(self, rel_id: str) -> Relationship:
        for rel in self.relationships:
            if rel.rel_id == rel_id:
                return rel
        raise UnknownTarget(f"unknown relationship {rel_id}")

    def passage(self, passage_id: str) -> Passage:
        for passage in self.passages:
            if passage.passage_id == passage_id:
                return passage
        raise PipelineError(f"unknown passage {passage_id}")

    def next_id(self, prefix: str) -> str:
        existing = {
            "e": [e.local_id for e in self.entities],
            "c": [p.pair_id for p in self.pairs],
            "r": [r.rel_id for r in self.relationships],
        }[prefix]
        highest = 0
        for token in existing:
            match = re.fullmatch(rf"{prefix}(\d+)", token)
            if match:
                highest = max(highest, int(match.group(1)))
        return f"{prefix}{highest + 1:04d}"

    def untyped_entities(self) -> list[Entity]:
        return [e for e in self.entities if not e.typed]

    def artifacts_snapshot(self) -> dict:
        return {
            "entities": [e.to_dict() for e in self.entities],
            "pairs": [p.to_dict() for p in self.pairs],
            "relationships": [r.to_dict() for r in self.relationships],
            "flags": list(self.flags),
        }

    def summary(self) -> dict:
        return {
            "job_id": self.job_id,
            "source": self.source,
            "stage": self.stage.value,
            "review_mode": self.config.review_mode,
            "passages": len(self.passages),
            "entities": len(self.entities),
            "pairs": len(self.pairs),
            "relationships": len(self.relationships),
            "flags": list(self.flags),
            "version": self.version,
        }


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _audit_entry(event: dict) -> dict:
    return {
        "event": event.get("event"),
        "stage": event.get("stage"),
        "at": event.get("at"),
        "detail": event.get("detail"),
        "actions": event.get("actions"),
    }


# --- entity resolution --------------------------------------------------------


def _alias_lookup(alias_map: dict[str, list[str]]) -> dict[str, str]:
    lookup: dict[str, str] = {}
    for canonical, aliases in alias_map.items():
        lookup[normalize_name(canonical)] = canonical
        for alias in aliases:
            lookup[normalize_name(alias)] = canonical
    return lookup


def resolve_entities(
    entities: list[Entity],
    alias_map: dict[str, list[str]] | None = None,
    threshold: float = 0.90,
) -> list[Entity]:
    """Merge duplicate mentions into canonical entities.

    Merge conditions: case-insensitive name equality, a shared canonical name
    in the analyst-supplied alias map, or name similarity at or above the
    threshold (the latter flags the merge for review). The merged entity
    keeps the first-seen id, the union of spans and aliases, and the earliest
    assigned type; conflicting types are flagged instead of silently chosen.
    """
    alias_map = alias_map or {}
    lookup = _alias_lookup(alias_map)
    merged: list[Entity] = []

    def canonical_name(name: str) -> str:
        return lookup.get(normalize_name(name), name)

    def find_home(name: str) -> Entity | None:
        wanted = normalize_name(canonical_name(name))
        for candidate in merged:
            known = {candidate.name, *candidate.aliases}
            if any(normalize_name(canonical_name(k)) == wanted for k in known):
                return candidate
        for candidate in merged:
            if similarity(candidate.name, name) >= threshold:
                if "fuzzy-merge" not in candidate.flags:
                    candidate.flags.append("fuzzy-merge")
                return candidate
        return None

    for entity in entities:
        home = find_home(entity.name)
        if home is None:
            resolved_name = canonical_name(entity.name)
            if resolved_name != entity.name:
                entity.aliases.add(entity.name)
                entity.name = resolved_name
            merged.append(entity)
            continue
        if entity.name != home.name:
            home.aliases.add(entity.name)
        home.aliases |= entity.aliases
        home.aliases.discard(home.name)
        for span in entity.spans:
            if span not in home.spans:
                home.spans.append(span)
        if entity.typed:
            if not home.typed:
                home.entity_type = entity.entity_type
                home.subtype = entity.subtype
                if entity.origin == "regex":
                    home.origin = entity.origin
            elif home.entity_type is not entity.entity_type:
                flag = f"type-conflict:{entity.entity_type.value}"
                if flag not in home.flags:
                    home.flags.append(flag)
    return merged


def _find_spans(passage: Passage, name: str, limit: int = 20) -> list[Span]:
    spans = []
    haystack = passage.text.casefold()
    needle = name.casefold()
    start = 0
    while len(spans) < limit:
        index = haystack.find(needle, start)
        if index < 0:
            break
        spans.append(Span(passage.passage_id, index, index + len(name)))
        start = index + 1
    return spans


def _entity_from_ioc(local_id: str, match: IocMatch, passage: Passage) -> Entity:
    if isinstance(match.kind, IndicatorSubtype):
        entity_type, subtype = EntityType.INDICATOR, match.kind
    else:
        entity_type, subtype = match.kind, None
    flags = ["low-confidence"] if match.low_confidence else []
    return Entity(
        local_id=local_id,
        name=match.value,
        entity_type=entity_type,
        subtype=subtype,
        spans=[Span(passage.passage_id, *match.span)],
        origin="regex",
        flags=flags,
    )


class Pipeline:
    """Runs jobs against a store. A single instance is shared by the CLI and
    the HTTP service so both surfaces mutate jobs through the same code."""

    def __init__(self, store: JobStore, matrix: RelationshipMatrix | None = None):
        self.store = store
        self.matrix = matrix or default_matrix()

    # -- persistence ----------------------------------------------------------

    def _emit(self, job: Job, event: dict) -> None:
        event.setdefault("at", _now())
        event["stage"] = job.stage.value
        event.update(job.artifacts_snapshot())
        self.store.append_event(job.job_id, event)
        job.version += 1
        job.audit.append(_audit_entry(event))

    def load_job(self, job_id: str) -> Job:
        events = self.store.events(job_id)
        job: Job | None = None
        for event in events:
            if event.get("event") == "created":
                job = Job(
                    job_id=event["job_id"],
                    source=event["source"],
                    config=PipelineConfig.from_dict(event["config"]),
                    passages=[Passage.from_dict(p) for p in event["passages"]],
                )
            if job is None:
                raise PipelineError(f"job {job_id} log does not start with a creation record")
            job.entities = [Entity.from_dict(e) for e in event.get("entities", [])]
            job.pairs = [PairState.from_dict(p) for p in event.get("pairs", [])]
            job.relationships = [Relationship.from_dict(r) for r in event.get("relationships", [])]
            job.flags = list(event.get("flags", []))
            job.stage = Stage(event["stage"])
            job.audit.append(_audit_entry(event))
            job.version += 1
        if job is None:
            raise PipelineError(f"job {job_id} has no creation record")
        return job

    # -- job creation ----------------------------------------------------------

    def create_job(
        self,
        report: RawReport | CleanReport,
        config: PipelineConfig,
        source: str | None = None,
        pdf_extractor=None,
    ) -> Job:
        if isinstance(report, RawReport):
            clean = clean_report_from_raw(report, pdf_extractor=pdf_extractor)
            source = source or report.origin or report.source.value
        else:
            clean = report
            source = source or "inline"
        passages = split_sections(clean, config.max_words, config.overlap_words)
        if not passages:
            raise PipelineError("report yielded no passages")
        job = Job(
            job_id=uuid.uuid4().hex[:12],
            source=source,
            config=config,
            passages=passages,
        )
        job.flags.extend(clean.flags)
        creation = {
            "event": "created",
            "job_id": job.job_id,
            "source": job.source,
            "config": config.to_dict(),
            "passages": [p.to_dict() for p in passages],
            "detail": f"{len(passages)} passages",
        }
        self._emit(job, creation)
        return job

    # -- model access ----------------------------------------------------------

    def _ask(self, client: LlmClient, request: TaskRequest, retries: int):
        """Prompt once, retrying the identical prompt on parse failures.
        Returns a TaskResult or the final ParseError."""
        prompt = build_prompt(request)
        last: ParseError | None = None
        for _ in range(retries + 1):
            raw = client.complete(prompt, request.kind)
            try:
                return parse_response(request.kind, raw, request)
            except (MissingTag, InvalidChoice) as exc:
                last = exc
        return last

    def _require_stage(self, job: Job, *allowed: Stage) -> None:
        if job.stage not in allowed:
            raise InvalidStage(
                f"stage is {job.stage.value}; operation requires {'/'.join(s.value for s in allowed)}"
            )

    def _fault(self, job: Job, stage_name: str, error: Exception) -> None:
        flag = f"{stage_name}-backend-fault"
        if flag not in job.flags:
            job.flags.append(flag)
        self._emit(job, {"event": "fault", "detail": f"{stage_name}: {error}"})

    # -- extraction stages -------------------------------------------------------

    def run_t1(self, job: Job, client: LlmClient) -> Job:
        """Detect entities: regex indicator extraction plus the detection
        model, merged through entity resolution."""
        self._require_stage(job, Stage.INGESTED, Stage.T1_DONE)
        raw_entities: list[Entity] = []
        seq = 0
        requests_batch = []
        for passage in job.passages:
            for match in extract_iocs(passage.text):
                seq += 1
                raw_entities.append(_entity_from_ioc(f"e{seq:04d}", match, passage))
            requests_batch.append(
                TaskRequest(
                    TaskKind.T1_DETECT, passage, include_heading=job.config.include_headings
                )
            )

        try:
            for passage, request in zip(job.passages, requests_batch):
                outcome = self._ask(client, request, job.config.parse_retries)
                if isinstance(outcome, ParseError):
                    flag = f"t1-parse-failure:{passage.passage_id}"
                    if flag not in job.flags:
                        job.flags.append(flag)
                    continue
                for name in outcome.entities:
                    seq += 1
                    raw_entities.append(
                        Entity(
                            local_id=f"e{seq:04d}",
                            name=name,
                            spans=_find_spans(passage, name),
                            origin="model",
                        )
                    )
        except BackendError as exc:
            self._fault(job, "t1", exc)
            raise BackendFault(str(exc)) from exc

        job.entities = resolve_entities(
            raw_entities, job.config.alias_map, job.config.fuzzy_threshold
        )
        job.pairs = []
        job.relationships = []
        job.stage = Stage.T1_DONE
        self._emit(job, {"event": "stage_result", "detail": f"{len(job.entities)} entities"})
        return job

    def run_t2(self, job: Job, client: LlmClient) -> Job:
        """Type every untyped entity from its first containing passage."""
        self._require_stage(job, Stage.T1_REVIEWED, Stage.T2_DONE)
        try:
            for entity in job.untyped_entities():
                passage = self._context_passage(job, entity)
                if passage is None:
                    if "no-context" not in entity.flags:
                        entity.flags.append("no-context")
                    passage = job.passages[0]
                request = TaskRequest(
                    TaskKind.T2_TYPE,
                    passage,
                    focus_entity=entity,
                    include_heading=job.config.include_headings,
                )
                outcome = self._ask(client, request, job.config.parse_retries)
                if isinstance(outcome, ParseError):
                    if "untyped" not in entity.flags:
                        entity.flags.append("untyped")
                    continue
                self._assign_type(entity, outcome.entity_type)
        except BackendError as exc:
            self._fault(job, "t2", exc)
            raise BackendFault(str(exc)) from exc

        job.stage = Stage.T2_DONE
        remaining = len(job.untyped_entities())
        self._emit(job, {"event": "stage_result", "detail": f"{remaining} entities left untyped"})
        return job

    def _assign_type(self, entity: Entity, entity_type: EntityType) -> None:
        """Set a model- or reviewer-chosen type, inferring the indicator
        subtype from the regex patterns when needed."""
        if entity_type is EntityType.INDICATOR:
            subtype = self._infer_subtype(entity.name)
            if subtype is None:
                if "indicator-missing-subtype" not in entity.flags:
                    entity.flags.append("indicator-missing-subtype")
                if "untyped" not in entity.flags:
                    entity.flags.append("untyped")
                return
            entity.subtype = subtype
        else:
            entity.subtype = None
        entity.entity_type = entity_type
        entity.flags = [f for f in entity.flags if f not in ("untyped", "indicator-missing-subtype")]

    @staticmethod
    def _infer_subtype(name: str) -> IndicatorSubtype | None:
        for match in extract_iocs(name):
            if isinstance(match.kind, IndicatorSubtype) and match.span == (0, len(name)):
                return match.kind
        return None

    def _context_passage(self, job: Job, entity: Entity) -> Passage | None:
        span = entity.first_span()
        if span is not None:
            return job.passage(span.passage_id)
        for passage in job.passages:
            if entity.name.casefold() in passage.text.casefold():
                return passage
        return None

    def _shared_passage(self, job: Job, source: Entity, target: Entity) -> Passage | None:
        source_pids = {s.passage_id for s in source.spans}
        target_pids = {s.passage_id for s in target.spans}
        shared = source_pids & target_pids
        if not shared:
            return None
        return job.passage(min(shared))

    def run_t3(self, job: Job, client: LlmClient) -> Job:
        """Query relatedness for every matrix-permitted pair whose endpoints
        co-occur in a passage. Pairs without a shared passage are recorded as
        skipped, not queried."""
        self._require_stage(job, Stage.T2_REVIEWED, Stage.T3_DONE)
        blockers = [e.local_id for e in job.untyped_entities()]
        if blockers:
            raise InvalidStage(f"untyped entities block T3: {', '.join(blockers)}")

        if not job.pairs:
            candidates = enumerate_candidate_pairs(job.entities, self.matrix)
            for candidate in candidates:
                source = job.entity(candidate.source_id)
                target = job.entity(candidate.target_id)
                passage = self._shared_passage(job, source, target)
                job.pairs.append(
                    PairState(
                        pair_id=job.next_id("c"),
                        source_id=candidate.source_id,
                        target_id=candidate.target_id,
                        labels=candidate.labels,
                        passage_id=passage.passage_id if passage else None,
                        verdict=Verdict.PENDING if passage else Verdict.SKIPPED,
                    )
                )

        try:
            for pair in job.pairs:
                if pair.verdict is not Verdict.PENDING:
                    continue
                request = TaskRequest(
                    TaskKind.T3_RELATED,
                    job.passage(pair.passage_id),
                    pair=PairContext(
                        job.entity(pair.source_id), job.entity(pair.target_id), pair.labels
                    ),
                    include_heading=job.config.include_headings,
                )
                outcome = self._ask(client, request, job.config.parse_retries)
                if isinstance(outcome, ParseError):
                    pair.verdict = Verdict.FAULTED
                    pair.flags.append("t3-parse-failure")
                    continue
                if outcome.relatedness is Relatedness.RELATED:
                    pair.verdict = Verdict.RELATED
                elif outcome.relatedness is Relatedness.NOT_SURE:
                    pair.verdict = Verdict.NOT_RELATED
                    pair.flags.append("not-sure")
                else:
                    pair.verdict = Verdict.NOT_RELATED
        except BackendError as exc:
            self._fault(job, "t3", exc)
            raise BackendFault(str(exc)) from exc

        related = sum(1 for p in job.pairs if p.verdict is Verdict.RELATED)
        job.stage = Stage.T3_DONE
        self._emit(job, {"event": "stage_result", "detail": f"{related}/{len(job.pairs)} pairs related"})
        return job

    def run_t4(self, job: Job, client: LlmClient) -> Job:
        """Assign one label per related pair, constrained to the matrix set."""
        self._require_stage(job, Stage.T3_REVIEWED, Stage.T4_DONE)
        labelled = {(r.source_id, r.target_id) for r in job.relationships}
        try:
            for pair in job.pairs:
                if pair.verdict is not Verdict.RELATED:
                    continue
                if (pair.source_id, pair.target_id) in labelled:
                    continue
                passage = (
                    job.passage(pair.passage_id)
                    if pair.passage_id
                    else self._context_passage(job, job.entity(pair.source_id)) or job.passages[0]
                )
                request = TaskRequest(
                    TaskKind.T4_LABEL,
                    passage,
                    pair=PairContext(
                        job.entity(pair.source_id), job.entity(pair.target_id), pair.labels
                    ),
                    include_heading=job.config.include_headings,
                )
                outcome = self._ask(client, request, job.config.parse_retries)
                if isinstance(outcome, ParseError):
                    pair.flags.append("t4-parse-failure")
                    continue
                job.relationships.append(
                    Relationship(
                        rel_id=job.next_id("r"),
                        source_id=pair.source_id,
                        target_id=pair.target_id,
                        label=outcome.label,
                        provenance=pair.passage_id,
                        review_state=ReviewState.MACHINE,
                    )
                )
        except BackendError as exc:
            self._fault(job, "t4", exc)
            raise BackendFault(str(exc)) from exc

        job.stage = Stage.T4_DONE
        self._emit(
            job, {"event": "stage_result", "detail": f"{len(job.relationships)} relationships"}
        )
        return job

    # -- review ------------------------------------------------------------------

    def apply_review(
        self, job: Job, actions: list[ReviewAction], complete: bool = True, actor: str | None = None
    ) -> Job:
        """Apply analyst edits to the current stage's artifacts; with
        ``complete`` the review gate closes and the stage moves to
        ``*_REVIEWED``."""
        if not job.stage.is_review_gate:
            raise InvalidStage(f"stage {job.stage.value} has no open review gate")
        for action in actions:
            if actor:
                action.actor = actor
            self._apply_action(job, action)
        self._check_referential_integrity(job)
        if complete:
            # A human closing the T4 gate confirms untouched machine output;
            # the automatic gate leaves provenance as machine.
            if job.stage is Stage.T4_DONE and actor != "auto":
                for rel in job.relationships:
                    if rel.review_state is ReviewState.MACHINE:
                        rel.review_state = ReviewState.CONFIRMED
            job.stage = Stage(job.stage.value.replace("_DONE", "_REVIEWED"))
        self._emit(
            job,
            {
                "event": "review",
                "actions": [a.to_dict() for a in actions],
                "detail": f"{len(actions)} actions, complete={complete}",
            },
        )
        return job

    def _apply_action(self, job: Job, action: ReviewAction) -> None:
        if job.stage in (Stage.T1_DONE, Stage.T2_DONE):
            self._entity_action(job, action)
        elif job.stage is Stage.T3_DONE:
            self._pair_action(job, action)
        elif job.stage is Stage.T4_DONE:
            self._relationship_action(job, action)
        else:
            raise InvalidStage(f"no reviewable artifacts at stage {job.stage.value}")

    def _entity_action(self, job: Job, action: ReviewAction) -> None:
        if action.kind == "delete":
            entity = job.entity(self._target(action))
            job.entities.remove(entity)
            self._drop_references(job, entity.local_id)
            return
        if action.kind == "add":
            payload = action.payload
            name = payload.get("name", "").strip()
            if not name:
                raise ReviewError("add entity requires a name")
            entity = Entity(local_id=job.next_id("e"), name=name, origin="review")
            for passage in job.passages:
                entity.spans.extend(_find_spans(passage, name))
            if payload.get("entity_type"):
                self._alter_type(entity, payload)
            job.entities.append(entity)
            return
        entity = job.entity(self._target(action))
        payload = action.payload
        if "name" in payload:
            new_name = payload["name"].strip()
            if not new_name:
                raise ReviewError("entity name cannot be empty")
            if new_name != entity.name:
                entity.aliases.add(entity.name)
                entity.name = new_name
        if "entity_type" in payload:
            self._alter_type(entity, payload)
            self._drop_references(job, entity.local_id)  # downstream recomputed on next run
        if payload.get("clear_flags"):
            entity.flags = []

    def _alter_type(self, entity: Entity, payload: dict) -> None:
        try:
            entity_type = EntityType(payload["entity_type"])
        except ValueError:
            raise ReviewError(f"unknown entity type {payload['entity_type']!r}") from None
        if entity_type is EntityType.INDICATOR:
            subtype_name = payload.get("subtype")
            subtype = (
                IndicatorSubtype(subtype_name) if subtype_name else self._infer_subtype(entity.name)
            )
            if subtype is None:
                raise ReviewError(
                    f"INDICATOR requires a subtype and none could be inferred for {entity.name!r}"
                )
            entity.entity_type = entity_type
            entity.subtype = subtype
        else:
            entity.entity_type = entity_type
            entity.subtype = None
        entity.flags = [f for f in entity.flags if f not in ("untyped", "indicator-missing-subtype")]

    def _pair_action(self, job: Job, action: ReviewAction) -> None:
        if action.kind == "add":
            source = job.entity(action.payload.get("source_id", ""))
            target = job.entity(action.payload.get("target_id", ""))
            if source.local_id == target.local_id:
                raise ReviewError("pair endpoints must differ")
            labels = self.matrix.allowed_labels(source.entity_type, target.entity_type)
            if not labels:
                raise ReviewError(
                    f"matrix violation: no valid labels from {source.entity_type.value} "
                    f"to {target.entity_type.value}"
                )
            for pair in job.pairs:
                if (pair.source_id, pair.target_id) == (source.local_id, target.local_id):
                    pair.verdict = Verdict.RELATED
                    pair.flags.append("resurrected-by-review")
                    return
            passage = self._shared_passage(job, source, target)
            job.pairs.append(
                PairState(
                    pair_id=job.next_id("c"),
                    source_id=source.local_id,
                    target_id=target.local_id,
                    labels=tuple(sorted(labels)),
                    passage_id=passage.passage_id if passage else None,
                    verdict=Verdict.RELATED,
                    flags=["added-by-review"],
                )
            )
            return
        pair = job.pair(self._target(action))
        if action.kind == "delete":
            pair.verdict = Verdict.NOT_RELATED
            pair.flags.append("rejected-by-review")
            return
        verdict = action.payload.get("verdict")
        if verdict not in (Verdict.RELATED.value, Verdict.NOT_RELATED.value):
            raise ReviewError("pair alter requires verdict related or not_related")
        pair.verdict = Verdict(verdict)
        pair.flags = [f for f in pair.flags if f != "not-sure"]

    def _relationship_action(self, job: Job, action: ReviewAction) -> None:
        if action.kind == "add":
            payload = action.payload
            source = job.entity(payload.get("source_id", ""))
            target = job.entity(payload.get("target_id", ""))
            label = payload.get("label", "")
            allowed = self.matrix.allowed_labels(source.entity_type, target.entity_type)
            if label not in allowed:
                raise ReviewError(
                    f"matrix violation: ({source.entity_type.value}, {label}, "
                    f"{target.entity_type.value}) is not permitted; allowed: {sorted(allowed) or 'none'}"
                )
            passage = self._shared_passage(job, source, target)
            job.relationships.append(
                Relationship(
                    rel_id=job.next_id("r"),
                    source_id=source.local_id,
                    target_id=target.local_id,
                    label=label,
                    provenance=passage.passage_id if passage else None,
                    review_state=ReviewState.ADDED,
                )
            )
            return
        rel = job.relationship(self._target(action))
        if action.kind == "delete":
            job.relationships.remove(rel)
            return
        label = action.payload.get("label", "")
        source, target = job.entity(rel.source_id), job.entity(rel.target_id)
        allowed = self.matrix.allowed_labels(source.entity_type, target.entity_type)
        if label not in allowed:
            raise ReviewError(
                f"matrix violation: label {label!r} not allowed for this pair; "
                f"allowed: {sorted(allowed)}"
            )
        rel.label = label
        rel.review_state = ReviewState.EDITED

    @staticmethod
    def _target(action: ReviewAction) -> str:
        if not action.target:
            raise UnknownTarget(f"{action.kind} action requires a target")
        return action.target

    def _drop_references(self, job: Job, local_id: str) -> None:
        job.pairs = [p for p in job.pairs if local_id not in (p.source_id, p.target_id)]
        job.relationships = [
            r for r in job.relationships if local_id not in (r.source_id, r.target_id)
        ]

    def _check_referential_integrity(self, job: Job) -> None:
        known = {e.local_id for e in job.entities}
        for pair in job.pairs:
            if pair.source_id not in known or pair.target_id not in known:
                raise ReviewError(f"pair {pair.pair_id} references a deleted entity")
        for rel in job.relationships:
            if rel.source_id not in known or rel.target_id not in known:
                raise ReviewError(f"relationship {rel.rel_id} references a deleted entity")

    # -- advancement ----------------------------------------------------------------

    def advance(self, job: Job, client: LlmClient | None = None) -> Job:
        """Run the next step of the state machine. At a review gate, gated
        jobs refuse to move until a review is submitted; auto jobs accept the
        machine output and continue."""
        if job.stage is Stage.FINALIZED:
            raise InvalidStage("job is already finalized")
        if job.stage.is_review_gate:
            if job.config.review_mode != "auto":
                raise InvalidStage(
                    f"stage {job.stage.value} requires review before advancing (gated mode)"
                )
            self.apply_review(job, [], complete=True, actor="auto")
            return job

        runners = {
            Stage.INGESTED: self.run_t1,
            Stage.T1_REVIEWED: self.run_t2,
            Stage.T2_REVIEWED: self.run_t3,
            Stage.T3_REVIEWED: self.run_t4,
        }
        if job.stage in runners:
            if client is None:
                raise PipelineError(f"advancing from {job.stage.value} requires a model client")
            return runners[job.stage](job, client)
        if job.stage is Stage.T4_REVIEWED:
            self.finalize(job)
            return job
        raise InvalidStage(f"cannot advance from {job.stage.value}")

    def run_until_gate(self, job: Job, client: LlmClient) -> Job:
        """Advance until the next gated review stop, or to FINALIZED in auto
        mode."""
        while job.stage is not Stage.FINALIZED:
            if job.stage.is_review_gate and job.config.review_mode != "auto":
                break
            self.advance(job, client)
        return job

    # -- finalization ----------------------------------------------------------------

    def finalize(self, job: Job) -> StixBundle:
        """Build, validate and persist the STIX bundle for a fully reviewed
        job."""
        self._require_stage(job, Stage.T4_REVIEWED)
        blockers = [
            f"entity {e.local_id} ({e.name!r}) is untyped" for e in job.untyped_entities()
        ]
        blockers += [
            f"entity {e.local_id} has unresolved flags: {e.flags}"
            for e in job.entities
            if any(f.startswith("type-conflict") for f in e.flags)
        ]
        if blockers:
            raise FinalizeBlocked(blockers)

        rng = random.Random(job.config.seed) if job.config.seed is not None else None
        meta = BundleMeta(created=job.config.created_at(), source=job.source, rng=rng)
        bundle = build_bundle(job.entities, job.relationships, meta, self.matrix)
        violations = validate_bundle(bundle, self.matrix)
        if violations:
            raise FinalizeBlocked([f"{v.object_id}: {v.rule}" for v in violations])
        bundle_json = bundle_to_json(bundle)
        path = self.store.save_bundle(job.job_id, bundle_json)
        job.stage = Stage.FINALIZED
        self._emit(job, {"event": "finalized", "detail": str(path)})
        return bundle

    # -- exports ----------------------------------------------------------------------

    def export_predictions(self, job: Job) -> dict:
        """Per-task prediction artifact in the shape the scorer consumes."""
        t1: dict[str, list[dict]] = {p.passage_id: [] for p in job.passages}
        t2: list[dict] = []
        for entity in job.entities:
            pids = sorted({span.passage_id for span in entity.spans})
            for pid in pids:
                t1[pid].append({"name": entity.name, "origin": entity.origin})
            if entity.typed and pids:
                t2.append(
                    {
                        "passage_id": pids[0],
                        "name": entity.name,
                        "entity_type": entity.entity_type.value,
                        "origin": entity.origin,
                    }
                )
        t3 = [
            {
                "passage_id": pair.passage_id,
                "source": job.entity(pair.source_id).name,
                "target": job.entity(pair.target_id).name,
            }
            for pair in job.pairs
            if pair.verdict is Verdict.RELATED and pair.passage_id
        ]
        t4 = [
            {
                "passage_id": rel.provenance,
                "source": job.entity(rel.source_id).name,
                "target": job.entity(rel.target_id).name,
                "label": rel.label,
            }
            for rel in job.relationships
        ]
        return {"job_id": job.job_id, "t1": t1, "t2": t2, "t3": t3, "t4": t4}

    def graph_view(self, job: Job) -> dict:
        """Nodes/edges projection for the UI graph renderer."""
        nodes = [
            {
                "id": e.local_id,
                "name": e.name,
                "entity_type": e.entity_type.value if e.typed else None,
                "subtype": e.subtype.value if e.subtype else None,
            }
            for e in job.entities
        ]
        edges = [
            {
                "source": r.source_id,
                "target": r.target_id,
                "label": r.label,
                "review_state": r.review_state.value,
            }
            for r in job.relationships
        ]
        return {"job_id": job.job_id, "stage": job.stage.value, "nodes": nodes, "edges": edges}


def build_matrix(config: PipelineConfig) -> RelationshipMatrix:
    if config.matrix_path:
        return load_matrix(config.matrix_path)
    return default_matrix()
