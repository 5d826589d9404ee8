"""HTTP API hosting the review loop.

Every job mutation goes through the same :class:`Pipeline` methods the CLI
uses; the service adds transport concerns only: JSON bodies, ApiError-shaped
failures, per-job write serialization, idempotency keys and optimistic
version checks.
"""

from __future__ import annotations

import json
import logging
import threading
from collections import defaultdict
from pathlib import Path

from fastapi import FastAPI, Header, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .config import PipelineConfig
from .ingest import IngestError, RawReport, ReportSource, fetch
from .llm import BackendError, LlmClient, ModelConfig, RemoteBackend, load_session
from .pipeline import (
    BackendFault,
    FinalizeBlocked,
    InvalidStage,
    Job,
    Pipeline,
    PipelineError,
    ReviewAction,
    ReviewError,
    Stage,
    UnknownTarget,
    build_matrix,
)
from .scoring import GroundTruth, MatchPolicy, evaluate_predictions, render_report
from .stix.bundle import bundle_from_json, bundle_graph
from .stix.types import EntityType, IndicatorSubtype
from .store import JobStore, StoreError

logger = logging.getLogger(__name__)


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str, details: dict | None = None):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message
        self.details = details or {}

    def response(self) -> JSONResponse:
        return JSONResponse(
            status_code=self.status,
            content={"code": self.code, "message": self.message, "details": self.details},
        )


def _to_api_error(exc: Exception) -> ApiError:
    if isinstance(exc, ApiError):
        return exc
    if isinstance(exc, StoreError):
        return ApiError(404, "not_found", str(exc))
    if isinstance(exc, (InvalidStage,)):
        return ApiError(409, "invalid_stage", str(exc))
    if isinstance(exc, UnknownTarget):
        return ApiError(400, "bad_request", str(exc))
    if isinstance(exc, (ReviewError, FinalizeBlocked)):
        return ApiError(422, "validation_failed", str(exc))
    if isinstance(exc, (BackendFault, BackendError)):
        return ApiError(502, "backend_fault", str(exc))
    if isinstance(exc, (IngestError, PipelineError, ValueError)):
        return ApiError(400, "bad_request", str(exc))
    logger.exception("unhandled service error")
    return ApiError(500, "backend_fault", f"internal error: {exc}")


class JobCreateBody(BaseModel):
    url: str | None = None
    text: str | None = None
    html: str | None = None
    config: dict = {}


class ReviewBody(BaseModel):
    actions: list[dict] = []
    complete: bool = True
    version: int | None = None


class AdvanceBody(BaseModel):
    version: int | None = None


class EvalBody(BaseModel):
    predictions: dict
    gold: dict
    policy: str = "normalized"
    model_only: bool = False


class ServiceState:
    def __init__(self, jobs_dir: str | Path, config: PipelineConfig, client: LlmClient | None):
        self.store = JobStore(jobs_dir)
        self.config = config
        self.pipeline = Pipeline(self.store, build_matrix(config))
        self.client = client
        self.locks: dict[str, threading.Lock] = defaultdict(threading.Lock)
        self.idempotency: dict[tuple[str, str], tuple[int, dict]] = {}
        self.idempotency_lock = threading.Lock()


def build_client(config: PipelineConfig, backend: str, replay_store: str | None) -> LlmClient:
    if backend == "replay":
        if not replay_store:
            raise ValueError("replay backend requires a replay store path")
        return LlmClient(load_session(replay_store), config.model)
    if backend == "remote":
        return LlmClient(RemoteBackend(config.model), config.model)
    raise ValueError(f"unknown backend {backend!r}")


def _stage_items(job: Job, stage: Stage, matrix) -> dict:
    """Reviewable items for a stage, with everything the UI needs embedded:
    option lists always come from the server, never from the client."""
    base = {
        "job_id": job.job_id,
        "stage": stage.value,
        "version": job.version,
        "entity_type_options": [t.value for t in EntityType],
        "subtype_options": [s.value for s in IndicatorSubtype],
    }
    entities_by_id = {e.local_id: e for e in job.entities}
    if stage in (Stage.T1_DONE, Stage.T1_REVIEWED, Stage.T2_DONE, Stage.T2_REVIEWED):
        base["kind"] = "entities"
        base["items"] = [e.to_dict() for e in job.entities]
        return base
    if stage in (Stage.T3_DONE, Stage.T3_REVIEWED):
        base["kind"] = "pairs"
        base["items"] = [
            {
                **pair.to_dict(),
                "source_name": entities_by_id[pair.source_id].name,
                "target_name": entities_by_id[pair.target_id].name,
                "allowed_labels": list(pair.labels),
            }
            for pair in job.pairs
        ]
        return base
    if stage in (Stage.T4_DONE, Stage.T4_REVIEWED, Stage.FINALIZED):
        base["kind"] = "relationships"
        base["items"] = [
            {
                **rel.to_dict(),
                "source_name": entities_by_id[rel.source_id].name,
                "target_name": entities_by_id[rel.target_id].name,
                "allowed_labels": sorted(
                    matrix.allowed_labels(
                        entities_by_id[rel.source_id].entity_type,
                        entities_by_id[rel.target_id].entity_type,
                    )
                ),
            }
            for rel in job.relationships
        ]
        return base
    base["kind"] = "none"
    base["items"] = []
    return base


def create_app(
    jobs_dir: str | Path = "stixtract-jobs",
    config: PipelineConfig | None = None,
    client: LlmClient | None = None,
) -> FastAPI:
    state = ServiceState(jobs_dir, config or PipelineConfig(), client)
    app = FastAPI(title="stixtract", version="0.1.0")
    app.state.service = state

    @app.exception_handler(Exception)
    async def handle_error(request: Request, exc: Exception):
        return _to_api_error(exc).response()

    @app.exception_handler(RequestValidationError)
    async def handle_validation(request: Request, exc: RequestValidationError):
        return ApiError(400, "bad_request", "invalid request body", {"errors": exc.errors()}).response()

    def load(job_id: str) -> Job:
        return state.pipeline.load_job(job_id)

    def check_version(job: Job, expected: int | None) -> None:
        if expected is not None and expected != job.version:
            raise ApiError(
                409,
                "bad_request",
                f"stale job version {expected}, current is {job.version}; refetch",
            )

    def idempotent(key: str | None, route: str, compute):
        if not key:
            status, body = compute()
            return JSONResponse(status_code=status, content=body)
        cache_key = (route, key)
        with state.idempotency_lock:
            if cache_key in state.idempotency:
                status, body = state.idempotency[cache_key]
                return JSONResponse(status_code=status, content=body)
        status, body = compute()
        with state.idempotency_lock:
            state.idempotency[cache_key] = (status, body)
        return JSONResponse(status_code=status, content=body)

    @app.get("/meta")
    def meta():
        matrix = state.pipeline.matrix
        return {
            "entity_types": [t.value for t in EntityType],
            "indicator_subtypes": [s.value for s in IndicatorSubtype],
            "relationship_labels": sorted(matrix.labels),
            "stages": [s.value for s in Stage],
        }

    @app.post("/jobs")
    def create_job(body: JobCreateBody, idempotency_key: str | None = Header(default=None)):
        def compute():
            provided = [v for v in (body.url, body.text, body.html) if v]
            if len(provided) != 1:
                raise ApiError(400, "bad_request", "provide exactly one of url, text, html")
            job_config = (
                PipelineConfig.from_dict({**state.config.to_dict(), **body.config})
                if body.config
                else state.config
            )
            if body.url:
                raw = fetch(body.url)
            elif body.html:
                raw = RawReport(ReportSource.HTML, body.html.encode("utf-8"))
            else:
                raw = RawReport(ReportSource.TEXT, body.text.encode("utf-8"))
            job = state.pipeline.create_job(raw, job_config, source=body.url or "inline")
            return 201, {"job_id": job.job_id, "stage": job.stage.value, "version": job.version}

        return idempotent(idempotency_key, "POST /jobs", compute)

    @app.get("/jobs/{job_id}")
    def get_job(job_id: str):
        return load(job_id).summary()

    @app.get("/jobs/{job_id}/passages")
    def get_passages(job_id: str):
        job = load(job_id)
        return {"job_id": job_id, "passages": [p.to_dict() for p in job.passages]}

    @app.get("/jobs/{job_id}/audit")
    def get_audit(job_id: str):
        job = load(job_id)
        return {"job_id": job_id, "audit": job.audit}

    @app.get("/jobs/{job_id}/stage/{stage}/items")
    def get_stage_items(job_id: str, stage: str):
        job = load(job_id)
        if stage == "current":
            requested = job.stage
        else:
            try:
                requested = Stage(stage)
            except ValueError:
                raise ApiError(400, "bad_request", f"unknown stage {stage!r}") from None
        return _stage_items(job, requested, state.pipeline.matrix)

    @app.post("/jobs/{job_id}/review")
    def post_review(
        job_id: str, body: ReviewBody, idempotency_key: str | None = Header(default=None)
    ):
        def compute():
            with state.locks[job_id]:
                job = load(job_id)
                check_version(job, body.version)
                actions = [ReviewAction.from_dict(a) for a in body.actions]
                state.pipeline.apply_review(job, actions, complete=body.complete)
                return 200, job.summary()

        return idempotent(idempotency_key, f"POST /jobs/{job_id}/review", compute)

    @app.post("/jobs/{job_id}/advance")
    def post_advance(
        job_id: str, body: AdvanceBody, idempotency_key: str | None = Header(default=None)
    ):
        def compute():
            with state.locks[job_id]:
                job = load(job_id)
                check_version(job, body.version)
                state.pipeline.advance(job, state.client)
                return 200, job.summary()

        return idempotent(idempotency_key, f"POST /jobs/{job_id}/advance", compute)

    @app.get("/jobs/{job_id}/bundle")
    def get_bundle(job_id: str):
        job = load(job_id)
        if job.stage is not Stage.FINALIZED:
            raise ApiError(409, "invalid_stage", f"job is at {job.stage.value}, not FINALIZED")
        return json.loads(state.store.load_bundle(job_id))

    @app.get("/jobs/{job_id}/graph")
    def get_graph(job_id: str, preview: bool = False):
        job = load(job_id)
        if preview:
            return state.pipeline.graph_view(job)
        if job.stage is not Stage.FINALIZED:
            raise ApiError(
                409, "invalid_stage", "graph requires a finalized job (use ?preview=true)"
            )
        bundle = bundle_from_json(state.store.load_bundle(job_id))
        return bundle_graph(bundle)

    @app.get("/jobs/{job_id}/predictions")
    def get_predictions(job_id: str):
        job = load(job_id)
        return state.pipeline.export_predictions(job)

    @app.post("/eval")
    def post_eval(body: EvalBody):
        gold = GroundTruth(
            passages=body.gold.get("passages", []),
            entities=body.gold.get("entities", []),
            relations=body.gold.get("relations", []),
        )
        policy = MatchPolicy.parse(body.policy)
        results = evaluate_predictions(body.predictions, gold, policy, body.model_only)
        text, artifact = render_report(results, state.config.to_dict())
        artifact["table"] = text
        return artifact

    return app
