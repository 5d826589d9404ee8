"""Command-line surface.

Subcommands: ingest, run, review, advance, export, eval, serve,
replay-record. Failures print one ApiError-shaped JSON object to stderr and
exit 1; usage errors exit 2.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .config import PipelineConfig
from .ingest import IngestError, RawReport, ReportSource, fetch
from .llm import (
    BackendError,
    LlmClient,
    RemoteBackend,
    load_session,
    record_session,
)
from .pipeline import (
    FinalizeBlocked,
    InvalidStage,
    Pipeline,
    PipelineError,
    ReviewAction,
    ReviewError,
    Stage,
    build_matrix,
)
from .scoring import GroundTruth, MatchPolicy, evaluate_predictions, render_report
from .stix.bundle import bundle_from_json, bundle_graph
from .store import JobStore, StoreError


def _fail(code: str, message: str, exit_code: int = 1):
    sys.stderr.write(json.dumps({"code": code, "message": message, "details": {}}) + "\n")
    raise SystemExit(exit_code)


def _error_code(exc: Exception) -> str:
    if isinstance(exc, StoreError):
        return "not_found"
    if isinstance(exc, InvalidStage):
        return "invalid_stage"
    if isinstance(exc, (ReviewError, FinalizeBlocked)):
        return "validation_failed"
    if isinstance(exc, BackendError):
        return "backend_fault"
    return "bad_request"


def _guard(fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except (PipelineError, BackendError, StoreError, IngestError, ValueError, OSError) as exc:
        _fail(_error_code(exc), str(exc))


def _load_raw(input_spec: str) -> RawReport:
    if input_spec == "-":
        return RawReport(ReportSource.TEXT, sys.stdin.buffer.read(), origin="stdin")
    if input_spec.startswith(("http://", "https://")):
        return fetch(input_spec)
    path = Path(input_spec)
    if not path.exists():
        raise IngestError(f"no such input file: {input_spec}")
    payload = path.read_bytes()
    suffix = path.suffix.lower()
    if suffix in (".html", ".htm"):
        return RawReport(ReportSource.HTML, payload, origin=str(path))
    if suffix == ".pdf":
        return RawReport(ReportSource.PDF, payload, origin=str(path))
    return RawReport(ReportSource.TEXT, payload, origin=str(path))


def _build_config(config_file, **overrides) -> PipelineConfig:
    config = PipelineConfig.from_file(config_file) if config_file else PipelineConfig()
    data = config.to_dict()
    model = data.pop("model")
    for key, value in overrides.items():
        if value is None:
            continue
        if key in ("endpoint", "model_name", "temperature", "top_p"):
            model["endpoint" if key == "endpoint" else key.replace("model_name", "model")] = value
        else:
            data[key] = value
    data["model"] = model
    return PipelineConfig.from_dict(data)


def _build_client(backend: str, store_path, config: PipelineConfig) -> LlmClient:
    if backend == "replay":
        if not store_path:
            _fail("bad_request", "--backend replay requires --store")
        return LlmClient(load_session(store_path), config.model)
    return LlmClient(RemoteBackend(config.model), config.model)


config_options = [
    click.option("--config", "config_file", type=click.Path(exists=True), default=None,
                 help="YAML/JSON config file."),
    click.option("--max-words", type=int, default=None),
    click.option("--overlap-words", type=int, default=None),
    click.option("--review-mode", type=click.Choice(["gated", "auto"]), default=None),
    click.option("--auto-review", is_flag=True, help="Shorthand for --review-mode auto."),
    click.option("--seed", type=int, default=None, help="Seed bundle/object ids for reproducible output."),
    click.option("--clock", default=None, help="Fixed ISO timestamp for bundle objects."),
]

backend_options = [
    click.option("--backend", type=click.Choice(["replay", "remote"]), default="remote"),
    click.option("--store", "store_path", type=click.Path(), default=None,
                 help="Replay store (JSON-lines of recorded exchanges)."),
    click.option("--endpoint", default=None, help="Chat-completions endpoint URL."),
    click.option("--model", "model_name", default=None),
    click.option("--temperature", type=float, default=None),
    click.option("--top-p", "top_p", type=float, default=None),
]


def _apply(options):
    def wrap(fn):
        for option in reversed(options):
            fn = option(fn)
        return fn

    return wrap


@click.group()
def main():
    """Turn threat-analysis reports into reviewed STIX 2.1 bundles."""


@main.command()
@click.option("--input", "input_spec", required=True, help="File path, URL, or - for stdin.")
@_apply(config_options)
@click.option("--out", "out_dir", type=click.Path(), default=None, help="Write passages JSON here.")
def ingest(input_spec, config_file, max_words, overlap_words, review_mode, auto_review, seed, clock, out_dir):
    """Normalize a report and split it into passages."""
    config = _build_config(
        config_file,
        max_words=max_words,
        overlap_words=overlap_words,
        review_mode="auto" if auto_review else review_mode,
        seed=seed,
        clock=clock,
    )
    raw = _guard(_load_raw, input_spec)
    from .ingest import clean_report_from_raw, split_sections

    clean = _guard(clean_report_from_raw, raw)
    passages = _guard(split_sections, clean, config.max_words, config.overlap_words)
    artifact = {"source": raw.origin, "passages": [p.to_dict() for p in passages]}
    output = json.dumps(artifact, indent=2, ensure_ascii=False)
    if out_dir:
        path = Path(out_dir)
        path.mkdir(parents=True, exist_ok=True)
        target = path / "passages.json"
        target.write_text(output + "\n", encoding="utf-8")
        click.echo(str(target))
    else:
        click.echo(output)


@main.command()
@click.option("--input", "input_spec", required=True)
@_apply(backend_options)
@_apply(config_options)
@click.option("--out", "out_dir", type=click.Path(), default="stixtract-jobs")
def run(input_spec, backend, store_path, endpoint, model_name, temperature, top_p,
        config_file, max_words, overlap_words, review_mode, auto_review, seed, clock, out_dir):
    """Create a job and run it to the next review gate (or to completion in
    auto mode)."""
    config = _build_config(
        config_file,
        endpoint=endpoint,
        model_name=model_name,
        temperature=temperature,
        top_p=top_p,
        max_words=max_words,
        overlap_words=overlap_words,
        review_mode="auto" if auto_review else review_mode,
        seed=seed,
        clock=clock,
    )
    raw = _guard(_load_raw, input_spec)
    client = _build_client(backend, store_path, config)
    pipeline = Pipeline(JobStore(out_dir), build_matrix(config))
    job = _guard(pipeline.create_job, raw, config)
    _guard(pipeline.run_until_gate, job, client)
    result = {"job_id": job.job_id, "stage": job.stage.value}
    if job.stage is Stage.FINALIZED:
        result["bundle_path"] = str(pipeline.store.bundle_path(job.job_id))
    click.echo(json.dumps(result, indent=2))


@main.command()
@click.option("--job", "job_id", required=True)
@click.option("--actions", "actions_file", type=click.Path(exists=True), required=True,
              help="JSON list of review actions.")
@click.option("--complete/--no-complete", default=True,
              help="Close the review gate after applying actions.")
@click.option("--actor", default="analyst")
@click.option("--out", "out_dir", type=click.Path(), default="stixtract-jobs")
def review(job_id, actions_file, complete, actor, out_dir):
    """Apply review actions to a job's current stage."""
    pipeline = Pipeline(JobStore(out_dir))
    job = _guard(pipeline.load_job, job_id)
    raw_actions = json.loads(Path(actions_file).read_text(encoding="utf-8"))
    actions = [ReviewAction.from_dict(a) for a in raw_actions]
    _guard(pipeline.apply_review, job, actions, complete, actor)
    click.echo(json.dumps(job.summary(), indent=2))


@main.command()
@click.option("--job", "job_id", required=True)
@_apply(backend_options)
@click.option("--out", "out_dir", type=click.Path(), default="stixtract-jobs")
def advance(job_id, backend, store_path, endpoint, model_name, temperature, top_p, out_dir):
    """Run the next stage of a job."""
    pipeline = Pipeline(JobStore(out_dir))
    job = _guard(pipeline.load_job, job_id)
    config = job.config
    if endpoint or model_name:
        model = config.model
        model.endpoint = endpoint or model.endpoint
        model.model = model_name or model.model
    client = _build_client(backend, store_path, config)
    _guard(pipeline.advance, job, client)
    click.echo(json.dumps(job.summary(), indent=2))


@main.command()
@click.option("--job", "job_id", required=True)
@click.option("--format", "fmt", type=click.Choice(["stix", "graph", "predictions"]), default="stix")
@click.option("--out", "out_dir", type=click.Path(), default="stixtract-jobs")
@click.option("--output", "output_file", type=click.Path(), default=None)
def export(job_id, fmt, out_dir, output_file):
    """Export a job artifact: the STIX bundle, its graph view, or the
    per-task predictions."""
    store = JobStore(out_dir)
    pipeline = Pipeline(store)
    job = _guard(pipeline.load_job, job_id)
    if fmt == "stix":
        if job.stage is not Stage.FINALIZED:
            _fail("invalid_stage", f"job is at {job.stage.value}, not FINALIZED")
        payload = _guard(store.load_bundle, job_id)
    elif fmt == "graph":
        if job.stage is Stage.FINALIZED:
            bundle = bundle_from_json(_guard(store.load_bundle, job_id))
            payload = json.dumps(bundle_graph(bundle), indent=2, ensure_ascii=False) + "\n"
        else:
            payload = json.dumps(pipeline.graph_view(job), indent=2, ensure_ascii=False) + "\n"
    else:
        payload = json.dumps(pipeline.export_predictions(job), indent=2, ensure_ascii=False) + "\n"
    if output_file:
        Path(output_file).write_text(payload, encoding="utf-8")
        click.echo(output_file)
    else:
        click.echo(payload, nl=False)


@main.command(name="eval")
@click.option("--pred", "pred_path", type=click.Path(exists=True), required=True,
              help="Predictions JSON (from export --format predictions).")
@click.option("--gold", "gold_path", type=click.Path(exists=True), required=True)
@click.option("--policy", default="normalized", help="exact | normalized | fuzzy:<threshold>")
@click.option("--model-only", is_flag=True, help="Score model output without regex-derived items.")
@click.option("--output", "output_file", type=click.Path(), default=None,
              help="Write the JSON results artifact here.")
def eval_cmd(pred_path, gold_path, policy, model_only, output_file):
    """Score predictions against a ground-truth annotation file."""
    predictions = json.loads(Path(pred_path).read_text(encoding="utf-8"))
    gold = _guard(GroundTruth.from_file, gold_path)
    match_policy = _guard(MatchPolicy.parse, policy)
    results = _guard(evaluate_predictions, predictions, gold, match_policy, model_only)
    text, artifact = render_report(results)
    click.echo(text, nl=False)
    if output_file:
        Path(output_file).write_text(
            json.dumps(artifact, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
        )
        click.echo(output_file)


@main.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8099)
@_apply(backend_options)
@_apply(config_options)
@click.option("--out", "out_dir", type=click.Path(), default="stixtract-jobs")
def serve(host, port, backend, store_path, endpoint, model_name, temperature, top_p,
          config_file, max_words, overlap_words, review_mode, auto_review, seed, clock, out_dir):
    """Start the review HTTP API."""
    import uvicorn

    from .service import create_app

    config = _build_config(
        config_file,
        endpoint=endpoint,
        model_name=model_name,
        temperature=temperature,
        top_p=top_p,
        max_words=max_words,
        overlap_words=overlap_words,
        review_mode="auto" if auto_review else review_mode,
        seed=seed,
        clock=clock,
    )
    client = None
    if backend == "replay" and store_path:
        client = _build_client(backend, store_path, config)
    elif backend == "remote" and config.model.endpoint:
        client = _build_client(backend, store_path, config)
    app = create_app(out_dir, config, client)
    uvicorn.run(app, host=host, port=port, log_level="info")


@main.command(name="replay-record")
@click.option("--input", "input_spec", required=True)
@click.option("--store-out", "store_out", type=click.Path(), required=True,
              help="Where to write the recorded replay store.")
@_apply(backend_options)
@_apply(config_options)
@click.option("--out", "out_dir", type=click.Path(), default="stixtract-jobs")
def replay_record(input_spec, store_out, backend, store_path, endpoint, model_name,
                  temperature, top_p, config_file, max_words, overlap_words, review_mode,
                  auto_review, seed, clock, out_dir):
    """Run a job against the remote backend while recording every exchange
    into a replay store for later deterministic runs."""
    config = _build_config(
        config_file,
        endpoint=endpoint,
        model_name=model_name,
        temperature=temperature,
        top_p=top_p,
        max_words=max_words,
        overlap_words=overlap_words,
        review_mode="auto" if auto_review else review_mode,
        seed=seed,
        clock=clock,
    )
    raw = _guard(_load_raw, input_spec)
    client = _build_client(backend, store_path, config)
    pipeline = Pipeline(JobStore(out_dir), build_matrix(config))
    job = _guard(pipeline.create_job, raw, config)
    try:
        _guard(pipeline.run_until_gate, job, client)
    finally:
        record_session(client.exchanges, store_out)
    click.echo(json.dumps({
        "job_id": job.job_id,
        "stage": job.stage.value,
        "recorded_exchanges": len(client.exchanges),
        "store": str(store_out),
    }, indent=2))


if __name__ == "__main__":
    main()
