import json
from pathlib import Path

import pytest
from fastapi.testclient import TestClient

from stixtract.config import PipelineConfig
from stixtract.llm import LlmClient, load_session
from stixtract.service import create_app

DATA = Path(__file__).parent / "data"

DEMO_TEXT = (DATA / "demo_report.txt").read_text(encoding="utf-8")
REVIEW_TEXT = (DATA / "review_report.txt").read_text(encoding="utf-8")

ERROR_KEYS = {"code", "message", "details"}


@pytest.fixture()
def api(tmp_path):
    """Service wired to the demo replay store, gated default config."""
    config = PipelineConfig.from_dict(
        json.loads((DATA / "demo_config.json").read_text()) | {"review_mode": "gated"}
    )
    client = LlmClient(load_session(DATA / "demo_replay.jsonl"), config.model)
    app = create_app(tmp_path / "jobs", config, client)
    with TestClient(app, raise_server_exceptions=False) as test_client:
        yield test_client


@pytest.fixture()
def review_api(tmp_path):
    config = PipelineConfig.from_dict(
        {"review_mode": "gated", "seed": 77, "clock": "2024-01-01T00:00:00Z"}
    )
    client = LlmClient(load_session(DATA / "review_replay.jsonl"), config.model)
    app = create_app(tmp_path / "jobs", config, client)
    with TestClient(app, raise_server_exceptions=False) as test_client:
        yield test_client


def _create(api, text=DEMO_TEXT, **config):
    body = {"text": text}
    if config:
        body["config"] = config
    response = api.post("/jobs", json=body)
    assert response.status_code == 201, response.text
    return response.json()["job_id"]


def test_create_job_returns_201_with_stage(api):
    response = api.post("/jobs", json={"text": DEMO_TEXT})
    assert response.status_code == 201
    body = response.json()
    assert body["stage"] == "INGESTED"
    assert body["job_id"]


def test_create_job_requires_exactly_one_input(api):
    response = api.post("/jobs", json={})
    assert response.status_code == 400
    assert set(response.json()) == ERROR_KEYS
    response = api.post("/jobs", json={"text": "a", "html": "<p>b</p>"})
    assert response.status_code == 400


def test_unknown_job_is_404_api_error(api):
    response = api.get("/jobs/nope")
    assert response.status_code == 404
    body = response.json()
    assert body["code"] == "not_found"
    assert set(body) == ERROR_KEYS


def test_passages_listing(api):
    job_id = _create(api)
    response = api.get(f"/jobs/{job_id}/passages")
    assert response.status_code == 200
    passages = response.json()["passages"]
    assert len(passages) == 1
    assert passages[0]["passage_id"] == "p0000"


def test_meta_exposes_vocabularies(api):
    meta = api.get("/meta").json()
    assert len(meta["entity_types"]) == 11
    assert len(meta["relationship_labels"]) == 38
    assert "INGESTED" in meta["stages"]


def test_advance_from_done_without_review_is_409(api):
    job_id = _create(api)
    assert api.post(f"/jobs/{job_id}/advance", json={}).status_code == 200  # runs T1
    response = api.post(f"/jobs/{job_id}/advance", json={})
    assert response.status_code == 409
    assert response.json()["code"] == "invalid_stage"


def test_review_delete_unknown_entity_is_400(api):
    job_id = _create(api)
    api.post(f"/jobs/{job_id}/advance", json={})
    response = api.post(
        f"/jobs/{job_id}/review",
        json={"actions": [{"kind": "delete", "target": "e9999"}], "complete": False},
    )
    assert response.status_code == 400
    assert response.json()["code"] == "bad_request"


def test_stale_version_is_409(api):
    job_id = _create(api)
    response = api.post(f"/jobs/{job_id}/advance", json={"version": 999})
    assert response.status_code == 409


def test_bundle_before_finalized_is_409(api):
    job_id = _create(api)
    response = api.get(f"/jobs/{job_id}/bundle")
    assert response.status_code == 409
    assert response.json()["code"] == "invalid_stage"


def test_idempotency_key_replays_response(api):
    headers = {"Idempotency-Key": "create-1"}
    first = api.post("/jobs", json={"text": DEMO_TEXT}, headers=headers)
    second = api.post("/jobs", json={"text": DEMO_TEXT}, headers=headers)
    assert first.json() == second.json()
    third = api.post("/jobs", json={"text": DEMO_TEXT}, headers={"Idempotency-Key": "create-2"})
    assert third.json()["job_id"] != first.json()["job_id"]


def _advance(api, job_id, expect_stage):
    response = api.post(f"/jobs/{job_id}/advance", json={})
    assert response.status_code == 200, response.text
    assert response.json()["stage"] == expect_stage
    return response.json()


def _review(api, job_id, actions=(), complete=True, expect=200):
    response = api.post(
        f"/jobs/{job_id}/review", json={"actions": list(actions), "complete": complete}
    )
    assert response.status_code == expect, response.text
    return response.json()


def test_full_gated_walkthrough_to_graph(api):
    job_id = _create(api)
    _advance(api, job_id, "T1_DONE")

    items = api.get(f"/jobs/{job_id}/stage/T1_DONE/items").json()
    assert items["kind"] == "entities"
    assert len(items["items"]) == 6
    assert len(items["entity_type_options"]) == 11

    _review(api, job_id)
    _advance(api, job_id, "T2_DONE")
    _review(api, job_id)
    _advance(api, job_id, "T3_DONE")

    pairs = api.get(f"/jobs/{job_id}/stage/T3_DONE/items").json()
    assert pairs["kind"] == "pairs"
    related = [p for p in pairs["items"] if p["verdict"] == "related"]
    assert len(related) == 5
    for pair in pairs["items"]:
        assert pair["allowed_labels"]  # dropdown data always present

    _review(api, job_id)
    _advance(api, job_id, "T4_DONE")

    rels = api.get(f"/jobs/{job_id}/stage/T4_DONE/items").json()
    assert rels["kind"] == "relationships"
    assert len(rels["items"]) == 5

    _review(api, job_id)
    _advance(api, job_id, "FINALIZED")

    bundle = api.get(f"/jobs/{job_id}/bundle").json()
    assert bundle["type"] == "bundle"
    assert len(bundle["objects"]) == 11

    graph = api.get(f"/jobs/{job_id}/graph").json()
    assert len(graph["nodes"]) == 6
    assert len(graph["edges"]) == 5
    labels = sorted(edge["label"] for edge in graph["edges"])
    assert labels == ["communicates-with", "located-at", "targets", "uses", "uses"]


def test_graph_preview_before_finalized(api):
    job_id = _create(api)
    _advance(api, job_id, "T1_DONE")
    response = api.get(f"/jobs/{job_id}/graph", params={"preview": "true"})
    assert response.status_code == 200
    assert len(response.json()["nodes"]) == 6
    assert api.get(f"/jobs/{job_id}/graph").status_code == 409


def test_review_alter_updates_candidate_pairs(review_api):
    job_id = _create(review_api, text=REVIEW_TEXT)
    _advance(review_api, job_id, "T1_DONE")
    entities = review_api.get(f"/jobs/{job_id}/stage/T1_DONE/items").json()["items"]
    aes = next(e for e in entities if e["name"] == "AES")
    _review(review_api, job_id, [{"kind": "delete", "target": aes["local_id"]}])

    _advance(review_api, job_id, "T2_DONE")
    entities = review_api.get(f"/jobs/{job_id}/stage/T2_DONE/items").json()["items"]
    vpn = next(e for e in entities if e["name"] == "VPN servers")
    assert vpn["entity_type"] == "TOOL"
    _review(
        review_api,
        job_id,
        [{"kind": "alter", "target": vpn["local_id"], "payload": {"entity_type": "INFRASTRUCTURE"}}],
    )

    _advance(review_api, job_id, "T3_DONE")
    pairs = review_api.get(f"/jobs/{job_id}/stage/T3_DONE/items").json()["items"]
    vpn_pair = next(p for p in pairs if p["target_name"] == "VPN servers")
    assert vpn_pair["allowed_labels"] == ["compromises", "hosts", "owns", "uses"]


def test_eval_endpoint_scores_fixture(api, tmp_path):
    # drive a finished job, export predictions, score them via the API
    auto_config = json.loads((DATA / "demo_config.json").read_text())
    job_id = _create(api, **auto_config)
    summary = api.post(f"/jobs/{job_id}/advance", json={}).json()
    while summary["stage"] != "FINALIZED":
        summary = api.post(f"/jobs/{job_id}/advance", json={}).json()
    predictions = api.get(f"/jobs/{job_id}/predictions").json()
    gold = json.loads((DATA / "demo_gold.json").read_text())
    response = api.post("/eval", json={"predictions": predictions, "gold": gold})
    assert response.status_code == 200
    tasks = response.json()["tasks"]
    for task in ("T1", "T2", "T3", "T4"):
        assert tasks[task]["f1"] == 1.0, task


def test_invalid_stage_name_is_400(api):
    job_id = _create(api)
    response = api.get(f"/jobs/{job_id}/stage/T9_DONE/items")
    assert response.status_code == 400


def test_validation_error_body_shape(api):
    response = api.post("/jobs", json={"text": 42})
    assert response.status_code == 400
    assert set(response.json()) == ERROR_KEYS


def test_audit_endpoint(api):
    job_id = _create(api)
    audit = api.get(f"/jobs/{job_id}/audit").json()["audit"]
    assert audit[0]["event"] == "created"
