import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from stixtract.cli import main

DATA = Path(__file__).parent / "data"


@pytest.fixture()
def runner():
    return CliRunner()


def _run_demo(runner, tmp_path, *extra):
    args = [
        "run",
        "--input", str(DATA / "demo_report.txt"),
        "--backend", "replay",
        "--store", str(DATA / "demo_replay.jsonl"),
        "--config", str(DATA / "demo_config.json"),
        "--out", str(tmp_path / "jobs"),
        *extra,
    ]
    return runner.invoke(main, args)


def test_run_replay_to_finalized(runner, tmp_path):
    result = _run_demo(runner, tmp_path)
    assert result.exit_code == 0, result.output + str(result.exception)
    payload = json.loads(result.output)
    assert payload["stage"] == "FINALIZED"
    bundle_path = Path(payload["bundle_path"])
    assert bundle_path.exists()
    bundle = json.loads(bundle_path.read_text())
    assert len(bundle["objects"]) == 11


def test_run_auto_review_flag_overrides_gated_config(runner, tmp_path):
    # config file says auto already; force gated then flip back via flag
    result = _run_demo(runner, tmp_path, "--review-mode", "gated")
    assert json.loads(result.output)["stage"] == "T1_DONE"
    result = _run_demo(runner, tmp_path, "--review-mode", "gated", "--auto-review")
    assert json.loads(result.output)["stage"] == "FINALIZED"


def test_export_unfinished_job_is_invalid_stage_exit_1(runner, tmp_path):
    result = _run_demo(runner, tmp_path, "--review-mode", "gated")
    job_id = json.loads(result.output)["job_id"]
    result = runner.invoke(
        main,
        ["export", "--job", job_id, "--format", "stix", "--out", str(tmp_path / "jobs")],
    )
    assert result.exit_code == 1
    error = json.loads(result.stderr)
    assert error["code"] == "invalid_stage"


def test_export_graph_and_predictions(runner, tmp_path):
    result = _run_demo(runner, tmp_path)
    job_id = json.loads(result.output)["job_id"]

    result = runner.invoke(
        main, ["export", "--job", job_id, "--format", "graph", "--out", str(tmp_path / "jobs")]
    )
    assert result.exit_code == 0
    graph = json.loads(result.output)
    assert len(graph["nodes"]) == 6
    assert len(graph["edges"]) == 5

    out_file = tmp_path / "pred.json"
    result = runner.invoke(
        main,
        [
            "export", "--job", job_id, "--format", "predictions",
            "--out", str(tmp_path / "jobs"), "--output", str(out_file),
        ],
    )
    assert result.exit_code == 0
    predictions = json.loads(out_file.read_text())
    assert set(predictions) == {"job_id", "t1", "t2", "t3", "t4"}


def test_eval_subcommand_scores_predictions(runner, tmp_path):
    result = _run_demo(runner, tmp_path)
    job_id = json.loads(result.output)["job_id"]
    pred_file = tmp_path / "pred.json"
    runner.invoke(
        main,
        [
            "export", "--job", job_id, "--format", "predictions",
            "--out", str(tmp_path / "jobs"), "--output", str(pred_file),
        ],
    )
    results_file = tmp_path / "results.json"
    result = runner.invoke(
        main,
        [
            "eval", "--pred", str(pred_file), "--gold", str(DATA / "demo_gold.json"),
            "--output", str(results_file),
        ],
    )
    assert result.exit_code == 0, result.output
    assert "T1" in result.output and "1.0000" in result.output
    artifact = json.loads(results_file.read_text())
    assert all(artifact["tasks"][t]["f1"] == 1.0 for t in ("T1", "T2", "T3", "T4"))
    assert artifact["reference_f1"]["T1"] == 0.8443


def test_gated_review_and_advance_via_cli(runner, tmp_path):
    jobs_dir = str(tmp_path / "jobs")
    result = runner.invoke(
        main,
        [
            "run",
            "--input", str(DATA / "review_report.txt"),
            "--backend", "replay",
            "--store", str(DATA / "review_replay.jsonl"),
            "--review-mode", "gated",
            "--seed", "77",
            "--clock", "2024-01-01T00:00:00Z",
            "--out", jobs_dir,
        ],
    )
    assert result.exit_code == 0, result.output + str(result.exception)
    job_id = json.loads(result.output)["job_id"]

    # T1 review: delete the AES false positive (entity ids are stable: e0005)
    actions = tmp_path / "actions.json"
    actions.write_text(json.dumps([{"kind": "delete", "target": "e0005"}]))
    result = runner.invoke(
        main, ["review", "--job", job_id, "--actions", str(actions), "--out", jobs_dir]
    )
    assert result.exit_code == 0, result.stderr if result.exit_code else ""
    assert json.loads(result.output)["stage"] == "T1_REVIEWED"

    result = runner.invoke(
        main,
        [
            "advance", "--job", job_id, "--backend", "replay",
            "--store", str(DATA / "review_replay.jsonl"), "--out", jobs_dir,
        ],
    )
    assert result.exit_code == 0
    assert json.loads(result.output)["stage"] == "T2_DONE"


def test_ingest_subcommand_emits_passages(runner, tmp_path):
    result = runner.invoke(
        main, ["ingest", "--input", str(DATA / "demo_report.txt")]
    )
    assert result.exit_code == 0
    artifact = json.loads(result.output)
    assert len(artifact["passages"]) == 1
    assert artifact["passages"][0]["passage_id"] == "p0000"


def test_missing_input_file_fails_with_api_error(runner, tmp_path):
    result = runner.invoke(
        main, ["run", "--input", "/no/such/file.txt", "--backend", "replay",
               "--store", str(DATA / "demo_replay.jsonl")]
    )
    assert result.exit_code == 1
    assert json.loads(result.stderr)["code"] == "bad_request"


def test_usage_error_exits_2(runner):
    result = runner.invoke(main, ["run"])  # missing required --input
    assert result.exit_code == 2


def test_replay_backend_requires_store(runner):
    result = runner.invoke(
        main, ["run", "--input", str(DATA / "demo_report.txt"), "--backend", "replay"]
    )
    assert result.exit_code == 1
    assert json.loads(result.stderr)["code"] == "bad_request"


def test_review_unknown_job_not_found(runner, tmp_path):
    actions = tmp_path / "a.json"
    actions.write_text("[]")
    result = runner.invoke(
        main,
        ["review", "--job", "missing", "--actions", str(actions), "--out", str(tmp_path / "j")],
    )
    assert result.exit_code == 1
    assert json.loads(result.stderr)["code"] == "not_found"
