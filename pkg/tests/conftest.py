import json
from pathlib import Path

import pytest

from stixtract.config import PipelineConfig
from stixtract.llm import LlmClient, load_session
from stixtract.pipeline import Pipeline
from stixtract.store import JobStore

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def data_dir() -> Path:
    return DATA


@pytest.fixture
def demo_config() -> PipelineConfig:
    return PipelineConfig.from_dict(json.loads((DATA / "demo_config.json").read_text()))


@pytest.fixture
def demo_client(demo_config) -> LlmClient:
    return LlmClient(load_session(DATA / "demo_replay.jsonl"), demo_config.model)


@pytest.fixture
def review_client() -> LlmClient:
    config = PipelineConfig()
    return LlmClient(load_session(DATA / "review_replay.jsonl"), config.model)


@pytest.fixture
def pipeline(tmp_path) -> Pipeline:
    return Pipeline(JobStore(tmp_path / "jobs"))
