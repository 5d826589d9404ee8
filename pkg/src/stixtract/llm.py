"""Model backends: a chat-completions HTTP client and a deterministic
record/replay store for tests and offline runs.

Every completion is logged as an :class:`Exchange`; a recorded session can be
written to a JSON-lines store and loaded back as a :class:`ReplayBackend`
keyed by exact prompt hash, which makes pipeline runs bit-reproducible.
"""

from __future__ import annotations

import hashlib
import json
import logging
import threading
import time
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import requests

from .tasks import TaskKind

logger = logging.getLogger(__name__)

DEFAULT_MAX_TOKENS = {
    TaskKind.T1_DETECT: 1024,
    TaskKind.T2_TYPE: 10,
    TaskKind.T3_RELATED: 10,
    TaskKind.T4_LABEL: 10,
}


class BackendError(Exception):
    pass


class TransportError(BackendError):
    pass


class ReplayMiss(BackendError):
    pass


class StoreError(BackendError):
    pass


@dataclass
class ModelConfig:
    """Decoding and transport parameters for a model backend."""

    endpoint: str = ""
    model: str = ""
    api_key_env: str = "STIXTRACT_API_KEY"
    temperature: float = 0.7
    top_p: float = 0.1
    max_tokens: dict[TaskKind, int] = field(default_factory=lambda: dict(DEFAULT_MAX_TOKENS))
    timeout_s: float = 60.0
    max_retries: int = 2
    retry_backoff_s: float = 0.5
    parallelism: int = 4

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if not 0 < self.top_p <= 1:
            raise ValueError("top_p must be in (0, 1]")
        for kind, value in self.max_tokens.items():
            if value <= 0:
                raise ValueError(f"max_tokens for {kind} must be > 0")
        if self.parallelism < 1:
            raise ValueError("parallelism must be >= 1")

    def to_dict(self) -> dict:
        return {
            "endpoint": self.endpoint,
            "model": self.model,
            "api_key_env": self.api_key_env,
            "temperature": self.temperature,
            "top_p": self.top_p,
            "max_tokens": {kind.value: v for kind, v in self.max_tokens.items()},
            "timeout_s": self.timeout_s,
            "max_retries": self.max_retries,
            "parallelism": self.parallelism,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        if "max_tokens" in d:
            d["max_tokens"] = {TaskKind(k): v for k, v in d["max_tokens"].items()}
        return cls(**d)


@dataclass(frozen=True)
class Exchange:
    """One prompt/response round; append-only once recorded."""

    request_id: str
    task: TaskKind
    prompt: str
    response: str
    latency_ms: float
    backend: str
    timestamp: str

    def to_dict(self) -> dict:
        return {
            "request_id": self.request_id,
            "task": self.task.value,
            "prompt": self.prompt,
            "response": self.response,
            "latency_ms": self.latency_ms,
            "backend": self.backend,
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Exchange":
        return cls(
            request_id=d["request_id"],
            task=TaskKind(d["task"]),
            prompt=d["prompt"],
            response=d["response"],
            latency_ms=d["latency_ms"],
            backend=d["backend"],
            timestamp=d["timestamp"],
        )


def prompt_key(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


class RemoteBackend:
    """POSTs chat-completions JSON to the configured endpoint; bearer token
    comes from the environment variable named in the config, never from a
    flag or file."""

    name = "remote"

    def __init__(self, config: ModelConfig, session: requests.Session | None = None):
        if not config.endpoint:
            raise ValueError("remote backend requires an endpoint URL")
        self.config = config
        self.session = session or requests.Session()

    def complete(self, prompt: str, kind: TaskKind) -> str:
        import os

        config = self.config
        body = {
            "model": config.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": config.temperature,
            "top_p": config.top_p,
            "max_tokens": config.max_tokens.get(kind, 256),
        }
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(config.api_key_env, "")
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"

        last_error: Exception | None = None
        for attempt in range(config.max_retries + 1):
            try:
                response = self.session.post(
                    config.endpoint, json=body, headers=headers, timeout=config.timeout_s
                )
                if response.status_code >= 500:
                    raise TransportError(f"server error HTTP {response.status_code}")
                if response.status_code != 200:
                    raise TransportError(
                        f"HTTP {response.status_code}: {response.text[:200]}"
                    )
                data = response.json()
                return data["choices"][0]["message"]["content"]
            except (requests.RequestException, TransportError, KeyError, ValueError) as exc:
                last_error = exc
                logger.warning("completion attempt %d failed: %s", attempt + 1, exc)
                if attempt < config.max_retries and config.retry_backoff_s:
                    time.sleep(config.retry_backoff_s * (attempt + 1))
        raise TransportError(f"backend unreachable after {config.max_retries + 1} attempts: {last_error}")


class ReplayBackend:
    """Answers from a fixed prompt-hash map; any unknown prompt is an error,
    never a silent fallback."""

    name = "replay"

    def __init__(self, responses: dict[str, str]):
        self._responses = dict(responses)

    def __len__(self) -> int:
        return len(self._responses)

    def complete(self, prompt: str, kind: TaskKind) -> str:
        key = prompt_key(prompt)
        if key not in self._responses:
            raise ReplayMiss(f"prompt not in replay store (hash {key[:12]}…, task {kind.value})")
        return self._responses[key]


class LlmClient:
    """Completion entry point: runs a backend, enforces the parallelism
    limit, and keeps the append-only exchange log."""

    def __init__(self, backend, config: ModelConfig, rng=None):
        self.backend = backend
        self.config = config
        self.exchanges: list[Exchange] = []
        self._rng = rng
        self._lock = threading.Lock()
        self._inflight = 0
        self.max_inflight_seen = 0

    def _next_request_id(self) -> str:
        if self._rng is not None:
            return uuid.UUID(int=self._rng.getrandbits(128), version=4).hex[:12]
        return uuid.uuid4().hex[:12]

    def complete(self, prompt: str, kind: TaskKind) -> str:
        with self._lock:
            self._inflight += 1
            self.max_inflight_seen = max(self.max_inflight_seen, self._inflight)
            request_id = self._next_request_id()
        started = time.perf_counter()
        try:
            response = self.backend.complete(prompt, kind)
        finally:
            with self._lock:
                self._inflight -= 1
        latency_ms = (time.perf_counter() - started) * 1000.0
        exchange = Exchange(
            request_id=request_id,
            task=kind,
            prompt=prompt,
            response=response,
            latency_ms=round(latency_ms, 3),
            backend=self.backend.name,
            timestamp=datetime.now(timezone.utc).isoformat(),
        )
        with self._lock:
            self.exchanges.append(exchange)
        return response

    def complete_many(self, items: list[tuple[str, TaskKind]]) -> list[str | Exception]:
        """Complete a batch concurrently (bounded by the parallelism limit);
        results come back in input order, exceptions in place."""
        if not items:
            return []
        workers = min(self.config.parallelism, len(items))

        def run(item: tuple[str, TaskKind]):
            try:
                return self.complete(*item)
            except Exception as exc:  # collected, caller decides
                return exc

        if workers == 1:
            return [run(item) for item in items]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(run, items))

    def latency_summary(self) -> dict[str, dict]:
        """Per-task latency aggregates for timing reports."""
        grouped: dict[str, list[float]] = {}
        with self._lock:
            for exchange in self.exchanges:
                grouped.setdefault(exchange.task.value, []).append(exchange.latency_ms)
        return {
            task: {
                "count": len(values),
                "mean_ms": round(sum(values) / len(values), 3),
                "max_ms": round(max(values), 3),
            }
            for task, values in sorted(grouped.items())
        }


def record_session(exchanges: list[Exchange], path: str | Path) -> None:
    """Write exchanges to a JSON-lines replay store (lossless)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        for exchange in exchanges:
            handle.write(json.dumps(exchange.to_dict(), ensure_ascii=False) + "\n")


def read_session(path: str | Path) -> list[Exchange]:
    exchanges = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            exchanges.append(Exchange.from_dict(json.loads(line)))
        except (json.JSONDecodeError, KeyError, ValueError) as exc:
            raise StoreError(f"{path}:{lineno}: corrupt replay record: {exc}") from exc
    return exchanges


def load_session(path: str | Path) -> ReplayBackend:
    """Load a store into a replay backend. Two records for the same prompt
    must agree; conflicting responses make the store unusable."""
    responses: dict[str, str] = {}
    for exchange in read_session(path):
        key = prompt_key(exchange.prompt)
        if key in responses and responses[key] != exchange.response:
            raise StoreError(
                f"conflicting responses recorded for one prompt (hash {key[:12]}…)"
            )
        responses[key] = exchange.response
    return ReplayBackend(responses)
