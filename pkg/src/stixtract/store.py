"""Append-only job persistence.

Each job is a JSON-lines event log under ``<root>/events/<job_id>.jsonl``;
replaying the log reconstructs the job, which is what the review audit trail
requires. Finalized bundles land under ``<root>/bundles/``.
"""

from __future__ import annotations

import json
import threading
from pathlib import Path


class StoreError(Exception):
    pass


class JobStore:
    def __init__(self, root: str | Path):
        self.root = Path(root)
        (self.root / "events").mkdir(parents=True, exist_ok=True)
        (self.root / "bundles").mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def _event_path(self, job_id: str) -> Path:
        return self.root / "events" / f"{job_id}.jsonl"

    def append_event(self, job_id: str, event: dict) -> None:
        line = json.dumps(event, ensure_ascii=False)
        with self._lock:
            with self._event_path(job_id).open("a", encoding="utf-8") as handle:
                handle.write(line + "\n")

    def events(self, job_id: str) -> list[dict]:
        path = self._event_path(job_id)
        if not path.exists():
            raise StoreError(f"unknown job {job_id}")
        records = []
        for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise StoreError(f"{path}:{lineno}: corrupt event record") from exc
        return records

    def job_ids(self) -> list[str]:
        return sorted(p.stem for p in (self.root / "events").glob("*.jsonl"))

    def exists(self, job_id: str) -> bool:
        return self._event_path(job_id).exists()

    def bundle_path(self, job_id: str) -> Path:
        return self.root / "bundles" / f"{job_id}.json"

    def save_bundle(self, job_id: str, bundle_json: str) -> Path:
        path = self.bundle_path(job_id)
        path.write_text(bundle_json, encoding="utf-8")
        return path

    def load_bundle(self, job_id: str) -> str:
        path = self.bundle_path(job_id)
        if not path.exists():
            raise StoreError(f"no bundle persisted for job {job_id}")
        return path.read_text(encoding="utf-8")
