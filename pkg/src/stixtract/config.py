"""Pipeline configuration: splitter parameters, resolution threshold, review
mode, model backend settings, and optional determinism knobs (seed + fixed
clock) used by replayed runs."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import yaml

from .llm import ModelConfig


@dataclass
class PipelineConfig:
    max_words: int = 300
    overlap_words: int = 50
    include_headings: bool = True
    fuzzy_threshold: float = 0.90
    review_mode: str = "gated"  # gated | auto
    alias_map: dict[str, list[str]] = field(default_factory=dict)
    matrix_path: str | None = None  # None -> embedded default matrix
    parse_retries: int = 1
    model: ModelConfig = field(default_factory=ModelConfig)
    seed: int | None = None  # seeds job/bundle ids for reproducible runs
    clock: str | None = None  # fixed ISO timestamp for bundle objects

    def __post_init__(self) -> None:
        if self.review_mode not in ("gated", "auto"):
            raise ValueError(f"review_mode must be gated or auto, not {self.review_mode!r}")
        if not 0 < self.fuzzy_threshold <= 1:
            raise ValueError("fuzzy_threshold must be in (0, 1]")
        if not self.max_words > self.overlap_words >= 0:
            raise ValueError("require max_words > overlap_words >= 0")

    def created_at(self) -> datetime | None:
        if self.clock is None:
            return None
        return datetime.fromisoformat(self.clock.replace("Z", "+00:00")).astimezone(timezone.utc)

    def to_dict(self) -> dict:
        return {
            "max_words": self.max_words,
            "overlap_words": self.overlap_words,
            "include_headings": self.include_headings,
            "fuzzy_threshold": self.fuzzy_threshold,
            "review_mode": self.review_mode,
            "alias_map": {k: list(v) for k, v in self.alias_map.items()},
            "matrix_path": self.matrix_path,
            "parse_retries": self.parse_retries,
            "model": self.model.to_dict(),
            "seed": self.seed,
            "clock": self.clock,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        if "model" in d and isinstance(d["model"], dict):
            d["model"] = ModelConfig.from_dict(d["model"])
        return cls(**d)

    @classmethod
    def from_file(cls, path: str | Path) -> "PipelineConfig":
        path = Path(path)
        text = path.read_text(encoding="utf-8")
        data = yaml.safe_load(text) if path.suffix in (".yaml", ".yml") else json.loads(text)
        return cls.from_dict(data or {})
