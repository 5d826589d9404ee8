"""Precision/recall/F1 scoring of predictions against ground truth.

Four scorers mirror the four extraction tasks: set-based name matching for
detection, micro-averaged single-label accuracy (with an ABSTAIN column for
missing predictions) for typing and labelling, and unordered pair matching
for relatedness. Matching is policy-driven: EXACT bytes, NORMALIZED folding,
or FUZZY at a similarity threshold. Fuzzy matching solves the assignment
exactly (maximum-cardinality matching), so scores never depend on input
order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .textnorm import max_cardinality_matching, normalize_name, similarity

ABSTAIN = "ABSTAIN"

# Published F1 scores of the fine-tuned task models this pipeline hosts,
# shown in reports for context only; nothing in this repository reproduces
# them (they require the original model weights and held-out corpus).
REFERENCE_F1 = {"T1": 0.8443, "T2": 0.8849, "T3": 0.9547, "T4": 0.8460}


@dataclass(frozen=True)
class MatchPolicy:
    kind: str  # exact | normalized | fuzzy
    threshold: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("exact", "normalized", "fuzzy"):
            raise ValueError(f"unknown match policy {self.kind!r}")
        if self.kind == "fuzzy":
            if self.threshold is None or not 0 < self.threshold <= 1:
                raise ValueError("fuzzy policy requires threshold in (0, 1]")
        elif self.threshold is not None:
            raise ValueError(f"{self.kind} policy takes no threshold")

    @classmethod
    def parse(cls, spec: str) -> "MatchPolicy":
        """Parse CLI forms: ``exact``, ``normalized``, ``fuzzy:0.9``."""
        if spec.startswith("fuzzy"):
            _, _, raw = spec.partition(":")
            return cls("fuzzy", float(raw or 0.9))
        return cls(spec)

    def key(self, name: str) -> str:
        return name if self.kind == "exact" else normalize_name(name)

    def matches(self, a: str, b: str) -> bool:
        if self.kind == "fuzzy":
            return similarity(a, b) >= self.threshold
        return self.key(a) == self.key(b)


EXACT = MatchPolicy("exact")
NORMALIZED = MatchPolicy("normalized")


def fuzzy(threshold: float = 0.9) -> MatchPolicy:
    return MatchPolicy("fuzzy", threshold)


@dataclass(frozen=True)
class Metrics:
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int) -> "Metrics":
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        # Single division keeps the float exactly the rounded rational value.
        f1 = 2 * tp / (2 * tp + fp + fn) if 2 * tp + fp + fn else 0.0
        return cls(tp, fp, fn, precision, recall, f1)

    def __add__(self, other: "Metrics") -> "Metrics":
        return Metrics.from_counts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)

    def to_dict(self) -> dict:
        return {
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
        }


@dataclass
class ConfusionMatrix:
    """Rows are true labels, columns predicted; ABSTAIN column collects gold
    items with no prediction."""

    labels: list[str]
    counts: list[list[int]]

    @classmethod
    def empty(cls, labels: list[str]) -> "ConfusionMatrix":
        return cls(list(labels), [[0] * len(labels) for _ in labels])

    def add(self, true_label: str, predicted: str) -> None:
        self.counts[self.labels.index(true_label)][self.labels.index(predicted)] += 1

    def row_sum(self, label: str) -> int:
        return sum(self.counts[self.labels.index(label)])

    def to_dict(self) -> dict:
        return {"labels": self.labels, "counts": self.counts}

    def render(self) -> str:
        width = max(len(label) for label in self.labels) + 2
        header = " " * width + "".join(label.rjust(width) for label in self.labels)
        rows = [
            label.rjust(width) + "".join(str(c).rjust(width) for c in row)
            for label, row in zip(self.labels, self.counts)
        ]
        return "\n".join([header, *rows])


@dataclass
class GroundTruth:
    """Annotation file contents: passages, per-passage entity names/types,
    and labelled relations whose endpoints exist among those entities."""

    passages: list[dict] = field(default_factory=list)
    entities: list[dict] = field(default_factory=list)
    relations: list[dict] = field(default_factory=list)

    def __post_init__(self) -> None:
        names = {(e["passage_id"], normalize_name(e["name"])) for e in self.entities}
        for relation in self.relations:
            for endpoint in ("source", "target"):
                key = (relation["passage_id"], normalize_name(relation[endpoint]))
                if key not in names:
                    raise ValueError(
                        f"relation endpoint {relation[endpoint]!r} not annotated as an entity "
                        f"in passage {relation['passage_id']}"
                    )

    @classmethod
    def from_file(cls, path: str | Path) -> "GroundTruth":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(
            passages=data.get("passages", []),
            entities=data.get("entities", []),
            relations=data.get("relations", []),
        )

    def passage_ids(self) -> set[str]:
        return {p["passage_id"] for p in self.passages}


def _match_sets(pred: list[str], gold: list[str], policy: MatchPolicy) -> tuple[int, int, int]:
    """tp/fp/fn for one passage's name sets under the policy."""
    if policy.kind != "fuzzy":
        pred_keys = {policy.key(name) for name in pred}
        gold_keys = {policy.key(name) for name in gold}
        tp = len(pred_keys & gold_keys)
        return tp, len(pred_keys) - tp, len(gold_keys) - tp
    # Deduplicate first so one prediction cannot claim two gold credits.
    pred_unique = list(dict.fromkeys(normalize_name(p) for p in pred))
    gold_unique = list(dict.fromkeys(normalize_name(g) for g in gold))
    edges = {
        (i, j)
        for i, p in enumerate(pred_unique)
        for j, g in enumerate(gold_unique)
        if policy.matches(p, g)
    }
    tp = len(max_cardinality_matching(len(pred_unique), len(gold_unique), edges))
    return tp, len(pred_unique) - tp, len(gold_unique) - tp


def score_t1(
    pred: dict[str, list[str]], gold: GroundTruth, policy: MatchPolicy = NORMALIZED
) -> Metrics:
    """Entity detection: per-passage set matching of predicted names against
    annotated names; each gold name is creditable at most once."""
    known = gold.passage_ids()
    unknown = set(pred) - known
    if unknown:
        raise ValueError(f"predictions reference unknown passages: {sorted(unknown)}")
    gold_by_passage: dict[str, list[str]] = {pid: [] for pid in known}
    for entity in gold.entities:
        gold_by_passage[entity["passage_id"]].append(entity["name"])
    total = Metrics.from_counts(0, 0, 0)
    for pid in sorted(known):
        tp, fp, fn = _match_sets(pred.get(pid, []), gold_by_passage[pid], policy)
        total = total + Metrics.from_counts(tp, fp, fn)
    return total


def score_single_label(
    pred: dict, gold: dict
) -> tuple[Metrics, ConfusionMatrix]:
    """Single-label tasks (typing, relationship labels): micro-averaged over
    gold items; items without a prediction count in the ABSTAIN column. With
    zero abstains precision, recall and F1 all equal accuracy."""
    label_set = sorted({*gold.values(), *(v for v in pred.values() if v is not None)})
    confusion = ConfusionMatrix.empty(label_set + [ABSTAIN])
    tp = fp = fn = 0
    for item, true_label in gold.items():
        predicted = pred.get(item)
        if predicted is None:
            confusion.add(true_label, ABSTAIN)
            fn += 1
            continue
        confusion.add(true_label, predicted)
        if predicted == true_label:
            tp += 1
        else:
            fp += 1
            fn += 1
    return Metrics.from_counts(tp, fp, fn), confusion


def _pair_key(passage_id: str, a: str, b: str, policy: MatchPolicy):
    return (passage_id, frozenset((policy.key(a), policy.key(b))))


def score_t3(
    pred_pairs: list[dict], gold: GroundTruth, policy: MatchPolicy = NORMALIZED
) -> Metrics:
    """Related-pair detection: a pair is gold-related iff any labelled
    relation exists between its endpoints in that passage; direction is
    ignored (the matrix fixes orientation downstream)."""
    gold_keys = {
        _pair_key(r["passage_id"], r["source"], r["target"], policy) for r in gold.relations
    }
    pred_keys = {
        _pair_key(p["passage_id"], p["source"], p["target"], policy) for p in pred_pairs
    }
    if policy.kind != "fuzzy":
        tp = len(pred_keys & gold_keys)
        return Metrics.from_counts(tp, len(pred_keys) - tp, len(gold_keys) - tp)
    pred_list, gold_list = sorted(pred_keys), sorted(gold_keys)
    edges = set()
    for i, (p_pid, p_pair) in enumerate(pred_list):
        for j, (g_pid, g_pair) in enumerate(gold_list):
            if p_pid != g_pid:
                continue
            a1, b1 = sorted(p_pair) if len(p_pair) == 2 else (min(p_pair), min(p_pair))
            a2, b2 = sorted(g_pair) if len(g_pair) == 2 else (min(g_pair), min(g_pair))
            direct = policy.matches(a1, a2) and policy.matches(b1, b2)
            crossed = policy.matches(a1, b2) and policy.matches(b1, a2)
            if direct or crossed:
                edges.add((i, j))
    tp = len(max_cardinality_matching(len(pred_list), len(gold_list), edges))
    return Metrics.from_counts(tp, len(pred_list) - tp, len(gold_list) - tp)


def _t2_maps(predictions: dict, gold: GroundTruth, policy: MatchPolicy, model_only: bool):
    gold_map = {
        (e["passage_id"], policy.key(e["name"])): e["entity_type"] for e in gold.entities
    }
    pred_map = {}
    for item in predictions.get("t2", []):
        if model_only and item.get("origin") == "regex":
            continue
        pred_map[(item["passage_id"], policy.key(item["name"]))] = item["entity_type"]
    return {k: pred_map.get(k) for k in gold_map}, gold_map


def _t4_maps(predictions: dict, gold: GroundTruth, policy: MatchPolicy):
    gold_map = {
        _pair_key(r["passage_id"], r["source"], r["target"], policy): r["label"]
        for r in gold.relations
    }
    pred_map = {}
    for item in predictions.get("t4", []):
        pred_map[_pair_key(item["passage_id"], item["source"], item["target"], policy)] = item[
            "label"
        ]
    return {k: pred_map.get(k) for k in gold_map}, gold_map


def evaluate_predictions(
    predictions: dict,
    gold: GroundTruth,
    policy: MatchPolicy = NORMALIZED,
    model_only: bool = False,
) -> dict:
    """Score a full prediction artifact; returns per-task metrics plus the
    confusion matrices for the single-label tasks.

    ``model_only`` drops regex-derived predictions before scoring detection
    and typing, for measuring the model in isolation.
    """
    t1_pred = {
        pid: [
            item["name"]
            for item in items
            if not (model_only and item.get("origin") == "regex")
        ]
        for pid, items in predictions.get("t1", {}).items()
    }
    t1 = score_t1(t1_pred, gold, policy)
    t2_pred, t2_gold = _t2_maps(predictions, gold, policy, model_only)
    t2, t2_confusion = score_single_label(t2_pred, t2_gold)
    t3 = score_t3(predictions.get("t3", []), gold, policy)
    t4_pred, t4_gold = _t4_maps(predictions, gold, policy)
    t4, t4_confusion = score_single_label(t4_pred, t4_gold)
    return {
        "policy": {"kind": policy.kind, "threshold": policy.threshold},
        "model_only": model_only,
        "tasks": {"T1": t1, "T2": t2, "T3": t3, "T4": t4},
        "confusion": {"T2": t2_confusion, "T4": t4_confusion},
    }


def render_report(results: dict, config_snapshot: dict | None = None) -> tuple[str, dict]:
    """Human-readable table plus a machine-readable artifact.

    The reference row restates the published scores of the fine-tuned task
    models for context; it is marked not-reproduced because this harness
    cannot rerun them.
    """
    tasks: dict[str, Metrics] = results["tasks"]
    lines = [
        "task  precision  recall     f1         tp    fp    fn",
        "-" * 56,
    ]
    for task in ("T1", "T2", "T3", "T4"):
        m = tasks[task]
        lines.append(
            f"{task:<4}  {m.precision:<9.4f}  {m.recall:<9.4f}  {m.f1:<9.4f}  "
            f"{m.tp:<4d}  {m.fp:<4d}  {m.fn:<4d}"
        )
    lines.append("-" * 56)
    reference = "  ".join(f"{task} {f1:.4f}" for task, f1 in REFERENCE_F1.items())
    lines.append(f"reference f1 (published, not reproduced here): {reference}")
    for task in ("T2", "T4"):
        lines.append("")
        lines.append(f"{task} confusion (rows true, columns predicted):")
        lines.append(results["confusion"][task].render())
    text = "\n".join(lines) + "\n"

    artifact = {
        "policy": results["policy"],
        "model_only": results["model_only"],
        "tasks": {task: metrics.to_dict() for task, metrics in tasks.items()},
        "confusion": {task: cm.to_dict() for task, cm in results["confusion"].items()},
        "reference_f1": dict(REFERENCE_F1),
        "reference_note": "published scores of the fine-tuned task models; not reproduced",
        "config": config_snapshot or {},
    }
    return text, artifact
