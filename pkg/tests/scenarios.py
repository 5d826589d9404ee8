"""Shared fixture scenarios: report texts, gold answers, and an oracle
backend that answers prompts from the gold tables.

Running this module as a script regenerates the checked-in replay stores and
ground-truth files under tests/data/ (needed whenever prompt construction or
the scenario definitions change):

    python3 tests/scenarios.py
"""

from __future__ import annotations

import json
import re
import sys
import tempfile
from pathlib import Path

DATA_DIR = Path(__file__).parent / "data"

DEMO_TEXT = (
    'Analysts attribute the latest intrusion wave to the cyber espionage group '
    '"Shadow Dragon", which has a long record of going after financial institutions. '
    'The most recent victim, "Global Finance Corp.", an institution headquartered in '
    'the United States, was compromised with a custom malware strain named '
    '"SerpentStealth". Initial access relied on the "Spearphishing Attachment" '
    'technique (MITRE ATT&CK T1566.001): employees were tricked into opening a '
    'booby-trapped attachment that executed the payload. Once resident, '
    'SerpentStealth exchanged traffic with a command-and-control (C2) server at the '
    'IP address 198.51.100.5, exfiltrating data and polling for further commands.'
)

DEMO_ALIAS_MAP = {
    "Spearphishing Attachment T1566.001": ["Spearphishing Attachment", "T1566.001"]
}

DEMO_T1_ANSWER = "Shadow Dragon|Global Finance Corp|United States|SerpentStealth|Spearphishing Attachment"

DEMO_T2_TYPES = {
    "Shadow Dragon": "THREAT_ACTOR",
    "Global Finance Corp": "IDENTITY",
    "United States": "LOCATION",
    "SerpentStealth": "MALWARE",
}

DEMO_RELATED = {
    ("Shadow Dragon", "Global Finance Corp"),
    ("Shadow Dragon", "SerpentStealth"),
    ("Shadow Dragon", "Spearphishing Attachment T1566.001"),
    ("Global Finance Corp", "United States"),
    ("SerpentStealth", "198.51.100.5"),
}

DEMO_LABELS = {
    ("Shadow Dragon", "Global Finance Corp"): "targets",
    ("Shadow Dragon", "SerpentStealth"): "uses",
    ("Shadow Dragon", "Spearphishing Attachment T1566.001"): "uses",
    ("Global Finance Corp", "United States"): "located-at",
    ("SerpentStealth", "198.51.100.5"): "communicates-with",
}

# The six entities and five edges the finished demo-scenario job must contain.
DEMO_EXPECTED_ENTITIES = {
    ("Shadow Dragon", "THREAT_ACTOR"),
    ("Global Finance Corp", "IDENTITY"),
    ("United States", "LOCATION"),
    ("SerpentStealth", "MALWARE"),
    ("Spearphishing Attachment T1566.001", "ATTACK_PATTERN"),
    ("198.51.100.5", "INDICATOR"),
}

DEMO_EXPECTED_EDGES = {
    ("Shadow Dragon", "targets", "Global Finance Corp"),
    ("Shadow Dragon", "uses", "SerpentStealth"),
    ("Shadow Dragon", "uses", "Spearphishing Attachment T1566.001"),
    ("Global Finance Corp", "located-at", "United States"),
    ("SerpentStealth", "communicates-with", "198.51.100.5"),
}

DEMO_CONFIG = {
    "review_mode": "auto",
    "seed": 20240101,
    "clock": "2024-01-01T00:00:00Z",
    "alias_map": DEMO_ALIAS_MAP,
}


REVIEW_TEXT = (
    "Shuckworm, also tracked as Gamaredon, is a long-running espionage operation. "
    "The group overwhelmingly targets Ukraine, pursuing government and defense "
    "organizations. Recent intrusions staged payloads on rented VPN servers before "
    "any lateral movement. Captured samples decrypt their configuration with AES."
)

REVIEW_T1_ANSWER = "Shuckworm|Gamaredon|Ukraine|VPN servers|AES"

REVIEW_T2_TYPES = {
    "Shuckworm": "THREAT_ACTOR",
    "Gamaredon": "THREAT_ACTOR",
    "Ukraine": "LOCATION",
    "VPN servers": "TOOL",  # the typing model's confusion; review fixes it
}

# The model misses the relations of the alias entity entirely.
REVIEW_RELATED = {
    ("Shuckworm", "Ukraine"),
    ("Shuckworm", "VPN servers"),
}

REVIEW_LABELS = {
    ("Shuckworm", "Ukraine"): "targets",
    ("Shuckworm", "VPN servers"): "uses",
    ("Gamaredon", "Ukraine"): "targets",  # asked only after the reviewer adds the pair
}

REVIEW_CONFIG = {
    "review_mode": "gated",
    "seed": 77,
    "clock": "2024-01-01T00:00:00Z",
}

REVIEW_EXPECTED_ENTITIES = {
    ("Shuckworm", "THREAT_ACTOR"),
    ("Gamaredon", "THREAT_ACTOR"),
    ("Ukraine", "LOCATION"),
    ("VPN servers", "INFRASTRUCTURE"),
}

REVIEW_EXPECTED_EDGES = {
    ("Shuckworm", "targets", "Ukraine"),
    ("Shuckworm", "uses", "VPN servers"),
    ("Gamaredon", "targets", "Ukraine"),
}


class OracleBackend:
    """Answers prompts from the gold tables by reading the slots back out of
    the prompt text. Used only to generate replay stores."""

    name = "oracle"

    def __init__(self, t1_answer: str, t2_types: dict, related: set, labels: dict):
        self.t1_answer = t1_answer
        self.t2_types = t2_types
        self.related = related
        self.labels = labels

    def complete(self, prompt: str, kind) -> str:
        from stixtract.tasks import TaskKind

        if kind is TaskKind.T1_DETECT:
            return f"<entities>{self.t1_answer}</entities>"
        if kind is TaskKind.T2_TYPE:
            entity = re.search(r"^- Entity: (.+)$", prompt, re.MULTILINE).group(1)
            return f"<entity_type>{self.t2_types[entity]}</entity_type>"
        source = re.search(r"^- Source Entity: (.+?)(?: \([A-Z_]+\))?$", prompt, re.MULTILINE).group(1)
        target = re.search(r"^- Target Entity: (.+?)(?: \([A-Z_]+\))?$", prompt, re.MULTILINE).group(1)
        if kind is TaskKind.T3_RELATED:
            verdict = "YES" if (source, target) in self.related else "NO"
            return f"<related>{verdict}</related>"
        return f"<label>{self.labels[(source, target)]}</label>"


def demo_gold() -> dict:
    return {
        "passages": [{"passage_id": "p0000", "text": DEMO_TEXT}],
        "entities": [
            {"passage_id": "p0000", "name": "Shadow Dragon", "entity_type": "THREAT_ACTOR"},
            {"passage_id": "p0000", "name": "Global Finance Corp", "entity_type": "IDENTITY"},
            {"passage_id": "p0000", "name": "United States", "entity_type": "LOCATION"},
            {"passage_id": "p0000", "name": "SerpentStealth", "entity_type": "MALWARE"},
            {
                "passage_id": "p0000",
                "name": "Spearphishing Attachment T1566.001",
                "entity_type": "ATTACK_PATTERN",
            },
            {
                "passage_id": "p0000",
                "name": "198.51.100.5",
                "entity_type": "INDICATOR",
                "subtype": "IPV4_ADDR",
            },
        ],
        "relations": [
            {
                "passage_id": "p0000",
                "source": source,
                "target": target,
                "label": DEMO_LABELS[(source, target)],
            }
            for source, target in sorted(DEMO_RELATED)
        ],
    }


def regenerate() -> None:
    from stixtract.config import PipelineConfig
    from stixtract.ingest import RawReport, ReportSource
    from stixtract.llm import LlmClient, record_session
    from stixtract.pipeline import Pipeline, ReviewAction
    from stixtract.store import JobStore

    DATA_DIR.mkdir(parents=True, exist_ok=True)
    (DATA_DIR / "demo_report.txt").write_text(DEMO_TEXT + "\n", encoding="utf-8")
    (DATA_DIR / "review_report.txt").write_text(REVIEW_TEXT + "\n", encoding="utf-8")
    (DATA_DIR / "demo_config.json").write_text(
        json.dumps(DEMO_CONFIG, indent=2) + "\n", encoding="utf-8"
    )
    (DATA_DIR / "demo_gold.json").write_text(
        json.dumps(demo_gold(), indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
    )

    with tempfile.TemporaryDirectory() as tmp:
        # Demo scenario: unattended auto-review run.
        config = PipelineConfig.from_dict(DEMO_CONFIG)
        client = LlmClient(
            OracleBackend(DEMO_T1_ANSWER, DEMO_T2_TYPES, DEMO_RELATED, DEMO_LABELS),
            config.model,
        )
        pipeline = Pipeline(JobStore(Path(tmp) / "demo"))
        job = pipeline.create_job(
            RawReport(ReportSource.TEXT, DEMO_TEXT.encode()), config, source="demo"
        )
        pipeline.run_until_gate(job, client)
        assert job.stage.value == "FINALIZED", job.stage
        record_session(client.exchanges, DATA_DIR / "demo_replay.jsonl")
        print(f"demo: {len(client.exchanges)} exchanges, stage {job.stage.value}")

        # Review scenario: gated run with delete / alter / add edits.
        config = PipelineConfig.from_dict(REVIEW_CONFIG)
        client = LlmClient(
            OracleBackend(REVIEW_T1_ANSWER, REVIEW_T2_TYPES, REVIEW_RELATED, REVIEW_LABELS),
            config.model,
        )
        pipeline = Pipeline(JobStore(Path(tmp) / "review"))
        job = pipeline.create_job(
            RawReport(ReportSource.TEXT, REVIEW_TEXT.encode()), config, source="review"
        )
        pipeline.run_t1(job, client)
        aes = next(e for e in job.entities if e.name == "AES")
        pipeline.apply_review(job, [ReviewAction("delete", aes.local_id)])
        pipeline.run_t2(job, client)
        vpn = next(e for e in job.entities if e.name == "VPN servers")
        pipeline.apply_review(
            job, [ReviewAction("alter", vpn.local_id, {"entity_type": "INFRASTRUCTURE"})]
        )
        pipeline.run_t3(job, client)
        gamaredon = next(e for e in job.entities if e.name == "Gamaredon")
        ukraine = next(e for e in job.entities if e.name == "Ukraine")
        pipeline.apply_review(
            job,
            [
                ReviewAction(
                    "add",
                    payload={"source_id": gamaredon.local_id, "target_id": ukraine.local_id},
                )
            ],
        )
        pipeline.run_t4(job, client)
        pipeline.apply_review(job, [])
        bundle = pipeline.finalize(job)
        assert len(bundle.objects) == len(REVIEW_EXPECTED_ENTITIES) + len(REVIEW_EXPECTED_EDGES)
        record_session(client.exchanges, DATA_DIR / "review_replay.jsonl")
        print(f"review: {len(client.exchanges)} exchanges, stage {job.stage.value}")


if __name__ == "__main__":
    sys.path.insert(0, str(Path(__file__).parent.parent / "src"))
    regenerate()
