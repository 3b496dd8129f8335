"""Trial records and the append-only JSONL log."""

from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import IO, Iterable, Iterator

RECORD_SCHEMA = "v1"

log = logging.getLogger(__name__)


@dataclass
class TrialRecord:
    strategy: str = ""
    difficulty: str = ""
    agents: int = 0
    trial: int = 0
    seed: int = 0
    solved: bool = False
    total_ticks: int = 0
    pressure_history: list[float] = field(default_factory=list)
    band_escalation_events: list[tuple[int, str, str]] = field(default_factory=list)
    model_escalation_events: list[tuple[int, str, str]] = field(default_factory=list)
    final_model: str = ""
    prompt_tokens: int = 0
    completion_tokens: int = 0
    actor_calls: int = 0
    patches_proposed: int = 0
    patches_applied: int = 0
    patches_rejected: int = 0
    termination: str = ""
    config: str = ""
    error: str = ""
    duration_s: float = 0.0

    @property
    def token_usage(self) -> tuple[int, int]:
        return self.prompt_tokens, self.completion_tokens

    @property
    def total_tokens(self) -> int:
        return self.prompt_tokens + self.completion_tokens

    @property
    def final_pressure(self) -> float | None:
        return self.pressure_history[-1] if self.pressure_history else None

    def to_dict(self, timing: bool = True) -> dict:
        data = asdict(self)
        data["band_escalation_events"] = [list(e) for e in self.band_escalation_events]
        data["model_escalation_events"] = [list(e) for e in self.model_escalation_events]
        if not timing:
            data.pop("duration_s")
        return {"schema": RECORD_SCHEMA, **data}

    def to_json(self, timing: bool = True) -> str:
        return json.dumps(self.to_dict(timing), sort_keys=True, separators=(",", ":"))

    def canonical(self) -> str:
        """Serialized form without wall-clock timing, for reproducibility checks."""
        return self.to_json(timing=False)

    @classmethod
    def from_dict(cls, data: dict) -> "TrialRecord":
        if data.get("schema") != RECORD_SCHEMA:
            raise ValueError(f"unsupported record schema {data.get('schema')!r}")
        known = {f.name for f in fields(cls)}
        kwargs = {k: v for k, v in data.items() if k in known}
        for key in ("band_escalation_events", "model_escalation_events"):
            kwargs[key] = [tuple(e) for e in kwargs.get(key, [])]
        return cls(**kwargs)


def write_trial_record(record: TrialRecord, sink: IO[str]) -> None:
    sink.write(record.to_json() + "\n")
    sink.flush()
    try:
        os.fsync(sink.fileno())
    except (AttributeError, OSError, ValueError):
        pass


def read_trial_records(paths: Iterable[str | Path]) -> Iterator[TrialRecord]:
    for path in paths:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
        for lineno, raw in enumerate(lines, 1):
            line = raw.strip()
            if not line:
                continue
            try:
                yield TrialRecord.from_dict(json.loads(line))
            except (json.JSONDecodeError, ValueError, TypeError) as exc:
                # A torn final line is what an interrupted writer leaves behind.
                if lineno == len(lines) and not raw.endswith("\n"):
                    log.warning("%s:%d: skipping truncated final record", path, lineno)
                    continue
                raise ValueError(f"{path}:{lineno}: bad trial record ({exc})") from exc
