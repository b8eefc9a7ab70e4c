"""Per-item evaluation records and their JSONL persistence.

records.jsonl is append-only and written in manifest order, so an interrupted
run resumes by skipping the lines already present.  Serialization is canonical
(sorted keys, compact separators): identical results are identical bytes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .client import ModelResponse


@dataclass
class EvalRecord:
    item_id: str
    config_hash: str
    ok: bool = True
    error: str | None = None
    response: ModelResponse | None = None
    sample_texts: list[str] | None = None  # self-consistency audit trail
    parsed_answer: str | int | None = None
    verdict: dict | None = None  # filled by the judge step

    def to_dict(self) -> dict:
        return {
            "item_id": self.item_id,
            "config_hash": self.config_hash,
            "ok": self.ok,
            "error": self.error,
            "response": self.response.to_dict() if self.response else None,
            "sample_texts": self.sample_texts,
            "parsed_answer": self.parsed_answer,
            "verdict": self.verdict,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EvalRecord":
        return cls(
            item_id=data["item_id"],
            config_hash=data["config_hash"],
            ok=data["ok"],
            error=data.get("error"),
            response=ModelResponse.from_dict(data["response"]) if data.get("response") else None,
            sample_texts=data.get("sample_texts"),
            parsed_answer=data.get("parsed_answer"),
            verdict=data.get("verdict"),
        )

    def to_line(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def read_records(path: str | Path) -> list[EvalRecord]:
    path = Path(path)
    if not path.exists():
        return []
    records = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            records.append(EvalRecord.from_dict(json.loads(line)))
    return records


def append_record(path: str | Path, record: EvalRecord) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a", encoding="utf-8") as fh:
        fh.write(record.to_line() + "\n")


def write_records(path: str | Path, records: list[EvalRecord]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        "".join(r.to_line() + "\n" for r in records),
        encoding="utf-8",
    )
