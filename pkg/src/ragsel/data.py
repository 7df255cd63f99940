"""Shared record types and JSONL plumbing used across the package."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Iterator

from .errors import RagselError


class MalformedRecordError(RagselError):
    """A JSONL line could not be parsed or is missing required fields."""

    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no


@dataclass
class QAPair:
    """A query with its golden answer(s); aliases are alternative accepted strings."""

    id: str
    question: str
    golden_answers: list[str]


def read_jsonl(path: str | Path) -> Iterator[tuple[int, dict]]:
    """Yield (line_no, record) for each non-blank line; line numbers are 1-based."""
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedRecordError(line_no, f"invalid JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise MalformedRecordError(line_no, "record is not an object")
            yield line_no, obj


def write_jsonl(path: str | Path, rows: Iterable[dict]) -> int:
    """Write one JSON object per line; returns the number of rows written."""
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")
            n += 1
    return n


def load_qa_file(path: str | Path) -> list[QAPair]:
    """Load a QA JSONL file with fields id, question, golden_answers."""
    pairs = []
    seen: set[str] = set()
    for line_no, obj in read_jsonl(path):
        for field in ("id", "question", "golden_answers"):
            if field not in obj:
                raise MalformedRecordError(line_no, f"missing field {field!r}")
        golds = obj["golden_answers"]
        if not isinstance(golds, list) or not golds:
            raise MalformedRecordError(line_no, "golden_answers must be a non-empty list")
        qid = str(obj["id"])
        if qid in seen:
            raise MalformedRecordError(line_no, f"duplicate qa id {qid!r}")
        seen.add(qid)
        pairs.append(QAPair(id=qid, question=str(obj["question"]), golden_answers=[str(g) for g in golds]))
    return pairs


def stable_hash_int(*parts: Any) -> int:
    """Deterministic 64-bit integer derived from the string forms of the parts.

    Used to derive per-item RNG seeds so results do not depend on batch order
    or on the process hash seed.
    """
    key = ":".join(str(p) for p in parts)
    return int.from_bytes(hashlib.sha256(key.encode("utf-8")).digest()[:8], "big")


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()
