"""JSONL dataset ingestion for the four task shapes (qa, ts, mt, cg)."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Union

from ..errors import DatasetParseError, DuplicateIdError

TASKS = ("qa", "ts", "mt", "cg")

# accepted aliases for the source text field
_INPUT_KEYS = ("input", "question", "text", "prompt")


@dataclass(frozen=True)
class DatasetItem:
    id: str
    task: str
    input: str
    references: tuple[str, ...] = ()
    aux: Optional[str] = None
    split: Optional[str] = None

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        object.__setattr__(self, "references", tuple(self.references))
        if self.task == "cg":
            if not self.references and self.aux is None:
                raise ValueError("cg items need a test suite in 'aux' or references")
        elif not self.references:
            raise ValueError(f"{self.task} items need non-empty 'references'")

    def to_dict(self):
        d = {"id": self.id, "task": self.task, "input": self.input, "references": list(self.references)}
        if self.aux is not None:
            d["aux"] = self.aux
        if self.split is not None:
            d["split"] = self.split
        return d


@dataclass
class IngestResult:
    items: list[DatasetItem]
    malformed: list[tuple[int, str]] = field(default_factory=list)


def _parse(obj, task: Optional[str]) -> DatasetItem:
    if not isinstance(obj, dict):
        raise ValueError("line is not a JSON object")
    line_task = obj.get("task", task)
    if task is not None and line_task != task:
        raise ValueError(f"task {line_task!r} does not match expected {task!r}")
    if "id" not in obj:
        raise ValueError("missing 'id'")
    source = next((obj[k] for k in _INPUT_KEYS if k in obj), None)
    if not isinstance(source, str):
        raise ValueError("missing input text")
    refs = obj.get("references")
    if refs is None and "reference" in obj:
        refs = [obj["reference"]]
    if refs is None:
        refs = []
    if isinstance(refs, str) or not all(isinstance(r, str) for r in refs):
        raise ValueError("'references' must be a list of strings")
    aux = obj.get("aux")
    if aux is not None and not isinstance(aux, str):
        raise ValueError("'aux' must be a string")
    return DatasetItem(str(obj["id"]), line_task, source, tuple(refs), aux, obj.get("split"))


def ingest(path: Union[str, Path], task: Optional[str] = None, max_malformed_frac: float = 0.1) -> IngestResult:
    """Read one JSON object per line.

    Malformed lines are collected with their 1-based line numbers; the call
    fails only when they exceed ``max_malformed_frac`` of the non-blank
    lines. Duplicate ids always fail.
    """
    items: list[DatasetItem] = []
    malformed: list[tuple[int, str]] = []
    seen: dict[str, int] = {}
    n_lines = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            n_lines += 1
            try:
                item = _parse(json.loads(line), task)
            except (ValueError, TypeError) as exc:
                malformed.append((lineno, str(exc)))
                continue
            if item.id in seen:
                raise DuplicateIdError(f"id {item.id!r} on line {lineno} already used on line {seen[item.id]}")
            seen[item.id] = lineno
            items.append(item)
    if n_lines and len(malformed) / n_lines > max_malformed_frac:
        raise DatasetParseError(malformed)
    return IngestResult(items, malformed)


def dump_items(items: Iterable[DatasetItem], path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for item in items:
            fh.write(json.dumps(item.to_dict(), sort_keys=True, ensure_ascii=False) + "\n")
