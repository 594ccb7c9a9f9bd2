"""Dataset records and their on-disk forms.

Datasets are line-delimited JSON records `{id, text, tags, denotation,
task}`; tags serialize as `type:value` strings and denotations as sorted
lists of item lines.  Witness programs live in a separate sidecar file so
training code never sees them.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .orders import Denotation, Program, TagToken

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Example:
    """One training/evaluation turn: raw text, tags, target order, task."""

    id: str
    text: str
    tags: tuple[TagToken, ...]
    target: Denotation
    task: str


def example_to_record(example: Example) -> dict:
    return {
        "id": example.id,
        "text": example.text,
        "tags": [tag.to_text() for tag in example.tags],
        "denotation": list(example.target.to_lines()),
        "task": example.task,
    }


def example_from_record(record: dict) -> Example:
    return Example(
        id=str(record["id"]),
        text=str(record["text"]),
        tags=tuple(TagToken.from_text(t) for t in record["tags"]),
        target=Denotation.from_lines(record["denotation"]),
        task=str(record["task"]),
    )


def write_dataset(path, examples: Sequence[Example]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        for example in examples:
            handle.write(json.dumps(example_to_record(example), sort_keys=True) + "\n")


def read_dataset(path) -> list[Example]:
    """Load a dataset; turns with no tags are unusable and are skipped with
    a warning."""
    out: list[Example] = []
    with Path(path).open(encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            example = example_from_record(json.loads(line))
            if not example.tags:
                logger.warning("skipping %s (line %d): turn has no tags",
                               example.id, line_no)
                continue
            out.append(example)
    return out


def write_witnesses(path, witnesses: Iterable[tuple[str, Program]]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        for example_id, program in witnesses:
            handle.write(json.dumps({"id": example_id, "program": program.to_text()},
                                    sort_keys=True) + "\n")


def read_witnesses(path) -> dict[str, Program]:
    out: dict[str, Program] = {}
    with Path(path).open(encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            out[str(record["id"])] = Program.from_text(record["program"])
    return out


def write_json(path, payload) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")
