"""Reader/writer for the blank-line separated ``key: value`` record format.

Each record is a block of ``key: value`` lines. Keys may repeat. A value
continues on following lines that start with a single space; a continuation
line consisting of `` .`` stands for an empty line inside the value.
Lines starting with ``#`` are comments.
"""

from __future__ import annotations

from typing import Iterable

from otsectest.errors import MalformedRow

Record = list[tuple[str, str]]


def parse_records(text: str) -> list[Record]:
    records: list[Record] = []
    current: Record = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if line.startswith("#"):
            continue
        if not line.strip():
            if current:
                records.append(current)
                current = []
            continue
        if line.startswith(" "):
            if not current:
                raise MalformedRow(len(records), f"line {lineno}: continuation without a key")
            rest = line[1:]
            key, value = current[-1]
            current[-1] = (key, value + "\n" + (rest[1:] if rest.startswith(".") else rest))
            continue
        key, sep, value = line.partition(":")
        if not sep or not key.strip():
            raise MalformedRow(len(records), f"line {lineno}: expected 'key: value'")
        current.append((key.strip().lower(), value.strip()))
    if current:
        records.append(current)
    return records


def format_records(records: Iterable[Record]) -> str:
    blocks = []
    for record in records:
        lines = []
        for key, value in record:
            first, *rest = str(value).split("\n")
            lines.append(f"{key}: {first}".rstrip())
            lines.extend(" " + ("." + part if not part or part.startswith(".") else part) for part in rest)
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + ("\n" if blocks else "")


def first(record: Record, key: str, default: str | None = None) -> str | None:
    for k, v in record:
        if k == key:
            return v
    return default


def every(record: Record, key: str) -> list[str]:
    return [v for k, v in record if k == key]
