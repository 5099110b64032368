"""Line-delimited record format shared by manifests, vote logs, and reports.

Every persistent artifact in this toolkit is a UTF-8 text file with one
record per line:

    <kind> key1=value1 key2=value2 ...

Keys are fixed per record kind and must appear in the documented order.
Values may not contain whitespace (splitting is on runs of spaces); the
first ``=`` separates key from value, so values may themselves contain
``=`` (URIs survive). Blank lines and lines starting with ``#`` are
ignored by readers and never produced by writers.
"""

from __future__ import annotations

import json


class RecordError(ValueError):
    """Malformed record line; carries the 1-based line number when known."""

    def __init__(self, message: str, line_no: int | None = None):
        self.line_no = line_no
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)


def format_record(kind: str, fields: list[tuple[str, str]]) -> str:
    """Render one record line. Field order is preserved as given."""
    parts = [kind]
    for key, value in fields:
        value = str(value)
        if value == "" or any(ch.isspace() for ch in value):
            raise RecordError(f"field {key!r} has empty or whitespace value {value!r}")
        parts.append(f"{key}={value}")
    return " ".join(parts)


def parse_record(line: str, line_no: int | None = None) -> tuple[str, dict[str, str]]:
    """Parse one record line into (kind, fields). Duplicate keys are rejected."""
    tokens = line.split()
    if not tokens:
        raise RecordError("empty record", line_no)
    kind = tokens[0]
    fields: dict[str, str] = {}
    for token in tokens[1:]:
        if "=" not in token:
            raise RecordError(f"token {token!r} is not key=value", line_no)
        key, value = token.split("=", 1)
        if not key:
            raise RecordError(f"token {token!r} has empty key", line_no)
        if key in fields:
            raise RecordError(f"duplicate field {key!r}", line_no)
        fields[key] = value
    return kind, fields


def check_fields(kind: str, fields: dict[str, str], expected: list[str],
                 line_no: int | None = None) -> None:
    """Require exactly the expected keys, in the documented order."""
    got = list(fields)
    if got != expected:
        raise RecordError(
            f"record kind {kind!r} expects fields {expected}, got {got}", line_no)


def iter_records(text: str):
    """Yield (line_no, kind, fields) for every record line in *text*."""
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        kind, fields = parse_record(stripped, line_no)
        yield line_no, kind, fields


def read_records(path) -> list[tuple[int, str, dict[str, str]]]:
    with open(path, encoding="utf-8") as fh:
        return list(iter_records(fh.read()))


def emit(kind: str, fields: list[tuple[str, str]], as_json: bool = False) -> str:
    """Render a record for CLI output, optionally as a JSON object line."""
    if as_json:
        return json.dumps({"kind": kind, **dict(fields)})
    return format_record(kind, fields)


def is_identifier(value: str) -> bool:
    """Identifiers (sample/gloss/group/signer ids, language codes) must be
    non-empty and free of whitespace, '=' and ',' so they survive the line
    format and comma-joined member lists."""
    return bool(value) and not any(ch.isspace() or ch in "=," for ch in value)
