"""CSV/JSON emission with stable schemas.

CSV writers are deterministic: fixed column order, fixed float formatting,
no timestamps — reruns of a deterministic command produce byte-identical
files. JSON reports carry a ``report`` tag and are validated against the
bundled schema before they touch disk.
"""

from __future__ import annotations

import csv
import io
import json
from importlib import resources
from pathlib import Path

import jsonschema

from .errors import FormatError

_SCHEMA = None


def report_schema() -> dict:
    global _SCHEMA
    if _SCHEMA is None:
        text = resources.files("vcut").joinpath("data/report.schema.json").read_text()
        _SCHEMA = json.loads(text)
    return _SCHEMA


def validate_report(doc: dict) -> dict:
    try:
        jsonschema.validate(doc, report_schema())
    except jsonschema.ValidationError as exc:
        raise FormatError(f"report does not match schema: {exc.message}") from exc
    return doc


def write_report(path, doc: dict) -> None:
    validate_report(doc)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _format_cell(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.6g}"
    if value is None:
        return ""
    return str(value)


def csv_text(rows, columns=None) -> str:
    rows = list(rows)
    if columns is None:
        columns = list(rows[0].keys()) if rows else []
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_format_cell(row.get(col)) for col in columns])
    return buf.getvalue()


def write_csv(path, rows, columns=None) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(csv_text(rows, columns))


def append_csv_row(path, row: dict, columns) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    line = csv_text([row], columns)
    if path.exists():
        with path.open("a") as fh:
            fh.write(line.splitlines()[1] + "\n")
    else:
        path.write_text(line)
