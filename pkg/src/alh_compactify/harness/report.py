"""Report serialization: versioned CSV tables or a single JSON document.

CSV output is ``report.csv`` (battery table), ``checks.csv`` and
``stages.csv``; JSON output is ``report.json``.  Wall-clock timings go to
``timings.csv`` / ``timings.json`` so that the report files themselves are
byte-identical across runs of the same configuration.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

from ..errors import AlhError
from .pipeline import SCHEMA, ExperimentReport

HEADER = f"# {SCHEMA}"
BATTERY_COLUMNS = ("estimate_id", "paper_ref", "predicted_rate", "measured_rate", "margin", "pass")
CHECK_COLUMNS = ("check_id", "stage", "value", "threshold", "pass")
STAGE_COLUMNS = ("stage", "status", "message")


class ReportIOError(AlhError, OSError):
    """Report files could not be written."""


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "pass" if v else "fail"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def csv_table(columns, rows) -> str:
    buf = io.StringIO()
    buf.write(HEADER + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for r in rows:
        writer.writerow([_fmt(r[c]) for c in columns])
    return buf.getvalue()


def report_tables(report: ExperimentReport) -> dict:
    d = report.to_dict()
    return {
        "report.csv": csv_table(BATTERY_COLUMNS, d["battery"]),
        "checks.csv": csv_table(CHECK_COLUMNS, d["checks"]),
        "stages.csv": csv_table(STAGE_COLUMNS, d["stages"]),
    }


def report_json(report: ExperimentReport) -> str:
    return json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"


def _write(path: Path, text: str) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise ReportIOError(f"cannot write {path}: {exc}") from exc
    return path


def emit_report(report: ExperimentReport, out_dir, fmt: str = "csv") -> list:
    """Write the report in ``fmt`` (csv or json) and the timings; returns the paths."""
    out = Path(out_dir)
    paths = []
    if fmt == "csv":
        for name, text in report_tables(report).items():
            paths.append(_write(out / name, text))
        rows = [{"stage": k, "seconds": round(v, 3)} for k, v in report.timings.items()]
        paths.append(_write(out / "timings.csv", csv_table(("stage", "seconds"), rows)))
    elif fmt == "json":
        paths.append(_write(out / "report.json", report_json(report)))
        timings = {k: round(v, 3) for k, v in report.timings.items()}
        paths.append(_write(out / "timings.json", json.dumps(timings, indent=2) + "\n"))
    else:
        raise ValueError(f"unknown format {fmt!r}")
    return paths


def load_report_json(path) -> dict:
    return json.loads(Path(path).read_text())


def write_rows(path, columns, rows) -> Path:
    """Plot-ready CSV with the versioned header line."""
    return _write(Path(path), csv_table(columns, [dict(zip(columns, r)) for r in rows]))
