"""Report emission: per-run CSV and markdown tables, tidy sweep CSV.

Accuracies are printed as percentages and scores on the 0-5 scale, both to
one decimal place; aggregation keeps full precision internally.  Output is
byte-deterministic for a fixed run directory.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

from . import datasets, judging
from .errors import DataError
from .judging import BenchmarkReport
from .records import read_records


def _pct(value: float | None) -> str:
    return "" if value is None else f"{100.0 * value:.1f}"


def _score(value: float | None) -> str:
    return "" if value is None else f"{value:.1f}"


def _score2(value: float | None) -> str:
    # text-generation tables carry two decimals (3.40, ..., avg 3.17)
    return "" if value is None else f"{value:.2f}"


def report_rows(report: BenchmarkReport, label: str = "") -> tuple[list[str], list[str]]:
    """Header and value row for one report; shared by CSV and markdown."""
    header = ["benchmark", "task", "n_items", "n_failed"]
    row = [report.benchmark, report.task, str(report.n_items), str(report.n_failed)]
    if label:
        header.insert(0, "config")
        row.insert(0, label)
    if report.task == datasets.TEXT_GENERATION:
        scores = report.textgen.as_dict() if report.textgen else {}
        for metric in datasets.TEXTGEN_METRICS:
            header.append(metric)
            row.append(_score2(scores.get(metric)))
        header.append("Avg. Score")
        row.append(_score2(report.textgen_avg))
        return header, row
    if report.per_category:
        for tag, value in report.per_category.items():
            header.append(f"{tag} Acc.")
            row.append(_pct(value))
    header.append("Acc.")
    row.append(_pct(report.accuracy))
    if report.task == datasets.OPEN_ENDED:
        header.append("Score")
        row.append(_score(report.avg_score))
    if report.task == datasets.MULTIPLE_CHOICE:
        header.append("n_unparsed")
        row.append(str(report.n_unparsed))
    return header, row


def report_csv(report: BenchmarkReport, label: str = "") -> str:
    header, row = report_rows(report, label)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerow(row)
    return buf.getvalue()


def report_markdown(report: BenchmarkReport, label: str = "") -> str:
    header, row = report_rows(report, label)
    lines = [
        "| " + " | ".join(header) + " |",
        "| " + " | ".join("---" for _ in header) + " |",
        "| " + " | ".join(row) + " |",
    ]
    return "\n".join(lines) + "\n"


def sweep_csv(axis: str, reports: dict[str, BenchmarkReport]) -> str:
    """Tidy (axis, value, metric, value) rows, one per arm and metric, for
    plotting accuracy or score against the swept axis."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["axis", "value", "metric", "result"])
    for value, report in reports.items():
        if report.accuracy is not None:
            writer.writerow([axis, value, "accuracy_pct", _pct(report.accuracy)])
        if report.avg_score is not None:
            writer.writerow([axis, value, "avg_score", _score(report.avg_score)])
        if report.per_category:
            for tag, acc in report.per_category.items():
                writer.writerow([axis, value, f"accuracy_pct[{tag}]", _pct(acc)])
        writer.writerow([axis, value, "n_failed", str(report.n_failed)])
    return buf.getvalue()


def load_run_report(run_dir: str | Path) -> tuple[BenchmarkReport, str]:
    """Aggregate one run directory; returns the report and a config label."""
    run_dir = Path(run_dir)
    records_path = run_dir / "records.jsonl"
    manifest_path = run_dir / "manifest.jsonl"
    if not records_path.exists() or not manifest_path.exists():
        raise DataError(f"{run_dir} is not a run directory (missing records or manifest)")
    manifest = datasets.load_manifest(manifest_path)
    records = read_records(records_path)
    if not records:
        raise DataError(f"{run_dir} has no records")
    present = {r.item_id for r in records}
    missing = [item.id for item in manifest.items if item.id not in present]
    if missing:
        raise DataError(
            f"{run_dir} is incomplete; missing records for: {', '.join(missing[:10])}"
            + (" ..." if len(missing) > 10 else "")
        )
    label = ""
    config_path = run_dir / "config.json"
    if config_path.exists():
        label = json.loads(config_path.read_text(encoding="utf-8")).get("config_hash", "")
    try:
        return judging.aggregate(records, manifest), label
    except ValueError as exc:
        raise DataError(f"{run_dir}: {exc}")


def write_run_report(run_dir: str | Path, fmt: str, out: str | Path | None = None) -> Path:
    """Emit report files for a plain run or a sweep directory."""
    run_dir = Path(run_dir)
    sweep_meta = run_dir / "sweep.json"
    if sweep_meta.exists():
        meta = json.loads(sweep_meta.read_text(encoding="utf-8"))
        axis = meta["axis"]
        reports = {}
        for value in meta["values"]:
            report, _ = load_run_report(run_dir / "arms" / f"{axis}={value}")
            reports[value] = report
        out = Path(out) if out else run_dir / "sweep_report.csv"
        out.write_text(sweep_csv(axis, reports), encoding="utf-8")
        return out
    report, label = load_run_report(run_dir)
    if fmt == "markdown":
        out = Path(out) if out else run_dir / "report.md"
        out.write_text(report_markdown(report, label), encoding="utf-8")
    elif fmt == "csv":
        out = Path(out) if out else run_dir / "report.csv"
        out.write_text(report_csv(report, label), encoding="utf-8")
    else:
        raise DataError(f"unknown report format {fmt!r} (csv, markdown)")
    return out
