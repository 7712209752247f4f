"""Long-format CSV and JSON output for run reports."""
from __future__ import annotations

import csv
import io
import json

from .runner import RunReport

CSV_HEADER = ("index", "dataset", "workload", "metric", "value")
CSV_PERCENTILES = (1, 5, 10, 25, 50, 75, 90, 95, 99)
# metrics that carry wall-clock time; everything else is deterministic
WALL_METRICS = ("latency_mean_ns",) + tuple(f"latency_p{q}" for q in CSV_PERCENTILES) + ("build_seconds",)


def metric_rows(r: RunReport) -> list[tuple[str, object]]:
    pct = r.percentiles()
    rows = [
        ("ops", r.ops),
        ("inserts", r.inserts),
        ("lookups", r.lookups),
        ("result_count", r.result_count),
        ("result_digest", r.result_digest),
        ("mean_leaf_io", round(r.mean(r.leaf_io), 6)),
        ("mean_inner_io", round(r.mean(r.inner_io), 6)),
        ("mean_io", round(r.mean(r.leaf_io) + r.mean(r.inner_io), 6)),
        ("mean_page_writes", round(r.mean(r.page_writes), 6)),
        ("splits", r.splits),
        ("split_ratio", round(r.split_ratio, 6)),
    ]
    for k in ("height", "size_bytes", "page_count", "utilization", "adjustments"):
        rows.append((k, r.stats.get(k, "")))
    rows.append(("latency_mean_ns", round(r.mean(r.latencies), 3)))
    rows += [(f"latency_p{q}", pct[q]) for q in CSV_PERCENTILES]
    if "build_seconds" in r.stats:
        rows.append(("build_seconds", r.stats["build_seconds"]))
    return rows


def report_json(r: RunReport) -> dict:
    return {
        "index": r.index,
        "dataset": r.dataset,
        "workload": r.workload,
        "metrics": dict(metric_rows(r)),
        "percentiles": {str(q): v for q, v in r.percentiles().items()},
        "stats": r.stats,
        "config": r.config,
    }


def report_emit(reports, csv_path=None, json_path=None) -> tuple[str, str]:
    """Render reports as long-format CSV plus a JSON mirror; write them when
    paths are given.  Returns (csv_text, json_text)."""
    reports = list(reports)
    if not reports:
        raise ValueError("nothing to report")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in reports:
        for metric, value in metric_rows(r):
            w.writerow((r.index, r.dataset, r.workload, metric, value))
    csv_text = buf.getvalue()
    json_text = json.dumps([report_json(r) for r in reports], indent=2, sort_keys=True) + "\n"
    if csv_path is not None:
        with open(csv_path, "w") as fh:
            fh.write(csv_text)
    if json_path is not None:
        with open(json_path, "w") as fh:
            fh.write(json_text)
    return csv_text, json_text


def json_to_csv(docs: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for d in docs:
        for metric, value in d["metrics"].items():
            w.writerow((d["index"], d["dataset"], d["workload"], metric, value))
    return buf.getvalue()


def strip_wall(csv_text: str) -> str:
    """CSV without wall-time rows, for determinism comparisons."""
    rows = [row for row in csv.reader(io.StringIO(csv_text)) if len(row) < 4 or row[3] not in WALL_METRICS]
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()
