"""
Corpus metrics, baseline classification and the JSON vulnerability report
"""

import json
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import structlog

from .config import DEFAULT_CONFIDENCE_WEIGHTS
from .errors import EmptyCorpusError
from .models import (
    BaselineComparison,
    CompileOrigin,
    CveRank,
    CweRow,
    FileReport,
    RunMetrics,
    model_to_jsonable,
)

logger = structlog.get_logger(__name__)

SCHEMA_VERSION = "1.0"
TIMINGS_FILE = "timings.json"


def format_percent(numerator: int, denominator: int) -> str:
    """Percentage with one decimal, rounding half up (26/31 -> '83.9%')"""
    if denominator == 0:
        return "0.0%"
    value = (Decimal(numerator) * 100 / Decimal(denominator)).quantize(Decimal("0.1"), rounding=ROUND_HALF_UP)
    return f"{value}%"


def compute_metrics(reports: Sequence[FileReport]) -> RunMetrics:
    if not reports:
        raise EmptyCorpusError("empty corpus")
    files = len(reports)
    generated = sum(1 for r in reports if r.compile_origin == CompileOrigin.GENERATED)
    fallback = sum(1 for r in reports if r.compile_origin == CompileOrigin.FALLBACK)
    detected = sum(1 for r in reports if r.detected)
    return RunMetrics(
        files=files,
        compiled_generated=generated,
        fallback_used=fallback,
        detected=detected,
        compile_rate=generated / files,
        fallback_rate=fallback / files,
        detection_rate=detected / files,
        total_critical=sum(r.summary.critical_total for r in reports),
    )


def metric_percentages(metrics: RunMetrics) -> Dict[str, str]:
    return {
        "compile_rate": format_percent(metrics.compiled_generated, metrics.files),
        "fallback_rate": format_percent(metrics.fallback_used, metrics.files),
        "detection_rate": format_percent(metrics.detected, metrics.files),
    }


def classify_against_baseline(
    reports: Sequence[FileReport], baseline: Mapping[str, int]
) -> BaselineComparison:
    """Split the corpus into only-ours / only-baseline / both / neither"""
    buckets: Dict[str, List[str]] = {"only_ours": [], "only_baseline": [], "both": [], "neither": []}
    issues = 0
    only_ours_critical = 0
    for report in reports:
        issues += max(0, baseline.get(report.cve_id, 0))
        if report.cve_id not in baseline:
            logger.warning("baseline_missing", cve_id=report.cve_id)
        flagged = baseline.get(report.cve_id, 0) >= 1
        if report.detected and not flagged:
            buckets["only_ours"].append(report.cve_id)
            only_ours_critical += report.summary.critical_total
        elif flagged and not report.detected:
            buckets["only_baseline"].append(report.cve_id)
        elif flagged:
            buckets["both"].append(report.cve_id)
        else:
            buckets["neither"].append(report.cve_id)
    return BaselineComparison(
        **{name: sorted(ids) for name, ids in buckets.items()},
        baseline_detected=len(buckets["only_baseline"]) + len(buckets["both"]),
        baseline_issues=issues,
        only_ours_critical=only_ours_critical,
    )


def emit_report(
    reports: Sequence[FileReport],
    metrics: RunMetrics,
    comparison: Optional[BaselineComparison] = None,
    confidence_weights: Optional[Mapping[str, float]] = None,
) -> Dict[str, Any]:
    document: Dict[str, Any] = {
        "schema_version": SCHEMA_VERSION,
        "files": [model_to_jsonable(r) for r in sorted(reports, key=lambda r: r.cve_id)],
        "metrics": model_to_jsonable(metrics),
        "metrics_display": metric_percentages(metrics),
        "confidence_weights": dict(sorted((confidence_weights or DEFAULT_CONFIDENCE_WEIGHTS).items())),
    }
    if comparison is not None:
        document["baseline_comparison"] = model_to_jsonable(comparison)
        document["metrics_display"]["baseline_detection_rate"] = format_percent(
            comparison.baseline_detected, comparison.files
        )
    return document


def dumps_report(document: Mapping[str, Any]) -> str:
    return json.dumps(document, indent=2, sort_keys=True) + "\n"


def write_report(document: Mapping[str, Any], path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_report(document), encoding="utf-8")
    return path


def load_reports(path: Path) -> List[FileReport]:
    """File reports from a corpus report or a single per-file ``report.json``"""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if isinstance(data, dict) and "files" in data:
        return [FileReport.model_validate(entry) for entry in data["files"]]
    return [FileReport.model_validate(data)]


def load_baseline(path: Path) -> Dict[str, int]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, dict):
        raise ValueError("baseline must be a JSON object of CVE id -> warning count")
    return {str(cve_id): int(count) for cve_id, count in data.items()}


def dumps_timings(elapsed: Mapping[str, float]) -> str:
    return json.dumps({cve_id: round(seconds, 3) for cve_id, seconds in sorted(elapsed.items())}, indent=2) + "\n"


def load_timings(report_path: Path) -> Optional[Dict[str, float]]:
    """Per-file wall-clock seconds from the ``timings.json`` beside a report, if one was written"""
    path = Path(report_path).parent / TIMINGS_FILE
    if not path.is_file():
        return None
    data = json.loads(path.read_text(encoding="utf-8"))
    if not isinstance(data, dict):
        raise ValueError(f"{path} must hold a JSON object of CVE id -> seconds")
    return {str(cve_id): float(seconds) for cve_id, seconds in data.items()}


def average_seconds(timings: Optional[Mapping[str, float]]) -> Optional[float]:
    if not timings:
        return None
    return sum(timings.values()) / len(timings)


# ---------------------------------------------------------------------------
# Text tables
# ---------------------------------------------------------------------------


def render_table(headers: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    cells = [list(map(str, headers))] + [[str(c) for c in row] for row in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(headers))]

    def line(row: List[str]) -> str:
        return "  ".join(cell.ljust(width) for cell, width in zip(row, widths)).rstrip()

    rule = "  ".join("-" * width for width in widths)
    return "\n".join([line(cells[0]), rule] + [line(row) for row in cells[1:]]) + "\n"


def cwe_table(rows: Sequence[CweRow]) -> str:
    return render_table(
        ["CWE", "Files", "Det.", "Rate", "Errors"],
        [(r.cwe_id, r.files, r.detected_files, format_percent(r.detected_files, r.files), r.critical_errors)
         for r in rows],
    )


def top_cves_table(ranks: Sequence[CveRank]) -> str:
    return render_table(["CVE", "ptr", "ext", "Total"], [(r.cve_id, r.ptr, r.external, r.total) for r in ranks])


def comparison_table(comparison: BaselineComparison) -> str:
    only_ours, only_baseline, both, neither = comparison.counts()
    return render_table(
        ["Category", "Files"],
        [("Only ours", only_ours), ("Only baseline", only_baseline), ("Both", both), ("Neither", neither),
         ("Total", only_ours + only_baseline + both + neither)],
    )


def mode_comparison_rows(single: RunMetrics, multi: RunMetrics,
                         single_seconds: Optional[float] = None,
                         multi_seconds: Optional[float] = None) -> List[Tuple[str, str, str]]:
    """Single-agent versus four-agent metric rows; the timing row needs both averages"""
    rows = [
        ("Wrapper compile rate", format_percent(single.compiled_generated, single.files),
         format_percent(multi.compiled_generated, multi.files)),
        ("Fallback template rate", format_percent(single.fallback_used, single.files),
         format_percent(multi.fallback_used, multi.files)),
        ("Detection rate (files)", format_percent(single.detected, single.files),
         format_percent(multi.detected, multi.files)),
        ("Total critical errors", str(single.total_critical), str(multi.total_critical)),
    ]
    if single_seconds is not None and multi_seconds is not None:
        rows.append(("Average time per file (s)", f"{single_seconds:.1f}", f"{multi_seconds:.1f}"))
    return rows


def baseline_summary_rows(comparison: BaselineComparison, metrics: RunMetrics) -> List[Tuple[str, str, str]]:
    """Detection side by side with the baseline, plus the errors only we found"""
    files = comparison.files
    return [
        ("Files flagged", f"{metrics.detected}/{metrics.files} ({format_percent(metrics.detected, metrics.files)})",
         f"{comparison.baseline_detected}/{files} ({format_percent(comparison.baseline_detected, files)})"),
        ("Issues reported", str(metrics.total_critical), str(comparison.baseline_issues)),
        ("Critical errors in only-ours files", str(comparison.only_ours_critical), "-"),
    ]
