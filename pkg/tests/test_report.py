"""Tests for corpus metrics, baseline classification and report emission."""

from __future__ import annotations

import json
import random
from pathlib import Path

import jsonschema
import pytest

from src.symex_framework.errors import EmptyCorpusError
from src.symex_framework.models import CompileOrigin, CriticalitySummary, CveRank, CweRow, FileReport
from src.symex_framework.report import (
    average_seconds,
    baseline_summary_rows,
    classify_against_baseline,
    comparison_table,
    compute_metrics,
    cwe_table,
    dumps_report,
    dumps_timings,
    emit_report,
    format_percent,
    load_baseline,
    load_reports,
    load_timings,
    metric_percentages,
    mode_comparison_rows,
    top_cves_table,
    write_report,
)
from tests.klee_payloads import CORPUS, CorpusEntry

SCHEMA_PATH = Path(__file__).resolve().parent.parent / "docs" / "report.schema.json"


def _report(cve_id: str, cwe_id: int = 416, ptr: int = 0, external: int = 0,
            origin: CompileOrigin = CompileOrigin.GENERATED) -> FileReport:
    summary = CriticalitySummary(ptr_count=ptr, external_count=external, critical_total=ptr + external)
    return FileReport(cve_id=cve_id, cwe_id=cwe_id, compile_origin=origin, attempts_used=1,
                      summary=summary, detected=summary.detected)


def _corpus_reports():
    return [_report(e.cve_id, e.cwe_id, e.ptr, e.external) for e in CORPUS]


def _detected(entry: CorpusEntry) -> bool:
    return entry.critical > 0


class TestFormatPercent:
    @pytest.mark.parametrize(
        "numerator,denominator,expected",
        [(26, 31, "83.9%"), (28, 31, "90.3%"), (3, 31, "9.7%"), (11, 31, "35.5%"), (31, 31, "100.0%"),
         (0, 31, "0.0%"), (1, 8, "12.5%"), (0, 0, "0.0%")],
    )
    def test_one_decimal(self, numerator, denominator, expected):
        assert format_percent(numerator, denominator) == expected


class TestComputeMetrics:
    def test_corpus_metrics(self):
        metrics = compute_metrics(_corpus_reports())

        assert metrics.files == 31
        assert metrics.detected == 26
        assert metrics.compiled_generated == 31
        assert metrics.total_critical == sum(e.critical for e in CORPUS)
        assert metric_percentages(metrics)["detection_rate"] == "83.9%"

    def test_origins_are_counted_separately(self):
        reports = [_report(f"CVE-2021-{1000 + i}", origin=CompileOrigin.FALLBACK) for i in range(3)]
        reports += [_report(f"CVE-2021-{2000 + i}", external=1) for i in range(28)]

        percentages = metric_percentages(compute_metrics(reports))

        assert percentages == {"compile_rate": "90.3%", "fallback_rate": "9.7%", "detection_rate": "90.3%"}

    def test_empty_corpus(self):
        with pytest.raises(EmptyCorpusError, match="empty corpus"):
            compute_metrics([])


class TestBaselineClassification:
    """Four-way partition against a baseline warning map."""

    def test_corpus_partition(self):
        detected = [e.cve_id for e in CORPUS if _detected(e)]
        baseline = {cve_id: 2 for cve_id in detected[:11]}
        baseline.update({e.cve_id: 0 for e in CORPUS if e.cve_id not in baseline})

        comparison = classify_against_baseline(_corpus_reports(), baseline)

        assert comparison.counts() == (15, 0, 11, 5)
        assert comparison.both == sorted(detected[:11])
        assert format_percent(len(comparison.both), 31) == "35.5%"
        assert comparison.baseline_detected == 11
        assert comparison.baseline_issues == 22
        missed = sum(e.critical for e in CORPUS if _detected(e) and e.cve_id not in detected[:11])
        assert comparison.only_ours_critical == missed

    def test_partition_is_exhaustive_and_disjoint(self):
        rng = random.Random(99)
        for _ in range(500):
            reports = [
                _report(f"CVE-2021-{n}", external=rng.choice([0, 0, 1, 7]))
                for n in rng.sample(range(1000, 9999), 31)
            ]
            baseline = {r.cve_id: rng.randint(0, 3) for r in reports if rng.random() < 0.8}

            comparison = classify_against_baseline(reports, baseline)

            buckets = [comparison.only_ours, comparison.only_baseline, comparison.both, comparison.neither]
            assert sum(comparison.counts()) == len(reports)
            assert sorted(cve for bucket in buckets for cve in bucket) == sorted(r.cve_id for r in reports)
            for report in reports:
                flagged = baseline.get(report.cve_id, 0) >= 1
                assert (report.cve_id in comparison.both) == (report.detected and flagged)
                assert (report.cve_id in comparison.neither) == (not report.detected and not flagged)

    def test_missing_baseline_entry_counts_as_unflagged(self):
        comparison = classify_against_baseline([_report("CVE-2021-29930")], {})

        assert comparison.neither == ["CVE-2021-29930"]


class TestEmitReport:
    def test_document_matches_schema(self):
        reports = _corpus_reports()
        comparison = classify_against_baseline(reports, {"CVE-2020-35904": 3})
        schema = json.loads(SCHEMA_PATH.read_text(encoding="utf-8"))

        document = emit_report(reports, compute_metrics(reports), comparison)

        jsonschema.validate(json.loads(dumps_report(document)), schema)
        assert document["schema_version"] == "1.0"
        assert [f["cve_id"] for f in document["files"]] == sorted(e.cve_id for e in CORPUS)
        assert document["metrics_display"]["detection_rate"] == "83.9%"
        assert document["confidence_weights"]["ptr"] == 1.0

    def test_rates_recomputed_from_document_match_metrics(self):
        reports = [_report(f"CVE-2021-{1000 + i}", origin=CompileOrigin.FALLBACK) for i in range(4)]
        reports += [_report(f"CVE-2021-{2000 + i}", ptr=i % 3, external=i % 2) for i in range(27)]
        metrics = compute_metrics(reports)

        document = json.loads(dumps_report(emit_report(reports, metrics)))

        files = document["files"]
        generated = sum(1 for f in files if f["compile_origin"] == "generated")
        fallback = sum(1 for f in files if f["compile_origin"] == "fallback")
        detected = sum(1 for f in files if f["detected"])
        assert document["metrics"]["files"] == len(files) == metrics.files
        assert document["metrics"]["compile_rate"] == generated / len(files) == metrics.compile_rate
        assert document["metrics"]["fallback_rate"] == fallback / len(files) == metrics.fallback_rate
        assert document["metrics"]["detection_rate"] == detected / len(files) == metrics.detection_rate
        assert document["metrics"]["total_critical"] == sum(f["summary"]["critical_total"] for f in files)
        assert document["metrics_display"]["detection_rate"] == format_percent(detected, len(files))

    def test_baseline_detection_rate_is_displayed(self):
        reports = _corpus_reports()
        detected = [e.cve_id for e in CORPUS if _detected(e)]

        document = emit_report(reports, compute_metrics(reports),
                               classify_against_baseline(reports, {cve_id: 1 for cve_id in detected[:11]}))

        assert document["metrics_display"]["baseline_detection_rate"] == "35.5%"
        assert document["baseline_comparison"]["baseline_issues"] == 11

    def test_comparison_is_optional(self):
        reports = [_report("CVE-2021-31162", 415, 9, 9)]

        document = emit_report(reports, compute_metrics(reports))

        assert "baseline_comparison" not in document

    def test_failed_file_still_valid(self):
        failed = FileReport(cve_id="CVE-2021-45709", cwe_id=134, failed_stage="codegen",
                            error_message="fallback template did not compile", compile_origin=CompileOrigin.FAILED)
        schema = json.loads(SCHEMA_PATH.read_text(encoding="utf-8"))

        jsonschema.validate(emit_report([failed], compute_metrics([failed])), schema)

    def test_write_and_load_round_trip(self, tmp_path):
        reports = _corpus_reports()[:3]

        path = write_report(emit_report(reports, compute_metrics(reports)), tmp_path / "nested" / "report.json")

        assert load_reports(path) == sorted(reports, key=lambda r: r.cve_id)

    def test_load_single_file_report(self, tmp_path):
        path = tmp_path / "report.json"
        path.write_text(_report("CVE-2021-28878", 125, 3, 5).model_dump_json(), encoding="utf-8")

        assert [r.cve_id for r in load_reports(path)] == ["CVE-2021-28878"]


class TestTimings:
    def test_average_from_file_beside_report(self, tmp_path):
        (tmp_path / "timings.json").write_text(dumps_timings({"CVE-2021-28878": 3.0, "CVE-2020-35904": 5.0}))

        timings = load_timings(tmp_path / "report.json")

        assert timings == {"CVE-2020-35904": 5.0, "CVE-2021-28878": 3.0}
        assert average_seconds(timings) == 4.0

    def test_missing_file_means_no_average(self, tmp_path):
        assert load_timings(tmp_path / "report.json") is None
        assert average_seconds(None) is None


class TestLoadBaseline:
    def test_counts_are_integers(self, tmp_path):
        path = tmp_path / "baseline.json"
        path.write_text('{"CVE-2020-35904": 2, "CVE-2021-29930": 0}', encoding="utf-8")

        assert load_baseline(path) == {"CVE-2020-35904": 2, "CVE-2021-29930": 0}

    def test_rejects_non_object(self, tmp_path):
        path = tmp_path / "baseline.json"
        path.write_text('["CVE-2020-35904"]', encoding="utf-8")

        with pytest.raises(ValueError, match="JSON object"):
            load_baseline(path)


class TestTables:
    def test_cwe_table(self):
        text = cwe_table([CweRow(cwe_id=416, files=9, detected_files=6, detection_rate=6 / 9, critical_errors=19)])

        header, rule, row = text.splitlines()
        assert header.split() == ["CWE", "Files", "Det.", "Rate", "Errors"]
        assert set(rule.replace(" ", "")) == {"-"}
        assert row.split() == ["416", "9", "6", "66.7%", "19"]

    def test_top_cves_table(self):
        text = top_cves_table([CveRank(cve_id="CVE-2020-35904", ptr=48, external=704, total=752)])

        assert text.splitlines()[2].split() == ["CVE-2020-35904", "48", "704", "752"]

    def test_comparison_table_totals(self):
        comparison = classify_against_baseline([_report("CVE-2021-28878", external=1)], {"CVE-2021-28878": 1})

        lines = comparison_table(comparison).splitlines()

        assert lines[-1].split() == ["Total", "1"]
        assert lines[4].split() == ["Both", "1"]

    def test_mode_comparison_rows(self):
        single = compute_metrics([_report("CVE-2021-28878", origin=CompileOrigin.FALLBACK),
                                  _report("CVE-2021-28877", external=2)])
        multi = compute_metrics([_report("CVE-2021-28878", ptr=1), _report("CVE-2021-28877", external=2)])

        rows = mode_comparison_rows(single, multi)

        assert rows[0] == ("Wrapper compile rate", "50.0%", "100.0%")
        assert rows[2] == ("Detection rate (files)", "50.0%", "100.0%")
        assert rows[3] == ("Total critical errors", "2", "3")
        assert len(rows) == 4

    def test_mode_comparison_time_row(self):
        metrics = compute_metrics([_report("CVE-2021-28878", ptr=1)])

        rows = mode_comparison_rows(metrics, metrics, 12.04, 31.26)

        assert rows[-1] == ("Average time per file (s)", "12.0", "31.3")

    def test_baseline_summary_rows(self):
        reports = [_report("CVE-2020-35904", 131, 48, 704), _report("CVE-2021-28878", 125, 3, 5),
                   _report("CVE-2021-29930", 190)]
        comparison = classify_against_baseline(reports, {"CVE-2021-28878": 4, "CVE-2021-29930": 2})

        rows = baseline_summary_rows(comparison, compute_metrics(reports))

        assert rows == [
            ("Files flagged", "2/3 (66.7%)", "2/3 (66.7%)"),
            ("Issues reported", "760", "6"),
            ("Critical errors in only-ours files", "752", "-"),
        ]
