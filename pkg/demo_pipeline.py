#!/usr/bin/env python3
"""
Demo script: one CVE snippet through the offline pipeline with recorded KLEE output

The bundled output directory holds one ptr and one external error file, not a full run.
"""

import json
import sys
import tempfile
from pathlib import Path

# Add src to path for imports
sys.path.insert(0, str(Path(__file__).parent / "src"))

from symex_framework.agents.backends import RuleBasedBackend
from symex_framework.agents.pipeline import AgentPipeline
from symex_framework.config import RunConfig
from symex_framework.models import ExecutorSession, SessionMode
from symex_framework.snippet_ingest import load_snippet, profile_missing_context

SAMPLES = Path(__file__).parent / "samples"


def demo_pipeline():
    """Run CVE-2020-35904 through every stage and print what each produced"""
    snippet = load_snippet(SAMPLES / "cwe-131-cve-2020-35904.rs")
    profile = profile_missing_context(snippet)

    print(f"=== {snippet.cve_id} (CWE-{snippet.cwe_id}) ===")
    print(f"Lines: {snippet.line_count}")
    print(f"Unresolved identifiers: {', '.join(profile.unresolved_identifiers)}")
    print("\n" + "=" * 50 + "\n")

    session = ExecutorSession(mode=SessionMode.REPLAY, replay_dir=SAMPLES / "klee_output" / snippet.slug)
    with tempfile.TemporaryDirectory() as out_dir:
        pipeline = AgentPipeline(RuleBasedBackend(), RunConfig(), Path(out_dir))
        outcome = pipeline.run(snippet, session)
        report = outcome.report

        if report.failed_stage:
            print(f"Pipeline failed at {report.failed_stage}: {report.error_message}")
            return

        print("=== Harness ===")
        print((Path(out_dir) / snippet.slug / "harness.c").read_text())
        print("=" * 50 + "\n")

        print("=== Report ===")
        print(f"Risk score: {report.risk_score}")
        print(f"Search strategy: {report.params.search_strategy.value}")
        print(f"Critical errors: {report.summary.critical_total} "
              f"(ptr={report.summary.ptr_count}, external={report.summary.external_count})")
        for record in outcome.records:
            print(json.dumps({
                "test_id": record.test_id,
                "kind": record.kind.value,
                "faulting_function": record.faulting_function,
                "range_width": record.range_width,
            }))


if __name__ == "__main__":
    demo_pipeline()
