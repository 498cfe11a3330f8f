"""Tests for the agent stages, backends and per-file orchestration."""

from __future__ import annotations

import json
import random
from pathlib import Path
from typing import Any, Dict, List

import pytest
import requests

from src.symex_framework.agents.backends import (
    RemoteBackend,
    RuleBasedBackend,
    SingleAgentBackend,
    extract_json,
    make_backend,
)
from src.symex_framework.agents.pipeline import (
    ARTIFACT_FILES,
    AgentPipeline,
    assess_safety,
    generate_wrapper,
    plan_analysis,
    replay_output_dir,
    run_pipeline,
    select_params,
)
from src.symex_framework.config import BackendConfig, BackendKind, RunConfig
from src.symex_framework.errors import BackendError, SchemaValidationError
from src.symex_framework.models import (
    AgentRole,
    AnalysisPlan,
    CompileOrigin,
    CompileOutcome,
    Complexity,
    CveIdentity,
    ExecutorSession,
    RiskAssessment,
    SearchStrategy,
    SessionMode,
    WrapperOrigin,
)
from src.symex_framework.report import compute_metrics, dumps_report, emit_report
from src.symex_framework.snippet_ingest import load_snippet
from tests.klee_payloads import FFI_WRAPPER_FLOAT_PARAM, FFI_WRAPPER_OK, LISTING_1


@pytest.fixture
def listing_snippet(tmp_path):
    path = tmp_path / "cwe-131-cve-2020-35904.rs"
    path.write_text(LISTING_1, encoding="utf-8")
    return load_snippet(path)


class ScriptedBackend:
    """Rule-based answers, with codegen and individual roles overridable"""

    serial_only = True

    def __init__(self, codegen: List[Any] = None, overrides: Dict[AgentRole, List[Any]] = None):
        self.rules = RuleBasedBackend()
        self.codegen = list(codegen or [])
        self.overrides = {role: list(replies) for role, replies in (overrides or {}).items()}
        self.calls: List[tuple] = []

    def complete(self, role, payload):
        self.calls.append((role, payload))
        replies = self.overrides.get(role)
        if replies:
            reply = replies.pop(0) if len(replies) > 1 else replies[0]
            if isinstance(reply, Exception):
                raise reply
            return reply
        if role == AgentRole.CODEGEN and self.codegen:
            source = self.codegen.pop(0) if len(self.codegen) > 1 else self.codegen[0]
            return {"wrapper_source": source}
        return self.rules.complete(role, payload)

    def payloads(self, role):
        return [payload for called, payload in self.calls if called == role]


class CompileStub:
    def __init__(self, results: List[bool], bitcode: Path = None):
        self.results = list(results)
        self.bitcode = bitcode
        self.calls = 0

    def __call__(self, artifact):
        self.calls += 1
        ok = self.results.pop(0) if len(self.results) > 1 else self.results[0]
        if ok:
            return CompileOutcome(success=True, bitcode_path=self.bitcode)
        return CompileOutcome(success=False, diagnostic="error[E0308]: mismatched types")


PLAN_131 = AnalysisPlan(vulnerability_types=[131], complexity_estimate=Complexity.HIGH, recommended_function_count=12)
RISK_HIGH = RiskAssessment(risk_score=8.0)


class TestPlanAnalysis:
    def test_rule_backend_on_listing(self, listing_snippet):
        plan = plan_analysis(listing_snippet, RuleBasedBackend())

        assert plan.vulnerability_types == [131]
        assert plan.complexity_estimate == Complexity.HIGH
        assert 8 <= plan.recommended_function_count <= 12
        assert plan.recommended_function_count == 12

    def test_oracle_sees_missing_context(self, listing_snippet):
        backend = ScriptedBackend()

        plan_analysis(listing_snippet, backend)

        payload = backend.payloads(AgentRole.ORACLE)[0]
        assert payload["missing_context"]["missing_struct_defs"] is True
        assert "Ordering" in payload["missing_context"]["unresolved_identifiers"]

    def test_function_count_is_clamped(self, listing_snippet):
        backend = ScriptedBackend(overrides={AgentRole.ORACLE: [
            {"vulnerability_types": [131], "complexity": "low", "recommended_function_count": 40}
        ]})

        plan = plan_analysis(listing_snippet, backend)

        assert plan.recommended_function_count == 16
        assert any("clamped" in w for w in plan.warnings)

    def test_unrecognized_cwe_is_flagged_not_dropped(self, listing_snippet):
        backend = ScriptedBackend(overrides={AgentRole.ORACLE: [
            {"vulnerability_types": [131, 9999], "complexity": "medium", "recommended_function_count": 8}
        ]})

        plan = plan_analysis(listing_snippet, backend)

        assert plan.vulnerability_types == [131, 9999]
        assert plan.unrecognized_types == [9999]

    def test_invalid_reply_is_requested_again_with_the_error(self, listing_snippet):
        backend = ScriptedBackend(overrides={AgentRole.ORACLE: [
            {"complexity": "medium"},
            {"vulnerability_types": [131], "complexity": "medium", "recommended_function_count": 9},
        ]})

        plan = plan_analysis(listing_snippet, backend)

        assert plan.recommended_function_count == 9
        retry = backend.payloads(AgentRole.ORACLE)[1]
        assert "vulnerability_types" in retry["schema_error"]

    def test_second_invalid_reply_fails(self, listing_snippet):
        backend = ScriptedBackend(overrides={AgentRole.ORACLE: [{"complexity": "extreme"}]})

        with pytest.raises(SchemaValidationError, match="oracle"):
            plan_analysis(listing_snippet, backend)


class TestAssessSafety:
    def test_rule_backend_flags_from_raw_parts_line(self, listing_snippet):
        risk = assess_safety(listing_snippet, PLAN_131, RuleBasedBackend())

        raw_parts_line = LISTING_1.splitlines().index(
            "    unsafe { Vec::from_raw_parts(self.buffer, 0, self.cap); }"
        ) + 1
        assert raw_parts_line in risk.critical_lines
        assert risk.critical_lines == [10, 12, 16]
        assert risk.risk_score == 8.0
        assert [p.name for p in risk.patterns] == ["from_raw_parts", "drop_in_place", "add"]

    def test_out_of_plan_patterns_and_lines_are_dropped(self, listing_snippet):
        backend = ScriptedBackend(overrides={AgentRole.SAFETY: [{
            "patterns": [{"name": "raw", "cwe_id": 131}, {"name": "stray", "cwe_id": 787}],
            "risk_score": 14,
            "critical_lines": [3, 99, 3],
        }]})

        risk = assess_safety(listing_snippet, PLAN_131, backend)

        assert [p.name for p in risk.patterns] == ["raw"]
        assert risk.critical_lines == [3]
        assert risk.risk_score == 10.0
        assert any("stray" in w for w in risk.warnings)
        assert any("99" in w for w in risk.warnings)


class TestGenerateWrapper:
    """Compile-repair loop and the template fallback."""

    def test_persistent_failure_falls_back_after_two_repairs(self, listing_snippet):
        backend = ScriptedBackend(codegen=[FFI_WRAPPER_OK])
        compile_stub = CompileStub([False])

        artifact = generate_wrapper(listing_snippet, PLAN_131, RISK_HIGH, backend, compile_stub)

        requests_made = backend.payloads(AgentRole.CODEGEN)
        assert len(requests_made) == 3
        assert sum(1 for p in requests_made if "diagnostic" in p) == 2
        assert requests_made[1]["diagnostic"] == "error[E0308]: mismatched types"
        assert artifact.origin == WrapperOrigin.FALLBACK
        assert artifact.attempts_used == 3
        assert artifact.bitcode_path is None
        assert compile_stub.calls == 4
        assert artifact.exported_functions[0].name == "buffer_overflow_write"

    def test_success_on_second_attempt(self, listing_snippet, tmp_path):
        compile_stub = CompileStub([False, True], bitcode=tmp_path / "wrapper.bc")

        artifact = generate_wrapper(listing_snippet, PLAN_131, RISK_HIGH, ScriptedBackend([FFI_WRAPPER_OK]), compile_stub)

        assert artifact.origin == WrapperOrigin.GENERATED
        assert artifact.attempts_used == 2
        assert artifact.bitcode_path == tmp_path / "wrapper.bc"

    def test_validation_error_is_fed_back(self, listing_snippet):
        backend = ScriptedBackend(codegen=[FFI_WRAPPER_FLOAT_PARAM, FFI_WRAPPER_OK])
        compile_stub = CompileStub([True])

        artifact = generate_wrapper(listing_snippet, PLAN_131, RISK_HIGH, backend, compile_stub)

        assert artifact.attempts_used == 2
        assert "scale_sample" in backend.payloads(AgentRole.CODEGEN)[1]["diagnostic"]
        assert compile_stub.calls == 1

    def test_reply_without_source_counts_as_failed_attempt(self, listing_snippet):
        backend = ScriptedBackend(overrides={AgentRole.CODEGEN: [{"code": "fn f() {}"}]})

        artifact = generate_wrapper(listing_snippet, PLAN_131, RISK_HIGH, backend, CompileStub([True]))

        assert artifact.origin == WrapperOrigin.FALLBACK
        assert "codegen schema" in backend.payloads(AgentRole.CODEGEN)[1]["diagnostic"]

    def test_compiler_diagnostic_reaches_repair_prompt_unchanged(self, listing_snippet):
        diagnostic = "  error[E0308]: mismatched types\n   --> wrapper.rs:3:5\n\n"
        backend = ScriptedBackend(codegen=[FFI_WRAPPER_OK])
        outcomes = [CompileOutcome(success=False, diagnostic=diagnostic), CompileOutcome(success=True)]

        generate_wrapper(listing_snippet, PLAN_131, RISK_HIGH, backend, lambda artifact: outcomes.pop(0))

        assert backend.payloads(AgentRole.CODEGEN)[1]["diagnostic"] == diagnostic

    def test_backend_failure_propagates(self, listing_snippet):
        backend = ScriptedBackend(overrides={AgentRole.CODEGEN: [BackendError("connection reset")]})

        with pytest.raises(BackendError):
            generate_wrapper(listing_snippet, PLAN_131, RISK_HIGH, backend, CompileStub([True]))


class TestSelectParams:
    @pytest.mark.parametrize(
        "score, expected",
        [
            (2.0, (SearchStrategy.DFS, 30, 512, 32)),
            (5.0, (SearchStrategy.RANDOM_PATH, 60, 1024, 64)),
            (7.0, (SearchStrategy.RANDOM_PATH, 60, 1024, 64)),
            (8.0, (SearchStrategy.RANDOM_PATH, 120, 2048, 128)),
        ],
    )
    def test_rule_backend_risk_bands(self, score, expected):
        params = select_params(RiskAssessment(risk_score=score), PLAN_131, RuleBasedBackend())

        assert (params.search_strategy, params.time_limit_s, params.memory_limit_mb, params.max_fork_depth) == expected

    def test_backend_failure_uses_defaults(self):
        backend = ScriptedBackend(overrides={AgentRole.FILTER: [BackendError("timeout")]})

        params = select_params(RISK_HIGH, PLAN_131, backend)

        assert params.search_strategy == SearchStrategy.DFS
        assert params.time_limit_s == 60
        assert params.warnings and "default parameters used" in params.warnings[0]

    def test_hyphenated_strategy_and_clamping(self):
        backend = ScriptedBackend(overrides={AgentRole.FILTER: [
            {"search_strategy": "Random-Path", "time_limit_s": 0, "memory_limit_mb": 256, "max_fork_depth": 16}
        ]})

        params = select_params(RISK_HIGH, PLAN_131, backend)

        assert params.search_strategy == SearchStrategy.RANDOM_PATH
        assert params.time_limit_s == 1
        assert any("time_limit_s" in w for w in params.warnings)


class TestRuleBasedBackend:
    KEYWORD_LINES = [
        "let v = Vec::from_raw_parts(p, 0, cap);",
        "dealloc(p, layout);",
        "ptr::drop_in_place(slot);",
        "let q = p.add(i);",
        "let b = *s.get_unchecked(i);",
        "let x: u64 = transmute(y);",
        "let safe = a + b;",
        "unsafe { touch(); }",
    ]

    def _random_source(self, rng: random.Random) -> str:
        return "\n".join(rng.choice(self.KEYWORD_LINES) for _ in range(rng.randint(1, 12))) + "\n"

    def test_deterministic_and_monotone(self):
        rng = random.Random(99)
        backend = RuleBasedBackend()
        for _ in range(250):
            source = self._random_source(rng)
            plan = backend.complete(AgentRole.ORACLE, {"source_text": source, "cwe_id": 416})
            payload = {"source_text": source, "plan": plan}

            first = backend.complete(AgentRole.SAFETY, payload)
            assert backend.complete(AgentRole.SAFETY, payload) == first
            assert plan["recommended_function_count"] in (8, 12)

            extended = dict(payload, source_text=source + "dealloc(p, layout);\n")
            assert backend.complete(AgentRole.SAFETY, extended)["risk_score"] >= first["risk_score"]

    def test_codegen_emits_the_plan_template(self):
        reply = RuleBasedBackend().complete(AgentRole.CODEGEN, {"plan": {"vulnerability_types": [415]}})

        assert "double_free_trigger" in reply["wrapper_source"]

    def test_make_backend(self):
        assert isinstance(make_backend(BackendConfig()), RuleBasedBackend)
        assert isinstance(make_backend(BackendConfig(kind=BackendKind.REMOTE)), RemoteBackend)


class TestSingleAgentBackend:
    def test_plan_from_metadata_and_default_params(self, listing_snippet):
        backend = SingleAgentBackend(RuleBasedBackend())

        plan = plan_analysis(listing_snippet, backend)
        params = select_params(RISK_HIGH, plan, backend)

        assert plan.complexity_estimate == Complexity.MEDIUM
        assert plan.recommended_function_count == 8
        assert params.search_strategy == SearchStrategy.DFS
        assert params.time_limit_s == 60
        assert params.warnings == []


class FakeResponse:
    def __init__(self, payload, status=200):
        self.payload = payload
        self.status = status

    def raise_for_status(self):
        if self.status >= 400:
            raise requests.HTTPError(f"{self.status} Server Error")

    def json(self):
        return self.payload


class FakeSession:
    def __init__(self, responses):
        self.responses = list(responses)
        self.sent = []

    def post(self, url, json=None, headers=None, timeout=None):
        self.sent.append({"url": url, "json": json, "headers": headers, "timeout": timeout})
        return self.responses.pop(0)


def _chat(content: str) -> FakeResponse:
    return FakeResponse({"choices": [{"message": {"content": content}}]})


class TestRemoteBackend:
    """Chat-completions transport with a fake HTTP session."""

    def test_fenced_reply_is_decoded(self, monkeypatch):
        monkeypatch.setenv("SYMEX_LLM_API_KEY", "secret")
        reply = '```json\n{"vulnerability_types": [131], "complexity": "high", "recommended_function_count": 10}\n```'
        session = FakeSession([_chat(reply)])
        backend = RemoteBackend(BackendConfig(kind=BackendKind.REMOTE, base_url="https://llm.example/v1/"), session)

        answer = backend.complete(AgentRole.ORACLE, {"cve_id": "CVE-2020-35904"})

        assert answer["recommended_function_count"] == 10
        sent = session.sent[0]
        assert sent["url"] == "https://llm.example/v1/chat/completions"
        assert sent["headers"]["Authorization"] == "Bearer secret"
        assert sent["json"]["model"] == "gpt-4-turbo"
        assert json.loads(sent["json"]["messages"][1]["content"]) == {"cve_id": "CVE-2020-35904"}

    def test_http_error_becomes_backend_error(self, monkeypatch):
        monkeypatch.setenv("SYMEX_LLM_API_KEY", "secret")
        backend = RemoteBackend(BackendConfig(kind=BackendKind.REMOTE), FakeSession([FakeResponse({}, status=500)]))

        with pytest.raises(BackendError, match="safety request failed"):
            backend.complete(AgentRole.SAFETY, {})

    def test_missing_api_key(self, monkeypatch):
        monkeypatch.delenv("SYMEX_LLM_API_KEY", raising=False)
        backend = RemoteBackend(BackendConfig(kind=BackendKind.REMOTE), FakeSession([]))

        with pytest.raises(BackendError, match="SYMEX_LLM_API_KEY"):
            backend.complete(AgentRole.FILTER, {})

    def test_extract_json_tolerates_chatter(self):
        assert extract_json('Sure, here it is: {"a": 1} hope that helps') == {"a": 1}
        with pytest.raises(BackendError, match="no JSON object"):
            extract_json("I cannot help with that")
        with pytest.raises(BackendError, match="not an object"):
            extract_json("[1, 2]")


class TestAgentPipeline:
    """End-to-end per-file runs against recorded executor output."""

    def test_listing_replay_report(self, listing_snippet, cve_35904_output, tmp_path):
        out = tmp_path / "out"
        session = ExecutorSession(mode=SessionMode.REPLAY, replay_dir=cve_35904_output)

        outcome = AgentPipeline(RuleBasedBackend(), RunConfig(), out).run(listing_snippet, session)

        report = outcome.report
        assert report.summary.ptr_count == 48
        assert report.summary.external_count == 704
        assert report.summary.critical_total == 752
        assert report.detected is True
        assert report.failed_stage is None
        assert report.compile_origin == CompileOrigin.GENERATED
        assert report.attempts_used == 1
        assert report.risk_score == 8.0
        assert report.params.search_strategy == SearchStrategy.RANDOM_PATH
        assert report.confidence_score == pytest.approx(48 * 1.0 + 704 * 0.5)
        assert len(outcome.records) == 752

    def test_artifacts_persisted(self, listing_snippet, cve_35904_output, tmp_path):
        out = tmp_path / "out"
        session = ExecutorSession(mode=SessionMode.REPLAY, replay_dir=cve_35904_output)

        report = run_pipeline(listing_snippet, RuleBasedBackend(), session, out)

        file_dir = out / "cwe-131-cve-2020-35904"
        for name in ("plan.json", "risk.json", "wrapper.rs", "harness.c", "params.json"):
            assert (file_dir / name).is_file(), name
        assert report.artifact_paths == ARTIFACT_FILES
        assert 'klee_range(0, 4, "path")' in (file_dir / "harness.c").read_text()
        stored = json.loads((file_dir / "report.json").read_text())
        assert stored["summary"]["critical_total"] == 752
        assert len(json.loads((file_dir / "records.json").read_text())) == 752

    def test_oracle_failure_is_reported(self, listing_snippet, cve_35904_output, tmp_path):
        backend = ScriptedBackend(overrides={AgentRole.ORACLE: [BackendError("503 from backend")]})
        session = ExecutorSession(mode=SessionMode.REPLAY, replay_dir=cve_35904_output)

        report = run_pipeline(listing_snippet, backend, session, tmp_path / "out")

        assert report.failed_stage == "oracle"
        assert report.detected is False
        assert "503" in report.error_message
        assert (tmp_path / "out" / "cwe-131-cve-2020-35904" / "report.json").is_file()
        assert not (tmp_path / "out" / "cwe-131-cve-2020-35904" / "plan.json").exists()

    def test_live_session_needs_live_toolchain(self, listing_snippet, tmp_path):
        session = ExecutorSession(mode=SessionMode.LIVE, executor_command="klee {flags} --output-dir={output} {input}")

        report = run_pipeline(listing_snippet, RuleBasedBackend(), session, tmp_path / "out")

        assert report.failed_stage == "executor"
        assert "toolchain is offline" in report.error_message
        assert report.compile_origin == CompileOrigin.GENERATED

    def test_missing_replay_dir_fails_executor_stage(self, listing_snippet, tmp_path):
        session = ExecutorSession(mode=SessionMode.REPLAY, replay_dir=tmp_path / "nowhere")

        report = run_pipeline(listing_snippet, RuleBasedBackend(), session, tmp_path / "out")

        assert report.failed_stage == "executor"
        assert report.summary.critical_total == 0

    def test_stages_receive_earlier_outputs(self, listing_snippet, cve_35904_output, tmp_path):
        backend = ScriptedBackend()
        session = ExecutorSession(mode=SessionMode.REPLAY, replay_dir=cve_35904_output)

        run_pipeline(listing_snippet, backend, session, tmp_path / "out")

        file_dir = tmp_path / "out" / "cwe-131-cve-2020-35904"
        plan = json.loads((file_dir / "plan.json").read_text())
        risk = json.loads((file_dir / "risk.json").read_text())
        assert [role for role, _ in backend.calls] == [
            AgentRole.ORACLE, AgentRole.SAFETY, AgentRole.CODEGEN, AgentRole.FILTER,
        ]
        assert backend.payloads(AgentRole.SAFETY)[0]["plan"] == plan
        codegen = backend.payloads(AgentRole.CODEGEN)[0]
        assert (codegen["plan"], codegen["risk"]) == (plan, risk)
        assert backend.payloads(AgentRole.FILTER)[0]["risk"] == risk

    def test_offline_runs_are_byte_identical(self, listing_snippet, cve_35904_output, tmp_path):
        session = ExecutorSession(mode=SessionMode.REPLAY, replay_dir=cve_35904_output)
        documents = []
        trees = []
        for name in ("first", "second"):
            outcome = AgentPipeline(RuleBasedBackend(), RunConfig(), tmp_path / name).run(listing_snippet, session)
            reports = [outcome.report]
            documents.append(dumps_report(emit_report(reports, compute_metrics(reports))))
            file_dir = tmp_path / name / "cwe-131-cve-2020-35904"
            trees.append({p.name: p.read_bytes() for p in sorted(file_dir.iterdir()) if p.is_file()})

        assert documents[0] == documents[1]
        assert sorted(trees[0]) == sorted(ARTIFACT_FILES.values())
        assert trees[0] == trees[1]

    def test_os_error_in_a_stage_becomes_a_failed_report(self, listing_snippet, cve_35904_output, tmp_path):
        backend = ScriptedBackend(overrides={AgentRole.CODEGEN: [PermissionError("scratch dir is read-only")]})
        session = ExecutorSession(mode=SessionMode.REPLAY, replay_dir=cve_35904_output)

        report = run_pipeline(listing_snippet, backend, session, tmp_path / "out")

        assert report.failed_stage == "codegen"
        assert "read-only" in report.error_message
        assert (tmp_path / "out" / "cwe-131-cve-2020-35904" / "report.json").is_file()

    def test_unwritable_output_directory_is_reported(self, listing_snippet, cve_35904_output, tmp_path):
        blocker = tmp_path / "out"
        blocker.write_text("not a directory")
        session = ExecutorSession(mode=SessionMode.REPLAY, replay_dir=cve_35904_output)

        outcome = AgentPipeline(RuleBasedBackend(), RunConfig(), blocker).run(listing_snippet, session)

        assert outcome.report.failed_stage == "setup"
        assert outcome.report.detected is False
        assert outcome.origin_path == listing_snippet.origin_path

    def test_replay_output_dir_only_parses(self, cve_35904_output):
        identity = CveIdentity(cve_id="CVE-2020-35904", cwe_id=131)

        outcome = replay_output_dir(identity, cve_35904_output, RunConfig().confidence_weights)

        assert outcome.report.summary.critical_total == 752
        assert outcome.report.compile_origin is None
        assert outcome.report.artifact_paths == {}
