"""
The four-stage agent pipeline and the per-file orchestration around it
"""

import json
import time
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Type, TypeVar

import structlog
from pydantic import BaseModel, Field, ValidationError, field_validator

from ..config import RunConfig, ToolchainMode
from ..errors import (
    BackendError,
    SchemaValidationError,
    StageError,
    SymexError,
    WrapperValidationError,
)
from ..error_parser import confidence_score, scan_and_parse, summarize_criticality
from ..harness_codegen import generate_harness
from ..klee_session import run as run_executor
from ..models import (
    DEFAULT_KLEE_PARAMS,
    AgentRole,
    AnalysisPlan,
    CompileOrigin,
    CompileOutcome,
    Complexity,
    CveIdentity,
    CveSnippet,
    ExecutorSession,
    FileReport,
    HarnessSpec,
    KleeErrorRecord,
    KleeParams,
    OutputDirListing,
    RiskAssessment,
    RiskPattern,
    SessionMode,
    WrapperArtifact,
    WrapperOrigin,
    model_to_jsonable,
)
from ..snippet_ingest import profile_missing_context
from ..wrapper_forge import TEMPLATE_CWES, compile_wrapper, fallback_wrapper, link_harness, validate_wrapper
from .backends import AgentBackend, Payload

logger = structlog.get_logger(__name__)

CompileFn = Callable[[WrapperArtifact], CompileOutcome]
ResponseT = TypeVar("ResponseT", bound=BaseModel)

MIN_FUNCTION_COUNT = 1
MAX_FUNCTION_COUNT = 16
MAX_REPAIRS = 2
MAX_HARNESS_FUNCTIONS = 16

ARTIFACT_FILES = {
    "plan": "plan.json",
    "risk": "risk.json",
    "wrapper": "wrapper.rs",
    "harness": "harness.c",
    "params": "params.json",
    "report": "report.json",
    "records": "records.json",
}


# ---------------------------------------------------------------------------
# Role response schemas
# ---------------------------------------------------------------------------


class PlanResponse(BaseModel):
    vulnerability_types: List[int] = Field(..., min_length=1)
    complexity: Complexity
    recommended_function_count: int


class RiskResponse(BaseModel):
    patterns: List[RiskPattern] = []
    risk_score: float
    critical_lines: List[int] = []


class CodegenResponse(BaseModel):
    wrapper_source: str = Field(..., min_length=1)


class FilterResponse(BaseModel):
    search_strategy: str = "dfs"
    time_limit_s: int = DEFAULT_KLEE_PARAMS.time_limit_s
    memory_limit_mb: int = DEFAULT_KLEE_PARAMS.memory_limit_mb
    max_fork_depth: int = DEFAULT_KLEE_PARAMS.max_fork_depth

    @field_validator("search_strategy")
    @classmethod
    def _normalize_strategy(cls, value: str) -> str:
        normalized = value.strip().lower().replace("-", "_")
        if normalized not in {"dfs", "bfs", "random_path"}:
            raise ValueError(f"unknown search strategy {value!r}")
        return normalized


def _request(backend: AgentBackend, role: AgentRole, payload: Payload, schema: Type[ResponseT]) -> ResponseT:
    """Ask a backend once, and once more with the schema error if the reply is invalid"""
    response = backend.complete(role, payload)
    try:
        return schema.model_validate(response)
    except ValidationError as first_error:
        logger.warning("schema_rerequest", role=role.value, error=str(first_error))
        retry = dict(payload, schema_error=str(first_error))
        try:
            return schema.model_validate(backend.complete(role, retry))
        except ValidationError as e:
            raise SchemaValidationError(f"{role.value} response invalid after re-request: {e}") from e


def _clamp(value: float, low: float, high: float, field: str, warnings: List[str]) -> float:
    if value < low or value > high:
        clamped = min(max(value, low), high)
        warnings.append(f"{field} {value} clamped to {clamped}")
        logger.warning("value_clamped", field=field, value=value, clamped=clamped)
        return clamped
    return value


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------


def plan_analysis(snippet: CveSnippet, backend: AgentBackend) -> AnalysisPlan:
    profile = profile_missing_context(snippet)
    payload: Payload = {
        "cve_id": snippet.cve_id,
        "cwe_id": snippet.cwe_id,
        "source_text": snippet.source_text,
        "missing_context": model_to_jsonable(profile),
    }
    response = _request(backend, AgentRole.ORACLE, payload, PlanResponse)
    warnings: List[str] = []

    types = [t for t in response.vulnerability_types if t > 0]
    if len(types) != len(response.vulnerability_types):
        warnings.append("non-positive CWE ids dropped from plan")
    if not types:
        types = [snippet.cwe_id]
        warnings.append(f"plan had no usable CWE ids; using CWE-{snippet.cwe_id} from metadata")
    unrecognized = [t for t in types if t not in TEMPLATE_CWES]
    if unrecognized:
        warnings.append(f"unrecognized CWE ids flagged: {unrecognized}")

    count = int(_clamp(response.recommended_function_count, MIN_FUNCTION_COUNT, MAX_FUNCTION_COUNT,
                       "recommended_function_count", warnings))
    return AnalysisPlan(
        vulnerability_types=types,
        complexity_estimate=response.complexity,
        recommended_function_count=count,
        unrecognized_types=unrecognized,
        warnings=warnings,
    )


def assess_safety(snippet: CveSnippet, plan: AnalysisPlan, backend: AgentBackend) -> RiskAssessment:
    payload: Payload = {
        "cve_id": snippet.cve_id,
        "source_text": snippet.source_text,
        "line_count": snippet.line_count,
        "plan": model_to_jsonable(plan),
    }
    response = _request(backend, AgentRole.SAFETY, payload, RiskResponse)
    warnings: List[str] = []

    score = _clamp(response.risk_score, 0.0, 10.0, "risk_score", warnings)

    lines = [n for n in response.critical_lines if 1 <= n <= snippet.line_count]
    dropped_lines = [n for n in response.critical_lines if n not in lines]
    if dropped_lines:
        warnings.append(f"critical lines outside 1..{snippet.line_count} dropped: {dropped_lines}")

    allowed = set(plan.vulnerability_types)
    patterns = [p for p in response.patterns if p.cwe_id in allowed]
    for pattern in response.patterns:
        if pattern.cwe_id not in allowed:
            warnings.append(f"out-of-plan pattern {pattern.name} (CWE-{pattern.cwe_id}) dropped")
            logger.warning("pattern_dropped", cve_id=snippet.cve_id, pattern=pattern.name, cwe_id=pattern.cwe_id)

    return RiskAssessment(
        patterns=patterns,
        risk_score=score,
        critical_lines=sorted(set(lines)),
        warnings=warnings,
    )


def generate_wrapper(
    snippet: CveSnippet,
    plan: AnalysisPlan,
    risk: RiskAssessment,
    backend: AgentBackend,
    compile: CompileFn,
    template_dir: Optional[Path] = None,
) -> WrapperArtifact:
    """Request, validate and compile a wrapper, feeding each diagnostic back.

    After the initial attempt and two repairs the CWE's fallback template is
    returned instead; backend transport failures propagate.
    """
    base_payload: Payload = {
        "cve_id": snippet.cve_id,
        "cwe_id": snippet.cwe_id,
        "source_text": snippet.source_text,
        "plan": model_to_jsonable(plan),
        "risk": model_to_jsonable(risk),
    }
    diagnostic: Optional[str] = None
    for attempt in range(1, MAX_REPAIRS + 2):
        payload = dict(base_payload, attempt=attempt)
        if diagnostic is not None:
            payload["diagnostic"] = diagnostic
            logger.info("repair_requested", cve_id=snippet.cve_id, attempt=attempt)

        try:
            source = CodegenResponse.model_validate(backend.complete(AgentRole.CODEGEN, payload)).wrapper_source
            signatures = validate_wrapper(source)
        except ValidationError as e:
            diagnostic = f"response does not match the codegen schema: {e}"
            continue
        except WrapperValidationError as e:
            diagnostic = str(e)
            continue

        artifact = WrapperArtifact(
            source_text=source,
            exported_functions=signatures,
            origin=WrapperOrigin.GENERATED,
            attempts_used=attempt,
            cwe_id=snippet.cwe_id,
        )
        outcome = compile(artifact)
        if outcome.success:
            return artifact.model_copy(update={"bitcode_path": outcome.bitcode_path})
        diagnostic = outcome.diagnostic

    cwe_id = plan.vulnerability_types[0]
    logger.warning("fallback_template_used", cve_id=snippet.cve_id, cwe_id=cwe_id)
    fallback = fallback_wrapper(cwe_id, template_dir).model_copy(update={"attempts_used": MAX_REPAIRS + 1})
    outcome = compile(fallback)
    if not outcome.success:
        logger.error("fallback_compile_failed", cve_id=snippet.cve_id, diagnostic=outcome.diagnostic)
        return fallback
    return fallback.model_copy(update={"bitcode_path": outcome.bitcode_path})


def select_params(risk: RiskAssessment, plan: AnalysisPlan, backend: AgentBackend) -> KleeParams:
    payload: Payload = {"risk": model_to_jsonable(risk), "plan": model_to_jsonable(plan)}
    try:
        response = _request(backend, AgentRole.FILTER, payload, FilterResponse)
    except (BackendError, SchemaValidationError) as e:
        logger.warning("default_params_used", error=str(e))
        return DEFAULT_KLEE_PARAMS.model_copy(update={"warnings": [f"default parameters used: {e}"]})

    warnings: List[str] = []
    return KleeParams(
        search_strategy=response.search_strategy,
        time_limit_s=int(_clamp(response.time_limit_s, 1, float("inf"), "time_limit_s", warnings)),
        memory_limit_mb=int(_clamp(response.memory_limit_mb, 1, float("inf"), "memory_limit_mb", warnings)),
        max_fork_depth=int(_clamp(response.max_fork_depth, 1, float("inf"), "max_fork_depth", warnings)),
        warnings=warnings,
    )


# ---------------------------------------------------------------------------
# Orchestration
# ---------------------------------------------------------------------------


class PipelineOutcome(BaseModel):
    report: FileReport
    records: List[KleeErrorRecord] = []
    origin_path: Optional[Path] = None
    elapsed_s: float = 0.0

    
    def identity(self) -> CveIdentity:
        return CveIdentity(cve_id=self.report.cve_id, cwe_id=self.report.cwe_id, origin_path=self.origin_path)


def _write_json(path: Path, data: Any) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def build_file_report(
    identity: CveIdentity,
    records: List[KleeErrorRecord],
    listing: Optional[OutputDirListing],
    weights: Dict[str, float],
    **fields: Any,
) -> FileReport:
    """Assemble the per-file report from parsed records plus stage facts"""
    summary = summarize_criticality(records)
    warnings = list(fields.pop("warnings", []))
    if any(r.malformed for r in records):
        warnings.append(f"{sum(r.malformed for r in records)} malformed error files")
    return FileReport(
        cve_id=identity.cve_id,
        cwe_id=identity.cwe_id,
        summary=summary,
        detected=summary.detected,
        confidence_score=confidence_score(summary, weights),
        quarantined_files=sorted(p.name for p in listing.quarantined) if listing else [],
        partial_results=bool(listing and listing.partial),
        warnings=warnings,
        **fields,
    )


class AgentPipeline:
    """Runs every stage for one snippet and persists each intermediate artifact"""

    def __init__(self, backend: AgentBackend, config: RunConfig, out_dir: Path):
        self.backend = backend
        self.config = config
        self.out_dir = Path(out_dir)

    def _compile_fn(self, work_dir: Path) -> CompileFn:
        return lambda artifact: compile_wrapper(artifact, self.config.toolchain, work_dir)

    def run(self, snippet: CveSnippet, session: ExecutorSession) -> PipelineOutcome:
        file_dir = self.out_dir / snippet.slug
        log = logger.bind(cve_id=snippet.cve_id)
        started = time.perf_counter()

        facts: Dict[str, Any] = {"artifact_paths": {}, "warnings": []}
        records: List[KleeErrorRecord] = []
        listing: Optional[OutputDirListing] = None
        stage = "setup"

        def persist(key: str, content: Any) -> None:
            path = file_dir / ARTIFACT_FILES[key]
            if isinstance(content, str):
                path.write_text(content, encoding="utf-8")
            else:
                _write_json(path, content)
            facts["artifact_paths"][key] = ARTIFACT_FILES[key]

        try:
            file_dir.mkdir(parents=True, exist_ok=True)
            stage = "oracle"
            plan = plan_analysis(snippet, self.backend)
            persist("plan", model_to_jsonable(plan))
            facts["warnings"].extend(plan.warnings)
            log.info("stage_completed", stage=stage)

            stage = "safety"
            risk = assess_safety(snippet, plan, self.backend)
            persist("risk", model_to_jsonable(risk))
            facts["risk_score"] = risk.risk_score
            facts["warnings"].extend(risk.warnings)
            log.info("stage_completed", stage=stage)

            stage = "codegen"
            wrapper = generate_wrapper(
                snippet, plan, risk, self.backend, self._compile_fn(file_dir), self.config.template_dir
            )
            persist("wrapper", wrapper.source_text)
            facts["attempts_used"] = wrapper.attempts_used
            facts["compile_origin"] = self._compile_origin(wrapper)
            log.info("stage_completed", stage=stage, origin=wrapper.origin.value, attempts=wrapper.attempts_used)
            if facts["compile_origin"] == CompileOrigin.FAILED:
                raise StageError(stage, "fallback template did not compile")

            stage = "harness"
            signatures = wrapper.exported_functions
            if len(signatures) > MAX_HARNESS_FUNCTIONS:
                facts["warnings"].append(
                    f"harness limited to the first {MAX_HARNESS_FUNCTIONS} of {len(signatures)} functions"
                )
                signatures = signatures[:MAX_HARNESS_FUNCTIONS]
            harness = generate_harness(
                HarnessSpec(
                    signatures=signatures,
                    buffer_bytes=self.config.harness.buffer_bytes,
                    index_bound=self.config.harness.index_bound,
                )
            )
            persist("harness", harness.text)
            log.info("stage_completed", stage=stage, paths=harness.path_count)

            stage = "filter"
            params = select_params(risk, plan, self.backend)
            persist("params", model_to_jsonable(params))
            facts["params"] = params
            facts["warnings"].extend(params.warnings)
            log.info("stage_completed", stage=stage, strategy=params.search_strategy.value)

            stage = "executor"
            bitcode = None
            if session.mode == SessionMode.LIVE:
                if wrapper.bitcode_path is None:
                    raise StageError(stage, "live execution needs wrapper bitcode; toolchain is offline")
                bitcode = link_harness(
                    file_dir / ARTIFACT_FILES["harness"], wrapper.bitcode_path, self.config.toolchain, file_dir
                )
            listing = run_executor(session, bitcode, params, output_dir=file_dir / "klee-out")
            log.info("stage_completed", stage=stage, error_files=len(listing.error_files))

            stage = "parser"
            records = scan_and_parse(listing)
            log.info("stage_completed", stage=stage, records=len(records))
        except (SymexError, ValidationError, OSError, UnicodeError) as e:
            message = e.message if isinstance(e, StageError) else str(e)
            log.error("stage_failed", stage=stage, error=message)
            facts["failed_stage"] = stage
            facts["error_message"] = message

        facts["artifact_paths"]["report"] = ARTIFACT_FILES["report"]
        facts["artifact_paths"]["records"] = ARTIFACT_FILES["records"]
        report = build_file_report(snippet, records, listing, self.config.confidence_weights, **facts)
        try:
            _write_json(file_dir / ARTIFACT_FILES["records"], [model_to_jsonable(r) for r in records])
            _write_json(file_dir / ARTIFACT_FILES["report"], model_to_jsonable(report))
        except OSError as e:
            log.error("artifact_write_failed", error=str(e))
            if not report.failed_stage:
                report = report.model_copy(update={"failed_stage": "report", "error_message": str(e)})
        elapsed = time.perf_counter() - started
        log.info("file_completed", detected=report.detected, elapsed_s=round(elapsed, 3))
        return PipelineOutcome(report=report, records=records, origin_path=snippet.origin_path, elapsed_s=elapsed)

    def _compile_origin(self, wrapper: WrapperArtifact) -> CompileOrigin:
        if wrapper.origin == WrapperOrigin.GENERATED:
            return CompileOrigin.GENERATED
        if self.config.toolchain.mode == ToolchainMode.LIVE and wrapper.bitcode_path is None:
            return CompileOrigin.FAILED
        return CompileOrigin.FALLBACK


def run_pipeline(
    snippet: CveSnippet,
    backend: AgentBackend,
    session: ExecutorSession,
    out_dir: Path,
    config: Optional[RunConfig] = None,
) -> FileReport:
    return AgentPipeline(backend, config or RunConfig(), out_dir).run(snippet, session).report


def replay_output_dir(
    identity: CveIdentity, output_dir: Path, weights: Dict[str, float]
) -> PipelineOutcome:
    """Parser-only path: scan a recorded KLEE directory and report on it"""
    session = ExecutorSession(mode=SessionMode.REPLAY, replay_dir=Path(output_dir))
    listing = run_executor(session, None, DEFAULT_KLEE_PARAMS)
    records = scan_and_parse(listing)
    report = build_file_report(identity, records, listing, weights)
    return PipelineOutcome(report=report, records=records, origin_path=Path(output_dir))
