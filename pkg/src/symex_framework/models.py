"""
Pydantic models for snippets, agent contracts, KLEE output and reports
"""

from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, model_validator

CVE_PATTERN = r"^CVE-\d{4}-\d{1,7}$"
TEST_ID_PATTERN = r"^test\d{6}$"
MAX_U64 = 2**64 - 1


class ErrorKind(str, Enum):
    """Typed KLEE error classes, taken from the ``.err`` file suffix"""
    PTR = "ptr"
    EXTERNAL = "external"
    ABORT = "abort"
    DIV = "div"
    OVERFLOW = "overflow"


CRITICAL_KINDS = (ErrorKind.PTR, ErrorKind.EXTERNAL)


class Complexity(str, Enum):
    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"


class AgentRole(str, Enum):
    """The four pipeline stages that talk to an agent backend"""
    ORACLE = "oracle"
    SAFETY = "safety"
    CODEGEN = "codegen"
    FILTER = "filter"


class SearchStrategy(str, Enum):
    DFS = "dfs"
    BFS = "bfs"
    RANDOM_PATH = "random_path"


class ParamKind(str, Enum):
    """KLEE-compatible FFI parameter kinds"""
    BYTE_POINTER = "byte_pointer"
    SIZE = "size"
    INT32 = "int32"
    BYTE = "byte"


class WrapperOrigin(str, Enum):
    GENERATED = "generated"
    FALLBACK = "fallback"


class CompileOrigin(str, Enum):
    GENERATED = "generated"
    FALLBACK = "fallback"
    FAILED = "failed"


class SessionMode(str, Enum):
    LIVE = "live"
    REPLAY = "replay"


# ---------------------------------------------------------------------------
# Snippets
# ---------------------------------------------------------------------------


class CveIdentity(BaseModel):
    """CVE/CWE identity of one analysed file"""
    model_config = ConfigDict(frozen=True)

    cve_id: str = Field(..., pattern=CVE_PATTERN)
    cwe_id: int = Field(..., gt=0)
    origin_path: Optional[Path] = None

    @property
    def slug(self) -> str:
        return f"cwe-{self.cwe_id}-{self.cve_id.lower()}"


class CveSnippet(CveIdentity):
    """Incomplete Rust source fragment plus its identity"""
    source_text: str = Field(..., min_length=1)
    origin_path: Path
    line_count: int = Field(..., ge=1)


class MissingContextProfile(BaseModel):
    """Context a snippet lacks before it could compile"""
    model_config = ConfigDict(frozen=True)

    missing_struct_defs: bool = False
    missing_imports: bool = False
    missing_manifest: bool = True
    missing_trait_impls: bool = False
    unresolved_identifiers: List[str] = []


# ---------------------------------------------------------------------------
# Agent contracts
# ---------------------------------------------------------------------------


class AnalysisPlan(BaseModel):
    """Oracle output: which vulnerability classes to target and how broadly"""
    vulnerability_types: List[int] = Field(..., min_length=1)
    complexity_estimate: Complexity
    recommended_function_count: int = Field(..., ge=1, le=16)
    unrecognized_types: List[int] = []
    warnings: List[str] = []


class RiskPattern(BaseModel):
    name: str
    cwe_id: int


class RiskAssessment(BaseModel):
    """Safety-checker output"""
    patterns: List[RiskPattern] = []
    risk_score: float = Field(..., ge=0.0, le=10.0)
    critical_lines: List[int] = []
    warnings: List[str] = []


class FfiParam(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str
    kind: ParamKind


class FfiSignature(BaseModel):
    """One exported ``extern "C"`` wrapper function; always returns int32"""
    model_config = ConfigDict(frozen=True)

    name: str = Field(..., pattern=r"^[A-Za-z_][A-Za-z0-9_]*$")
    params: List[FfiParam] = []
    returns: Literal["int32"] = "int32"

    @property
    def kinds(self) -> List[ParamKind]:
        return [param.kind for param in self.params]


class WrapperArtifact(BaseModel):
    """Wrapper source plus how it was obtained"""
    source_text: str
    exported_functions: List[FfiSignature] = Field(..., min_length=1)
    origin: WrapperOrigin
    attempts_used: int = Field(1, ge=1, le=3)
    cwe_id: Optional[int] = None
    bitcode_path: Optional[Path] = None

    @model_validator(mode="after")
    def _unique_names(self) -> "WrapperArtifact":
        names = [sig.name for sig in self.exported_functions]
        if len(names) != len(set(names)):
            raise ValueError("exported function names must be unique")
        return self


class KleeParams(BaseModel):
    """Fast-filter output, mapped onto executor flags"""
    search_strategy: SearchStrategy = SearchStrategy.DFS
    time_limit_s: int = Field(60, gt=0)
    memory_limit_mb: int = Field(1024, gt=0)
    max_fork_depth: int = Field(64, gt=0)
    warnings: List[str] = []


DEFAULT_KLEE_PARAMS = KleeParams()


class CompileOutcome(BaseModel):
    success: bool
    bitcode_path: Optional[Path] = None
    diagnostic: Optional[str] = None

    @model_validator(mode="after")
    def _success_xor_diagnostic(self) -> "CompileOutcome":
        if self.success == (self.diagnostic is not None):
            raise ValueError("exactly one of success / diagnostic must hold")
        return self


class TemplateEntry(BaseModel):
    cwe_id: int
    function_names: List[str]
    source_text: str


# ---------------------------------------------------------------------------
# Harness
# ---------------------------------------------------------------------------


class HarnessSpec(BaseModel):
    signatures: List[FfiSignature] = Field(..., min_length=1, max_length=16)
    buffer_bytes: int = Field(128, ge=1)
    index_bound: int = Field(10000, ge=1)


class HarnessSource(BaseModel):
    text: str
    path_count: int


# ---------------------------------------------------------------------------
# Executor
# ---------------------------------------------------------------------------


class ExecutorSession(BaseModel):
    """Live executor invocation or replay of a recorded output directory"""
    mode: SessionMode = SessionMode.REPLAY
    executor_command: Optional[str] = None
    replay_dir: Optional[Path] = None

    @model_validator(mode="after")
    def _one_source(self) -> "ExecutorSession":
        if self.mode == SessionMode.LIVE and not self.executor_command:
            raise ValueError("live session needs an executor command")
        if self.mode == SessionMode.REPLAY and self.replay_dir is None:
            raise ValueError("replay session needs a replay directory")
        return self


class ErrorFileEntry(BaseModel):
    model_config = ConfigDict(frozen=True)

    test_id: str = Field(..., pattern=TEST_ID_PATTERN)
    kind: ErrorKind
    path: Path


class OutputDirListing(BaseModel):
    dir: Path
    error_files: List[ErrorFileEntry] = []
    test_files: List[Path] = []
    stats_present: bool = False
    quarantined: List[Path] = []
    partial: bool = False


# ---------------------------------------------------------------------------
# Parsed error records
# ---------------------------------------------------------------------------

ArgValue = Union[Literal["symbolic"], int]


class FrameArg(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str
    value: ArgValue


class StackFrame(BaseModel):
    index: int
    function: str
    args: List[FrameArg] = []
    location: Optional[str] = None


class KleeErrorRecord(BaseModel):
    """Structured facts from one ``testNNNNNN.<kind>.err`` file"""
    test_id: str = Field(..., pattern=TEST_ID_PATTERN)
    kind: ErrorKind
    message: str = ""
    faulting_function: Optional[str] = None
    frames: List[StackFrame] = []
    frame_args: List[FrameArg] = []
    source_file: Optional[str] = None
    source_line: Optional[int] = None
    address_expr: Optional[str] = None
    example_address: Optional[int] = Field(None, ge=0, le=MAX_U64)
    address_range: Optional[Tuple[int, int]] = None
    raw_text: str = ""
    partial: bool = False
    malformed: bool = False
    warnings: List[str] = []

    @model_validator(mode="after")
    def _range_ordered(self) -> "KleeErrorRecord":
        if self.address_range is not None:
            low, high = self.address_range
            if not 0 <= low <= high <= MAX_U64:
                raise ValueError(f"invalid address range [{low}, {high}]")
        return self

    @property
    def range_width(self) -> Optional[int]:
        if self.address_range is None:
            return None
        low, high = self.address_range
        return high - low + 1

    @property
    def concrete_inputs(self) -> Dict[str, int]:
        return {arg.name: arg.value for arg in self.frame_args if isinstance(arg.value, int)}


class CriticalitySummary(BaseModel):
    ptr_count: int = Field(0, ge=0)
    external_count: int = Field(0, ge=0)
    abort_count: int = Field(0, ge=0)
    div_count: int = Field(0, ge=0)
    overflow_count: int = Field(0, ge=0)
    critical_total: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _critical_total(self) -> "CriticalitySummary":
        if self.critical_total != self.ptr_count + self.external_count:
            raise ValueError("critical_total must equal ptr_count + external_count")
        return self

    @property
    def detected(self) -> bool:
        return self.critical_total >= 1

    def count(self, kind: ErrorKind) -> int:
        return getattr(self, f"{kind.value}_count")


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


class FileReport(BaseModel):
    """Per-file outcome of a pipeline or replay run"""
    cve_id: str
    cwe_id: int
    compile_origin: Optional[CompileOrigin] = None
    attempts_used: int = 0
    summary: CriticalitySummary = CriticalitySummary()
    detected: bool = False
    risk_score: Optional[float] = None
    params: Optional[KleeParams] = None
    failed_stage: Optional[str] = None
    error_message: Optional[str] = None
    artifact_paths: Dict[str, str] = {}
    confidence_score: float = 0.0
    quarantined_files: List[str] = []
    partial_results: bool = False
    warnings: List[str] = []

    @model_validator(mode="after")
    def _detected_matches_summary(self) -> "FileReport":
        if self.detected != self.summary.detected:
            raise ValueError("detected must equal summary.critical_total >= 1")
        return self


class RunMetrics(BaseModel):
    files: int = Field(..., ge=1)
    compiled_generated: int = 0
    fallback_used: int = 0
    detected: int = 0
    compile_rate: float = Field(..., ge=0.0, le=1.0)
    fallback_rate: float = Field(..., ge=0.0, le=1.0)
    detection_rate: float = Field(..., ge=0.0, le=1.0)
    total_critical: int = 0


class BaselineComparison(BaseModel):
    only_ours: List[str] = []
    only_baseline: List[str] = []
    both: List[str] = []
    neither: List[str] = []
    baseline_detected: int = Field(0, ge=0)
    baseline_issues: int = Field(0, ge=0)
    only_ours_critical: int = Field(0, ge=0)

    def counts(self) -> Tuple[int, int, int, int]:
        return (len(self.only_ours), len(self.only_baseline), len(self.both), len(self.neither))

    @property
    def files(self) -> int:
        return sum(self.counts())


class CweRow(BaseModel):
    cwe_id: int
    files: int
    detected_files: int
    detection_rate: float
    critical_errors: int


class CveRank(BaseModel):
    cve_id: str
    ptr: int
    external: int
    total: int


def model_to_jsonable(model: BaseModel) -> Dict[str, Any]:
    """Dump a model to plain JSON types"""
    return model.model_dump(mode="json")
