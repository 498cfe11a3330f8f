"""
Wrapper templates, lexical wrapper validation and the compile/link toolchain
"""

import re
import shlex
import shutil
import subprocess
import tempfile
from functools import lru_cache
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import structlog

from .config import ToolchainConfig, ToolchainMode
from .errors import ToolchainError, WrapperValidationError
from .models import (
    CompileOutcome,
    FfiParam,
    FfiSignature,
    ParamKind,
    TemplateEntry,
    WrapperArtifact,
    WrapperOrigin,
)

logger = structlog.get_logger(__name__)

TEMPLATE_DIR = Path(__file__).parent / "templates"
TEMPLATE_CWES = (119, 125, 131, 134, 190, 191, 415, 416, 787, 824, 908)
GENERIC_TEMPLATE = "generic.rs"

RUST_TYPE_KINDS: Dict[str, ParamKind] = {
    "*mut u8": ParamKind.BYTE_POINTER,
    "*const u8": ParamKind.BYTE_POINTER,
    "usize": ParamKind.SIZE,
    "i32": ParamKind.INT32,
    "u8": ParamKind.BYTE,
}

_COMMENT_RE = re.compile(r"//[^\n]*|/\*.*?\*/", re.DOTALL)
_EXPORT_RE = re.compile(
    r"#\[\s*(?:unsafe\s*\(\s*)?no_mangle\s*\)?\s*\]\s*(?:#\[[^\]]*\]\s*)*"
    r"pub\s+(?:unsafe\s+)?extern\s+\"C\"\s+fn\s+([A-Za-z_]\w*)\s*"
    r"\(([^)]*)\)\s*(?:->\s*([^{]+?))?\s*\{",
    re.DOTALL,
)
_PARAM_RE = re.compile(r"^(?:mut\s+)?([A-Za-z_]\w*)\s*:\s*(.+)$", re.DOTALL)


def _normalize_type(text: str) -> str:
    return re.sub(r"\s+", " ", text).strip()


def _parse_params(function: str, params_text: str) -> List[FfiParam]:
    params: List[FfiParam] = []
    for raw in params_text.split(","):
        raw = raw.strip()
        if not raw:
            continue
        match = _PARAM_RE.match(raw)
        if not match:
            raise WrapperValidationError(f"cannot parse parameter '{raw}' of {function}", function)
        name, rust_type = match.group(1), _normalize_type(match.group(2))
        kind = RUST_TYPE_KINDS.get(rust_type)
        if kind is None:
            raise WrapperValidationError(
                f"incompatible parameter type '{rust_type}' for '{name}' in {function}", function
            )
        params.append(FfiParam(name=name, kind=kind))
    return params


def validate_wrapper(source: str) -> List[FfiSignature]:
    """Extract the exported ``extern "C"`` functions of a wrapper source.

    Every export must take only KLEE-compatible parameter types and return
    ``i32``; names must be unique.
    """
    code = _COMMENT_RE.sub(" ", source)
    signatures: List[FfiSignature] = []
    seen = set()
    for match in _EXPORT_RE.finditer(code):
        name, params_text, returns = match.group(1), match.group(2), match.group(3)
        if name in seen:
            raise WrapperValidationError(f"duplicate exported function {name}", name)
        seen.add(name)
        if returns is None or _normalize_type(returns) != "i32":
            raise WrapperValidationError(f"exported function {name} must return i32", name)
        signatures.append(FfiSignature(name=name, params=_parse_params(name, params_text)))
    if not signatures:
        raise WrapperValidationError("no exported functions")
    return signatures


def _template_name(cwe_id: Optional[int]) -> str:
    return GENERIC_TEMPLATE if cwe_id is None else f"cwe_{cwe_id}.rs"


def _read_template(name: str, template_dir: Optional[Path]) -> Optional[str]:
    for directory in (template_dir, TEMPLATE_DIR):
        if directory is None:
            continue
        candidate = Path(directory) / name
        if candidate.is_file():
            return candidate.read_text(encoding="utf-8")
    return None


@lru_cache(maxsize=None)
def _load_entry(cwe_id: Optional[int], template_dir: Optional[Path]) -> Optional[TemplateEntry]:
    text = _read_template(_template_name(cwe_id), template_dir)
    if text is None:
        return None
    names = [sig.name for sig in validate_wrapper(text)]
    return TemplateEntry(cwe_id=cwe_id or 0, function_names=names, source_text=text)


def template_table(template_dir: Optional[Path] = None) -> Dict[int, TemplateEntry]:
    """Every CWE-specific template, keyed by CWE id (the generic one under 0)"""
    table: Dict[int, TemplateEntry] = {}
    for cwe_id in (*TEMPLATE_CWES, None):
        entry = _load_entry(cwe_id, template_dir)
        if entry is not None:
            table[entry.cwe_id] = entry
    return table


def fallback_wrapper(cwe_id: int, template_dir: Optional[Path] = None) -> WrapperArtifact:
    """Deterministic template wrapper for a CWE; the generic template when unknown"""
    entry = _load_entry(cwe_id, template_dir) or _load_entry(None, template_dir)
    if entry is None:
        raise ToolchainError(f"no wrapper template for CWE-{cwe_id} and no generic template")
    return WrapperArtifact(
        source_text=entry.source_text,
        exported_functions=validate_wrapper(entry.source_text),
        origin=WrapperOrigin.FALLBACK,
        cwe_id=cwe_id,
    )


def _expand(template: str, inputs: Sequence[Path], output: Path) -> List[str]:
    argv: List[str] = []
    for part in shlex.split(template):
        if part == "{input}":
            argv.extend(str(p) for p in inputs)
        else:
            argv.append(part.format(input=" ".join(str(p) for p in inputs), output=str(output)))
    return argv


def _run_tool(argv: List[str], timeout_s: int) -> subprocess.CompletedProcess:
    if shutil.which(argv[0]) is None:
        raise ToolchainError(f"toolchain binary not found: {argv[0]}")
    logger.debug("toolchain_invoked", argv=argv)
    try:
        return subprocess.run(argv, capture_output=True, text=True, encoding="utf-8", errors="replace",
                              timeout=timeout_s)
    except subprocess.TimeoutExpired as e:
        raise ToolchainError(f"{argv[0]} timed out after {timeout_s}s") from e
    except OSError as e:
        raise ToolchainError(f"cannot run {argv[0]}: {e}") from e


def _tool_output(result: subprocess.CompletedProcess) -> str:
    """stderr as the tool wrote it, or stdout when stderr is empty"""
    return result.stderr or result.stdout or ""


def compile_wrapper(
    artifact: WrapperArtifact, toolchain: ToolchainConfig, work_dir: Optional[Path] = None
) -> CompileOutcome:
    """Compile a wrapper to LLVM bitcode.

    Offline mode succeeds exactly when the source passes ``validate_wrapper``.
    Compiler rejections come back as a diagnostic; a missing toolchain raises.
    """
    if toolchain.mode == ToolchainMode.OFFLINE:
        try:
            validate_wrapper(artifact.source_text)
        except WrapperValidationError as e:
            return CompileOutcome(success=False, diagnostic=str(e))
        return CompileOutcome(success=True)

    work_dir = Path(work_dir or tempfile.mkdtemp(prefix="symex-"))
    work_dir.mkdir(parents=True, exist_ok=True)
    source = work_dir / "wrapper.rs"
    bitcode = work_dir / "wrapper.bc"
    try:
        source.write_text(artifact.source_text, encoding="utf-8")
    except OSError as e:
        raise ToolchainError(f"cannot write {source}: {e}") from e

    result = _run_tool(_expand(toolchain.rustc_command, [source], bitcode), toolchain.timeout_s)
    if result.returncode != 0:
        diagnostic = _tool_output(result) or f"rustc exited with {result.returncode}"
        return CompileOutcome(success=False, diagnostic=diagnostic)
    if not bitcode.is_file():
        return CompileOutcome(success=False, diagnostic=f"compiler produced no bitcode at {bitcode}")
    return CompileOutcome(success=True, bitcode_path=bitcode)


def link_harness(
    harness_path: Path, wrapper_bitcode: Path, toolchain: ToolchainConfig, work_dir: Path
) -> Path:
    """Compile the C harness and link it with the wrapper bitcode"""
    harness_bc = work_dir / "harness.bc"
    linked = work_dir / "linked.bc"

    result = _run_tool(_expand(toolchain.harness_command, [harness_path], harness_bc), toolchain.timeout_s)
    if result.returncode != 0:
        raise ToolchainError(f"harness compilation failed: {_tool_output(result)}")
    result = _run_tool(
        _expand(toolchain.link_command, [harness_bc, wrapper_bitcode], linked), toolchain.timeout_s
    )
    if result.returncode != 0:
        raise ToolchainError(f"bitcode linking failed: {_tool_output(result)}")
    return linked
