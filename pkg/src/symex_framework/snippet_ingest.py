"""
Loading CVE snippets and profiling the context they are missing
"""

import json
import re
from pathlib import Path
from typing import Dict, List, Optional, Set, Union

import structlog

from .errors import SnippetLoadError
from .models import CveIdentity, CveSnippet, MissingContextProfile

logger = structlog.get_logger(__name__)

PathLike = Union[str, Path]

# Names that are ambient in every Rust module and never reported as unresolved.
PRELUDE_ALLOWLIST = frozenset(
    {"Vec", "String", "Box", "Option", "Result", "Some", "None", "Ok", "Err", "Drop", "Clone", "Copy"}
)

IDENTITY_RE = re.compile(r"cwe-(\d+)-cve-(\d{4})-(\d{1,7})", re.IGNORECASE)
SIDECAR_SUFFIX = ".meta.json"

_COMMENT_RE = re.compile(r"//[^\n]*|/\*.*?\*/", re.DOTALL)
_STRING_RE = re.compile(r'"(?:\\.|[^"\\])*"')
_DECL_RE = re.compile(r"\b(?:struct|enum|union|trait|type)\s+([A-Za-z_]\w*)")
_STRUCT_OR_ENUM_RE = re.compile(r"\b(?:struct|enum|union)\s+[A-Za-z_]\w*")
_STRUCT_BODY_RE = re.compile(r"\bstruct\s+\w+\s*(?:<[^{;]*?>)?\s*\{([^}]*)\}", re.DOTALL)
_FIELD_DECL_RE = re.compile(r"\b([a-z_]\w*)\s*:(?!:)")
_USE_RE = re.compile(r"\buse\s+([^;]+);")
_IDENT_RE = re.compile(r"\b[A-Za-z_]\w*\b")
_SELF_FIELD_RE = re.compile(r"\bself\.([A-Za-z_]\w*)\b(?!\s*(?:\(|::<))")
_CAMEL_RE = re.compile(r"\b([A-Z]\w*)\b")
_TYPE_POSITION_RE = re.compile(
    r"(?:(?<!:):(?!:)\s*|->\s*|&\s*(?:'\w+\s+)?(?:mut\s+)?|\*\s*(?:mut|const)\s+"
    r"|\bimpl(?:<[^>]*>)?\s+|\bfor\s+|\bdyn\s+|<\s*)([A-Z]\w*)"
)
_IMPL_FOR_RE = re.compile(
    r"\bimpl(?:<[^>]*>)?\s+([A-Za-z_][\w:]*)(?:<[^>{]*>)?\s+for\s+([A-Za-z_]\w*)"
)
_SELF_METHOD_RE = re.compile(
    r"\bfn\s+\w+\s*(?:<[^>]*>)?\s*\(\s*(?:&\s*(?:'\w+\s+)?)?(?:mut\s+)?self\b"
)
_IMPL_RE = re.compile(r"\bimpl\b")


def identity_from_name(name: str) -> Optional[CveIdentity]:
    """Parse the ``cwe-<n>-cve-<yyyy>-<nnnn>`` naming convention"""
    match = IDENTITY_RE.search(name)
    if not match:
        return None
    cwe, year, number = match.groups()
    try:
        return CveIdentity(cve_id=f"CVE-{year}-{number}", cwe_id=int(cwe))
    except (ValueError, TypeError):
        logger.debug("identity_out_of_range", name=name)
        return None


def sidecar_candidates(path: Path) -> List[Path]:
    return [path.with_name(path.stem + SIDECAR_SUFFIX), path.with_name(path.name + SIDECAR_SUFFIX)]


def _read_sidecar(path: Path) -> Optional[Dict[str, object]]:
    for candidate in sidecar_candidates(path):
        if not candidate.is_file():
            continue
        try:
            data = json.loads(candidate.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise SnippetLoadError(f"unreadable sidecar {candidate}: {e}") from e
        if not isinstance(data, dict):
            raise SnippetLoadError(f"sidecar {candidate} must hold a JSON object")
        return data
    return None


def resolve_identity(path: Path) -> CveIdentity:
    """Name convention first, sidecar fields override"""
    from_name = identity_from_name(path.name)
    sidecar = _read_sidecar(path)

    cve_id = from_name.cve_id if from_name else None
    cwe_id = from_name.cwe_id if from_name else None
    if sidecar:
        cve_id = sidecar.get("cve", cve_id)  # type: ignore[assignment]
        cwe_id = sidecar.get("cwe", cwe_id)  # type: ignore[assignment]

    if cve_id is None or cwe_id is None:
        if from_name is None and IDENTITY_RE.search(path.name):
            raise SnippetLoadError(f"invalid identity in file name {path.name}: CWE id must be positive")
        raise SnippetLoadError(
            f"cannot identify {path.name}: name does not match "
            f"'cwe-<n>-cve-<yyyy>-<nnnn>' and no sidecar "
            f"({', '.join(c.name for c in sidecar_candidates(path))}) supplies cve and cwe"
        )
    try:
        return CveIdentity(cve_id=str(cve_id).upper(), cwe_id=int(cwe_id), origin_path=path)
    except (ValueError, TypeError) as e:
        raise SnippetLoadError(f"invalid identity for {path.name}: {e}") from e


def load_snippet(path: PathLike) -> CveSnippet:
    """Read one snippet file byte-exact and attach its CVE/CWE identity"""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise SnippetLoadError(f"cannot read {path}: {e}") from e
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as e:
        raise SnippetLoadError(f"{path} is not valid UTF-8: {e}") from e
    if not text.strip():
        raise SnippetLoadError("empty snippet")

    identity = resolve_identity(path)
    snippet = CveSnippet(
        cve_id=identity.cve_id,
        cwe_id=identity.cwe_id,
        source_text=text,
        origin_path=path,
        line_count=max(1, len(text.splitlines())),
    )
    logger.debug("snippet_loaded", cve_id=snippet.cve_id, cwe_id=snippet.cwe_id, path=str(path))
    return snippet


def load_corpus(corpus_dir: PathLike) -> List[Path]:
    """Snippet paths in a corpus directory: ``.rs`` files plus any file with a sidecar"""
    corpus_dir = Path(corpus_dir)
    paths = []
    for path in sorted(corpus_dir.iterdir()):
        if not path.is_file() or path.name.endswith(SIDECAR_SUFFIX):
            continue
        if path.suffix == ".rs" or any(c.is_file() for c in sidecar_candidates(path)):
            paths.append(path)
    return paths


def _strip_noise(text: str) -> str:
    text = _COMMENT_RE.sub(" ", text)
    return _STRING_RE.sub('""', text)


def _imported_names(code: str) -> Set[str]:
    names: Set[str] = set()
    for clause in _USE_RE.findall(code):
        names.update(_IDENT_RE.findall(clause))
    return names


def _declared_fields(code: str) -> Set[str]:
    fields: Set[str] = set()
    for body in _STRUCT_BODY_RE.findall(code):
        fields.update(_FIELD_DECL_RE.findall(body))
    return fields


def _is_camel(name: str) -> bool:
    # ALL_CAPS names are constants or generic parameters, not types to import
    return name != "Self" and not name.isupper()


def profile_missing_context(snippet: CveSnippet) -> MissingContextProfile:
    """Lexically estimate which kinds of context the snippet lacks"""
    code = _strip_noise(snippet.source_text)

    declared = set(_DECL_RE.findall(code))
    imported = _imported_names(code)
    known = declared | imported | PRELUDE_ALLOWLIST
    unresolved: Set[str] = set()

    self_fields = set(_SELF_FIELD_RE.findall(code))
    unresolved.update(self_fields - _declared_fields(code))

    undeclared_types = {
        name for name in _TYPE_POSITION_RE.findall(code) if _is_camel(name) and name not in known
    }
    missing_struct_defs = bool(undeclared_types) or (
        bool(self_fields) and not _STRUCT_OR_ENUM_RE.search(code)
    )
    unresolved.update(undeclared_types)

    unimported = {name for name in _CAMEL_RE.findall(code) if _is_camel(name) and name not in known}
    unresolved.update(unimported)

    missing_trait_impls = False
    for _trait, type_name in _IMPL_FOR_RE.findall(code):
        if type_name not in known:
            missing_trait_impls = True
            unresolved.add(type_name)
    if _SELF_METHOD_RE.search(code) and not _IMPL_RE.search(code):
        missing_trait_impls = True

    return MissingContextProfile(
        missing_struct_defs=missing_struct_defs,
        missing_imports=bool(unimported),
        missing_manifest=True,
        missing_trait_impls=missing_trait_impls,
        unresolved_identifiers=sorted(unresolved),
    )
