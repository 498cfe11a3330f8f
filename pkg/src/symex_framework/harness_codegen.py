"""
C harness generation for KLEE from a wrapper's FFI signatures
"""

from typing import Dict, List

import structlog

from .errors import HarnessError
from .models import FfiSignature, HarnessSource, HarnessSpec, ParamKind

logger = structlog.get_logger(__name__)

MAX_SCALAR_PARAMS = 6
BUFFER_NAME = "buffer"

C_TYPES: Dict[ParamKind, str] = {
    ParamKind.BYTE_POINTER: "unsigned char *",
    ParamKind.SIZE: "size_t",
    ParamKind.INT32: "int32_t",
    ParamKind.BYTE: "unsigned char",
}

# Scalar kinds in declaration order, with the prefix of their harness variables.
SLOT_PREFIXES = (
    (ParamKind.SIZE, "idx"),
    (ParamKind.BYTE, "val"),
    (ParamKind.INT32, "num"),
)

HEADER = "#include <klee/klee.h>\n#include <stdint.h>\n#include <string.h>\n"


def render_extern_decl(sig: FfiSignature) -> str:
    """C prototype for one exported wrapper function"""
    if not sig.params:
        return f"extern int32_t {sig.name}(void);"
    params = []
    for param in sig.params:
        c_type = C_TYPES[param.kind]
        separator = "" if c_type.endswith("*") else " "
        params.append(f"{c_type}{separator}{param.name}")
    return f"extern int32_t {sig.name}({', '.join(params)});"


def _slot_prefix(kind: ParamKind) -> str:
    for slot_kind, prefix in SLOT_PREFIXES:
        if slot_kind == kind:
            return prefix
    raise HarnessError(f"no harness slot for parameter kind {kind.value}")


def _call_arguments(sig: FfiSignature) -> List[str]:
    """Map each parameter to the shared buffer or to its kind-slot variable"""
    seen: Dict[ParamKind, int] = {}
    arguments = []
    for param in sig.params:
        if param.kind == ParamKind.BYTE_POINTER:
            arguments.append(BUFFER_NAME)
            continue
        seen[param.kind] = seen.get(param.kind, 0) + 1
        arguments.append(f"{_slot_prefix(param.kind)}{seen[param.kind]}")
    return arguments


def _slot_counts(signatures: List[FfiSignature]) -> Dict[ParamKind, int]:
    counts: Dict[ParamKind, int] = {kind: 0 for kind, _ in SLOT_PREFIXES}
    for sig in signatures:
        scalars = [p for p in sig.params if p.kind != ParamKind.BYTE_POINTER]
        if len(scalars) > MAX_SCALAR_PARAMS:
            raise HarnessError(
                f"{sig.name} takes {len(scalars)} scalar parameters; at most {MAX_SCALAR_PARAMS} are supported"
            )
        for kind, _ in SLOT_PREFIXES:
            counts[kind] = max(counts[kind], sum(1 for p in scalars if p.kind == kind))
    return counts


def generate_harness(spec: HarnessSpec) -> HarnessSource:
    """Emit the harness: externs, symbolic inputs, index bounds and one path per function"""
    if not spec.signatures:
        raise HarnessError("cannot generate a harness without signatures")
    counts = _slot_counts(spec.signatures)

    slots = [
        (C_TYPES[kind], [f"{prefix}{i}" for i in range(1, counts[kind] + 1)])
        for kind, prefix in SLOT_PREFIXES
    ]

    lines: List[str] = [HEADER]
    lines.extend(render_extern_decl(sig) for sig in spec.signatures)
    lines.append("")
    lines.append("int main() {")
    for c_type, names in slots:
        if names:
            lines.append(f"    {c_type} {', '.join(names)};")
    lines.append(f"    unsigned char {BUFFER_NAME}[{spec.buffer_bytes}];")
    lines.append("")

    for _c_type, names in slots:
        for name in names:
            lines.append(f'    klee_make_symbolic(&{name}, sizeof({name}), "{name}");')
    lines.append(f'    klee_make_symbolic({BUFFER_NAME}, sizeof({BUFFER_NAME}), "{BUFFER_NAME}");')
    lines.append("")

    size_names = slots[0][1]
    for name in size_names:
        lines.append(f"    klee_assume({name} < {spec.index_bound});")
    if size_names:
        lines.append("")

    path_count = len(spec.signatures)
    lines.append(f'    int path = klee_range(0, {path_count}, "path");')
    lines.append("")
    for index, sig in enumerate(spec.signatures):
        keyword = "if" if index == 0 else "} else if"
        lines.append(f"    {keyword} (path == {index}) {{")
        lines.append(f"        {sig.name}({', '.join(_call_arguments(sig))});")
    lines.append("    }")
    lines.append("    return 0;")
    lines.append("}")

    text = "\n".join(lines) + "\n"
    logger.debug("harness_generated", functions=path_count, bytes=len(text))
    return HarnessSource(text=text, path_count=path_count)
