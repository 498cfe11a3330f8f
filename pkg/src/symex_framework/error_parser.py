"""
Parser for KLEE typed error files (``testNNNNNN.<kind>.err``)
"""

import re
from typing import Dict, Iterable, List, Mapping, Optional, Tuple

import structlog
from pydantic import ValidationError

from .errors import MalformedRecordError
from .models import (
    MAX_U64,
    CriticalitySummary,
    ErrorKind,
    FrameArg,
    KleeErrorRecord,
    OutputDirListing,
    StackFrame,
)

logger = structlog.get_logger(__name__)

# Message fragments expected for each suffix kind; a miss only warns.
KIND_MESSAGE_HINTS: Dict[ErrorKind, Tuple[str, ...]] = {
    ErrorKind.PTR: ("memory error", "pointer"),
    ErrorKind.EXTERNAL: ("external", "call", "panic"),
    ErrorKind.ABORT: ("abort",),
    ErrorKind.DIV: ("divide", "division"),
    ErrorKind.OVERFLOW: ("overflow",),
}


class KleeErrorParser:
    """Parser for the textual error reports KLEE writes next to each test case"""

    _header_re = re.compile(r"^([A-Za-z][\w. ]*):\s?(.*)$")
    _frame_re = re.compile(r"^#(\d+)\s+in\s+([A-Za-z_$][\w$.:<>]*)\s*\((.*)\)(?:\s+at\s+(\S+))?$", re.DOTALL)
    _arg_re = re.compile(r"^([A-Za-z_]\w*)\s*=\s*(\S+)$")
    _int_re = re.compile(r"^-?\d+$")
    _range_re = re.compile(r"^\[\s*(\d+)\s*,\s*(\d+)\s*\]$")

    def parse_error_file(self, text: str, kind: ErrorKind, test_id: str) -> KleeErrorRecord:
        """Parse one error file; the kind always comes from the file suffix"""
        lines = text.splitlines()
        first = next((line for line in lines if line.strip()), "")
        if not first.startswith("Error:"):
            raise MalformedRecordError(f"{test_id}.{kind.value}.err does not start with 'Error:'", text)

        fields: Dict[str, object] = {"message": first[len("Error:"):].strip()}
        warnings: List[str] = []
        partial = False

        for header, body in self._split_sections(lines[lines.index(first) + 1:]):
            if header == "File":
                fields["source_file"] = body[0].strip() if body else None
            elif header == "Line":
                value = body[0].strip() if body else ""
                if value.isdigit():
                    fields["source_line"] = int(value)
                else:
                    partial = True
            elif header == "Stack":
                frames, ok = self._parse_stack(body)
                fields["frames"] = frames
                partial = partial or not ok
            elif header == "Info":
                info, ok = self._parse_info(body)
                fields.update(info)
                partial = partial or not ok

        frames: List[StackFrame] = fields.get("frames", [])  # type: ignore[assignment]
        if frames:
            fields["faulting_function"] = frames[0].function
            fields["frame_args"] = list(frames[0].args)

        message = str(fields["message"]).lower()
        if not any(hint in message for hint in KIND_MESSAGE_HINTS[kind]):
            warnings.append(f"suffix kind '{kind.value}' does not match message '{fields['message']}'")

        example = fields.get("example_address")
        address_range = fields.get("address_range")
        if example is not None and address_range is not None:
            low, high = address_range  # type: ignore[misc]
            if not low <= example <= high:  # type: ignore[operator]
                warnings.append(f"example address {example} outside range [{low}, {high}]")

        if partial:
            warnings.append("some sections could not be parsed")
        for warning in warnings:
            logger.warning("error_record_inconsistent", test_id=test_id, kind=kind.value, detail=warning)

        return KleeErrorRecord(
            test_id=test_id,
            kind=kind,
            raw_text=text,
            partial=partial,
            warnings=warnings,
            **fields,  # type: ignore[arg-type]
        )

    def _split_sections(self, lines: List[str]) -> List[Tuple[str, List[str]]]:
        """Group lines under their unindented ``Header:`` line"""
        sections: List[Tuple[str, List[str]]] = []
        for line in lines:
            if not line.strip():
                continue
            match = self._header_re.match(line) if not line[0].isspace() else None
            if match:
                body = [match.group(2)] if match.group(2).strip() else []
                sections.append((match.group(1).strip(), body))
            elif sections:
                sections[-1][1].append(line)
        return sections

    def _join_frames(self, body: List[str]) -> List[str]:
        """KLEE wraps long argument lists; rejoin each ``#n in ...`` frame"""
        frames: List[str] = []
        for line in body:
            stripped = line.strip()
            if stripped.startswith("#") or not frames:
                frames.append(stripped)
            else:
                frames[-1] += " " + stripped
        return [re.sub(r"\(\s+", "(", re.sub(r"\s+\)", ")", f)) for f in frames]

    def _parse_stack(self, body: List[str]) -> Tuple[List[StackFrame], bool]:
        frames: List[StackFrame] = []
        ok = True
        for text in self._join_frames(body):
            match = self._frame_re.match(text)
            if not match:
                ok = False
                continue
            args, args_ok = self._parse_args(match.group(3))
            ok = ok and args_ok
            frames.append(
                StackFrame(index=int(match.group(1)), function=match.group(2), args=args, location=match.group(4))
            )
        return frames, ok

    def _parse_args(self, text: str) -> Tuple[List[FrameArg], bool]:
        args: List[FrameArg] = []
        ok = True
        for raw in text.split(","):
            raw = raw.strip()
            if not raw:
                continue
            match = self._arg_re.match(raw)
            if not match:
                ok = False
                continue
            name, value = match.groups()
            if value == "symbolic":
                args.append(FrameArg(name=name, value="symbolic"))
            elif self._int_re.match(value):
                args.append(FrameArg(name=name, value=int(value)))
            else:
                ok = False
        return args, ok

    def _parse_info(self, body: List[str]) -> Tuple[Dict[str, object], bool]:
        """``address:`` is kept verbatim; ``example:`` and ``range:`` are decoded"""
        entries: List[Tuple[str, str]] = []
        for line in body:
            stripped = line.strip()
            key, sep, value = stripped.partition(":")
            if sep and re.fullmatch(r"[a-z][\w ]*", key):
                entries.append((key.strip(), value.strip()))
            elif entries:
                entries[-1] = (entries[-1][0], f"{entries[-1][1]} {stripped}".strip())

        info: Dict[str, object] = {}
        ok = True
        for key, value in entries:
            if key == "address":
                info["address_expr"] = re.sub(r"\s+", " ", value)
            elif key == "example":
                if value.isdigit() and int(value) <= MAX_U64:
                    info["example_address"] = int(value)
                else:
                    ok = False
            elif key == "range":
                match = self._range_re.match(value)
                if match and int(match.group(1)) <= int(match.group(2)) <= MAX_U64:
                    info["address_range"] = (int(match.group(1)), int(match.group(2)))
                else:
                    ok = False
        return info, ok


def _render_arg(arg: FrameArg) -> str:
    return f"{arg.name}={arg.value}"


def render_error_record(record: KleeErrorRecord) -> str:
    """Write a record back in KLEE's error-file layout (used to build fixtures)"""
    lines = [f"Error: {record.message}"]
    if record.source_file:
        lines.append(f"File: {record.source_file}")
    if record.source_line is not None:
        lines.append(f"Line: {record.source_line}")
    if record.frames:
        lines.append("Stack:")
        for frame in record.frames:
            location = f" at {frame.location}" if frame.location else ""
            args = ", ".join(_render_arg(arg) for arg in frame.args)
            lines.append(f"  #{frame.index} in {frame.function}({args}){location}")
    info = []
    if record.address_expr:
        info.append(f"  address: {record.address_expr}")
    if record.example_address is not None:
        info.append(f"  example: {record.example_address}")
    if record.address_range is not None:
        info.append(f"  range:   [{record.address_range[0]}, {record.address_range[1]}]")
    if info:
        lines.append("Info:")
        lines.extend(info)
    return "\n".join(lines) + "\n"


def parse_error_file(text: str, kind: ErrorKind, test_id: str) -> KleeErrorRecord:
    return KleeErrorParser().parse_error_file(text, kind, test_id)


def scan_and_parse(listing: OutputDirListing) -> List[KleeErrorRecord]:
    """One record per error file; unreadable or malformed files become malformed records"""
    parser = KleeErrorParser()
    records: List[KleeErrorRecord] = []
    for entry in listing.error_files:
        text = ""
        try:
            text = entry.path.read_text(encoding="utf-8", errors="replace")
            records.append(parser.parse_error_file(text, entry.kind, entry.test_id))
        except OSError as e:
            logger.warning("error_file_unreadable", path=str(entry.path), error=str(e))
            records.append(_malformed(entry.test_id, entry.kind, "", f"unreadable: {e}"))
        except MalformedRecordError as e:
            logger.warning("error_file_malformed", path=str(entry.path), error=str(e))
            records.append(_malformed(entry.test_id, entry.kind, e.raw_text, str(e)))
        except ValidationError as e:
            logger.warning("error_file_malformed", path=str(entry.path), error=str(e))
            records.append(_malformed(entry.test_id, entry.kind, text, f"invalid field values: {e}"))
    return records


def _malformed(test_id: str, kind: ErrorKind, raw_text: str, reason: str) -> KleeErrorRecord:
    return KleeErrorRecord(
        test_id=test_id, kind=kind, raw_text=raw_text, partial=True, malformed=True, warnings=[reason]
    )


def summarize_criticality(records: Iterable[KleeErrorRecord]) -> CriticalitySummary:
    counts = {kind: 0 for kind in ErrorKind}
    for record in records:
        counts[record.kind] += 1
    return CriticalitySummary(
        ptr_count=counts[ErrorKind.PTR],
        external_count=counts[ErrorKind.EXTERNAL],
        abort_count=counts[ErrorKind.ABORT],
        div_count=counts[ErrorKind.DIV],
        overflow_count=counts[ErrorKind.OVERFLOW],
        critical_total=counts[ErrorKind.PTR] + counts[ErrorKind.EXTERNAL],
    )


def confidence_score(summary: CriticalitySummary, weights: Mapping[str, float]) -> float:
    """Weighted error count; pointer faults weigh most by default"""
    return round(sum(weights.get(kind.value, 0.0) * summary.count(kind) for kind in ErrorKind), 6)


def faulting_functions(records: Iterable[KleeErrorRecord]) -> List[str]:
    return sorted({r.faulting_function for r in records if r.faulting_function})


def first_concrete_example(records: Iterable[KleeErrorRecord]) -> Optional[KleeErrorRecord]:
    return next((r for r in records if r.example_address is not None), None)
