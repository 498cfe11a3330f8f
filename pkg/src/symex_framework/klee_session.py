"""
Running KLEE as an external process, or replaying a recorded output directory
"""

import re
import shlex
import shutil
import subprocess
from pathlib import Path
from typing import Dict, List, Optional

import structlog

from .errors import ExecutorError
from .models import (
    ErrorFileEntry,
    ErrorKind,
    ExecutorSession,
    KleeParams,
    OutputDirListing,
    SearchStrategy,
    SessionMode,
)

logger = structlog.get_logger(__name__)

ERROR_FILE_RE = re.compile(r"^(test\d{6})\.([A-Za-z0-9_]+)\.err$")
KTEST_RE = re.compile(r"^test\d{6}\.ktest$")
STATS_FILES = ("info", "run.stats")

STRATEGY_FLAGS: Dict[SearchStrategy, str] = {
    SearchStrategy.DFS: "dfs",
    SearchStrategy.BFS: "bfs",
    SearchStrategy.RANDOM_PATH: "random-path",
}

TIMEOUT_FACTOR = 2


def select_flags(params: KleeParams) -> List[str]:
    return [
        f"--search={STRATEGY_FLAGS[params.search_strategy]}",
        f"--max-time={params.time_limit_s}s",
        f"--max-memory={params.memory_limit_mb}",
        f"--max-depth={params.max_fork_depth}",
    ]


def scan_output_dir(output_dir: Path, partial: bool = False) -> OutputDirListing:
    """List the typed error files and test cases of a KLEE output directory.

    Read-only; ``.err`` files with a suffix outside the five known kinds are
    quarantined rather than dropped.
    """
    output_dir = Path(output_dir)
    if not output_dir.is_dir():
        raise ExecutorError(f"output directory not found: {output_dir}")

    error_files: List[ErrorFileEntry] = []
    test_files: List[Path] = []
    quarantined: List[Path] = []
    for path in sorted(output_dir.iterdir()):
        if not path.is_file():
            continue
        match = ERROR_FILE_RE.match(path.name)
        if match:
            try:
                kind = ErrorKind(match.group(2))
            except ValueError:
                quarantined.append(path)
                continue
            error_files.append(ErrorFileEntry(test_id=match.group(1), kind=kind, path=path))
        elif path.name.endswith(".err"):
            quarantined.append(path)
        elif KTEST_RE.match(path.name):
            test_files.append(path)

    if quarantined:
        logger.warning("error_files_quarantined", dir=str(output_dir), count=len(quarantined))
    return OutputDirListing(
        dir=output_dir,
        error_files=error_files,
        test_files=test_files,
        stats_present=any((output_dir / name).is_file() for name in STATS_FILES),
        quarantined=quarantined,
        partial=partial,
    )


def build_command(
    template: str, params: KleeParams, bitcode: Path, output_dir: Path, binary: str = "klee"
) -> List[str]:
    argv: List[str] = []
    for part in shlex.split(template):
        if part == "{flags}":
            argv.extend(select_flags(params))
        else:
            argv.append(part.format(binary=binary, input=str(bitcode), output=str(output_dir)))
    return argv


def run(
    session: ExecutorSession,
    bitcode: Optional[Path],
    params: KleeParams,
    output_dir: Optional[Path] = None,
) -> OutputDirListing:
    """Execute KLEE live, or scan the session's replay directory"""
    if session.mode == SessionMode.REPLAY:
        logger.debug("replaying_output", dir=str(session.replay_dir))
        return scan_output_dir(session.replay_dir)

    if bitcode is None or not Path(bitcode).is_file():
        raise ExecutorError(f"bitcode not found: {bitcode}")
    if output_dir is None:
        output_dir = Path(bitcode).parent / "klee-out"
    # KLEE refuses to reuse an existing output directory
    if output_dir.exists():
        shutil.rmtree(output_dir)

    argv = build_command(session.executor_command, params, Path(bitcode), output_dir)
    if shutil.which(argv[0]) is None:
        raise ExecutorError(f"executor not found: {argv[0]}")

    timeout_s = TIMEOUT_FACTOR * params.time_limit_s
    logger.info("executor_started", argv=argv, timeout_s=timeout_s)
    try:
        result = subprocess.run(argv, capture_output=True, text=True, encoding="utf-8", errors="replace",
                                timeout=timeout_s)
    except subprocess.TimeoutExpired:
        logger.warning("executor_timed_out", timeout_s=timeout_s, dir=str(output_dir))
        if not output_dir.is_dir():
            raise ExecutorError(f"executor timed out after {timeout_s}s without output")
        return scan_output_dir(output_dir, partial=True)
    except OSError as e:
        raise ExecutorError(f"cannot start executor {argv[0]}: {e}") from e

    listing = scan_output_dir(output_dir) if output_dir.is_dir() else None
    if result.returncode != 0 and (listing is None or not (listing.error_files or listing.test_files)):
        raise ExecutorError(f"executor exited with {result.returncode}: {result.stderr.strip()[:2000]}")
    if listing is None:
        raise ExecutorError(f"executor produced no output directory at {output_dir}")
    return listing