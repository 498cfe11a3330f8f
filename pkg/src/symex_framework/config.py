"""
Run configuration loaded from a JSON file
"""

import os
from enum import Enum
from pathlib import Path
from typing import Dict, Optional

from pydantic import BaseModel, Field, field_validator

from .models import ErrorKind, SessionMode

DEFAULT_CONFIDENCE_WEIGHTS: Dict[str, float] = {
    ErrorKind.PTR.value: 1.0,
    ErrorKind.EXTERNAL.value: 0.5,
    ErrorKind.ABORT.value: 0.25,
    ErrorKind.DIV.value: 0.25,
    ErrorKind.OVERFLOW.value: 0.25,
}


class BackendKind(str, Enum):
    RULE = "rule"
    REMOTE = "remote"


class ToolchainMode(str, Enum):
    OFFLINE = "offline"
    LIVE = "live"


class BackendConfig(BaseModel):
    """Agent backend selection; credentials are read from ``api_key_env``"""
    kind: BackendKind = BackendKind.RULE
    base_url: str = "https://api.openai.com/v1"
    api_key_env: str = "SYMEX_LLM_API_KEY"
    models: Dict[str, str] = {
        "oracle": "gpt-4-turbo",
        "safety": "gpt-4o",
        "codegen": "gpt-4o",
        "filter": "gpt-4o-mini",
    }
    max_tokens: int = Field(2500, gt=0)
    temperature: float = 0.0
    timeout_s: int = Field(120, gt=0)
    serial_only: bool = False


class ToolchainConfig(BaseModel):
    """External compiler commands; ``{input}`` and ``{output}`` are substituted"""
    mode: ToolchainMode = ToolchainMode.OFFLINE
    rustc_command: str = (
        "rustc --crate-type=lib --emit=llvm-bc -g -C opt-level=0 "
        "-C panic=abort -o {output} {input}"
    )
    harness_command: str = "clang -emit-llvm -c -g -O0 -Xclang -disable-O0-optnone -o {output} {input}"
    link_command: str = "llvm-link -o {output} {input}"
    timeout_s: int = Field(120, gt=0)


class ExecutorConfig(BaseModel):
    """Symbolic executor invocation, or the root of recorded output directories"""
    mode: SessionMode = SessionMode.REPLAY
    command: str = "{binary} {flags} --output-dir={output} {input}"
    binary: Optional[str] = None
    binary_env: str = "KLEE_BIN"
    replay_root: Optional[Path] = None

    def resolve_binary(self) -> str:
        return self.binary or os.environ.get(self.binary_env, "klee")


class HarnessConfig(BaseModel):
    buffer_bytes: int = Field(128, ge=1)
    index_bound: int = Field(10000, ge=1)


class RunConfig(BaseModel):
    """Everything a corpus run needs; all fields default to an offline run"""
    backend: BackendConfig = BackendConfig()
    toolchain: ToolchainConfig = ToolchainConfig()
    executor: ExecutorConfig = ExecutorConfig()
    harness: HarnessConfig = HarnessConfig()
    confidence_weights: Dict[str, float] = dict(DEFAULT_CONFIDENCE_WEIGHTS)
    workers: Optional[int] = Field(None, ge=1)
    template_dir: Optional[Path] = None

    @field_validator("confidence_weights")
    @classmethod
    def _known_kinds(cls, weights: Dict[str, float]) -> Dict[str, float]:
        merged = dict(DEFAULT_CONFIDENCE_WEIGHTS)
        for kind, weight in weights.items():
            ErrorKind(kind)
            merged[kind] = weight
        return merged

    @property
    def worker_bound(self) -> int:
        return self.workers or os.cpu_count() or 1


def load_config(path: Optional[Path] = None) -> RunConfig:
    """Parse a run-config file, or return defaults when no path is given"""
    if path is None:
        return RunConfig()
    return RunConfig.model_validate_json(Path(path).read_text(encoding="utf-8"))
