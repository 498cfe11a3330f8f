"""
Agent backends: deterministic rules, a remote chat endpoint, and a single-agent adaptor
"""

import json
import os
import re
from pathlib import Path
from typing import Any, Dict, List, Optional, Protocol, runtime_checkable

import requests
import structlog

from ..config import BackendConfig, BackendKind
from ..errors import BackendError
from ..models import AgentRole, Complexity
from ..wrapper_forge import fallback_wrapper

logger = structlog.get_logger(__name__)

Payload = Dict[str, Any]

UNSAFE_API_KEYWORDS = ("from_raw_parts", "dealloc", "drop_in_place", "add", "get_unchecked", "transmute")

BASE_FUNCTION_COUNT = 8
HIGH_COMPLEXITY_BONUS = 4

LOW_RISK_BELOW = 4.0
MEDIUM_RISK_UPTO = 7.0
LOW_RISK_PARAMS = {"search_strategy": "dfs", "time_limit_s": 30, "memory_limit_mb": 512, "max_fork_depth": 32}
MEDIUM_RISK_PARAMS = {"search_strategy": "random_path", "time_limit_s": 60, "memory_limit_mb": 1024, "max_fork_depth": 64}
HIGH_RISK_PARAMS = {"search_strategy": "random_path", "time_limit_s": 120, "memory_limit_mb": 2048, "max_fork_depth": 128}


@runtime_checkable
class AgentBackend(Protocol):
    """Anything that maps a role request payload to a role response payload"""

    serial_only: bool

    def complete(self, role: AgentRole, payload: Payload) -> Payload:
        ...


def _keyword_hits(line: str) -> int:
    return sum(len(re.findall(rf"\b{keyword}\b", line)) for keyword in UNSAFE_API_KEYWORDS)


class RuleBasedBackend:
    """Offline, deterministic stand-in for the four agents"""

    serial_only = False

    def __init__(self, template_dir: Optional[Path] = None):
        self.template_dir = template_dir

    def complete(self, role: AgentRole, payload: Payload) -> Payload:
        handler = {
            AgentRole.ORACLE: self._oracle,
            AgentRole.SAFETY: self._safety,
            AgentRole.CODEGEN: self._codegen,
            AgentRole.FILTER: self._filter,
        }[AgentRole(role)]
        return handler(payload)

    def _oracle(self, payload: Payload) -> Payload:
        unsafe_count = len(re.findall(r"\bunsafe\b", payload["source_text"]))
        if unsafe_count > 1:
            complexity = Complexity.HIGH
        elif unsafe_count == 1:
            complexity = Complexity.MEDIUM
        else:
            complexity = Complexity.LOW
        count = BASE_FUNCTION_COUNT + (HIGH_COMPLEXITY_BONUS if complexity == Complexity.HIGH else 0)
        return {
            "vulnerability_types": [payload["cwe_id"]],
            "complexity": complexity.value,
            "recommended_function_count": count,
        }

    def _safety(self, payload: Payload) -> Payload:
        lines = payload["source_text"].splitlines()
        hits = 0
        critical_lines: List[int] = []
        for number, line in enumerate(lines, start=1):
            line_hits = _keyword_hits(line)
            if line_hits:
                hits += line_hits
                critical_lines.append(number)
        cwe_id = payload["plan"]["vulnerability_types"][0]
        patterns = [{"name": keyword, "cwe_id": cwe_id} for keyword in UNSAFE_API_KEYWORDS
                    if re.search(rf"\b{keyword}\b", payload["source_text"])]
        return {
            "patterns": patterns,
            "risk_score": float(min(10, 2 + 2 * hits)),
            "critical_lines": critical_lines,
        }

    def _codegen(self, payload: Payload) -> Payload:
        cwe_id = payload["plan"]["vulnerability_types"][0]
        artifact = fallback_wrapper(cwe_id, self.template_dir)
        return {"wrapper_source": artifact.source_text}

    def _filter(self, payload: Payload) -> Payload:
        risk = float(payload["risk"]["risk_score"])
        if risk < LOW_RISK_BELOW:
            return dict(LOW_RISK_PARAMS)
        if risk <= MEDIUM_RISK_UPTO:
            return dict(MEDIUM_RISK_PARAMS)
        return dict(HIGH_RISK_PARAMS)


ROLE_INSTRUCTIONS = {
    AgentRole.ORACLE: (
        "You analyse an incomplete Rust CVE snippet. Reply with JSON only: "
        '{"vulnerability_types": [<CWE id>], "complexity": "low|medium|high", '
        '"recommended_function_count": <int, typically 8-12>}.'
    ),
    AgentRole.SAFETY: (
        "You audit unsafe Rust. Given the snippet and an analysis plan, reply with JSON only: "
        '{"patterns": [{"name": str, "cwe_id": int}], "risk_score": <0-10>, '
        '"critical_lines": [<1-based line numbers>]}. Only report CWE ids present in the plan.'
    ),
    AgentRole.CODEGEN: (
        "You write a self-contained Rust FFI wrapper reproducing the snippet's vulnerability. "
        'Every exported function is #[no_mangle] pub extern "C", returns i32 and takes only '
        "*mut u8, usize, i32 or u8 parameters. If a compiler diagnostic is given, fix it. "
        'Reply with JSON only: {"wrapper_source": "<rust source>"}.'
    ),
    AgentRole.FILTER: (
        "You choose KLEE parameters from a risk assessment. Reply with JSON only: "
        '{"search_strategy": "dfs|bfs|random_path", "time_limit_s": int, '
        '"memory_limit_mb": int, "max_fork_depth": int}.'
    ),
}

_FENCE_RE = re.compile(r"^\s*```(?:json)?\s*|\s*```\s*$", re.IGNORECASE | re.MULTILINE)


def extract_json(text: str) -> Payload:
    """Decode a JSON object from a model reply, tolerating code fences and chatter"""
    stripped = _FENCE_RE.sub("", text or "").strip()
    try:
        data = json.loads(stripped)
    except json.JSONDecodeError:
        start, end = stripped.find("{"), stripped.rfind("}")
        if start < 0 or end <= start:
            raise BackendError("reply contains no JSON object")
        try:
            data = json.loads(stripped[start:end + 1])
        except json.JSONDecodeError as e:
            raise BackendError(f"reply is not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise BackendError("reply JSON is not an object")
    return data


class RemoteBackend:
    """OpenAI-compatible chat-completions endpoint, one model per role"""

    def __init__(self, config: BackendConfig, session: Optional[requests.Session] = None):
        self.config = config
        self.serial_only = config.serial_only
        self.session = session or requests.Session()

    def _api_key(self) -> str:
        key = os.environ.get(self.config.api_key_env)
        if not key:
            raise BackendError(f"environment variable {self.config.api_key_env} is not set")
        return key

    def complete(self, role: AgentRole, payload: Payload) -> Payload:
        role = AgentRole(role)
        body = {
            "model": self.config.models.get(role.value, "gpt-4o"),
            "messages": [
                {"role": "system", "content": ROLE_INSTRUCTIONS[role]},
                {"role": "user", "content": json.dumps(payload, sort_keys=True)},
            ],
            "max_tokens": self.config.max_tokens,
            "temperature": self.config.temperature,
        }
        url = f"{self.config.base_url.rstrip('/')}/chat/completions"
        try:
            response = self.session.post(
                url,
                json=body,
                headers={"Authorization": f"Bearer {self._api_key()}"},
                timeout=self.config.timeout_s,
            )
            response.raise_for_status()
            data = response.json()
        except (requests.RequestException, ValueError) as e:
            raise BackendError(f"{role.value} request failed: {e}") from e

        try:
            content = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as e:
            raise BackendError(f"{role.value} reply has no message content") from e
        logger.debug("backend_reply", role=role.value, chars=len(content or ""))
        return extract_json(content)


class SingleAgentBackend:
    """One-model comparison mode: no planning or parameter reasoning.

    The plan comes from snippet metadata alone and parameter selection always
    answers with the defaults; only wrapper generation reaches the inner backend.
    """

    def __init__(self, inner: AgentBackend):
        self.inner = inner
        self.serial_only = inner.serial_only

    def complete(self, role: AgentRole, payload: Payload) -> Payload:
        role = AgentRole(role)
        if role == AgentRole.ORACLE:
            return {
                "vulnerability_types": [payload["cwe_id"]],
                "complexity": Complexity.MEDIUM.value,
                "recommended_function_count": BASE_FUNCTION_COUNT,
            }
        if role == AgentRole.SAFETY:
            return {"patterns": [], "risk_score": 5.0, "critical_lines": []}
        if role == AgentRole.FILTER:
            return {}
        return self.inner.complete(role, payload)


def make_backend(config: BackendConfig, template_dir: Optional[Path] = None) -> AgentBackend:
    if config.kind == BackendKind.REMOTE:
        return RemoteBackend(config)
    return RuleBasedBackend(template_dir)
