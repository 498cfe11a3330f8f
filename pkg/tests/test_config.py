"""Tests for run configuration loading."""

from __future__ import annotations

import pytest
from pydantic import ValidationError

from src.symex_framework.config import (
    DEFAULT_CONFIDENCE_WEIGHTS,
    BackendKind,
    ExecutorConfig,
    RunConfig,
    ToolchainMode,
    load_config,
)
from src.symex_framework.models import SessionMode


class TestRunConfig:
    def test_defaults_are_an_offline_run(self):
        config = load_config()

        assert config.backend.kind == BackendKind.RULE
        assert config.toolchain.mode == ToolchainMode.OFFLINE
        assert config.executor.mode is SessionMode.REPLAY
        assert (config.harness.buffer_bytes, config.harness.index_bound) == (128, 10000)
        assert config.backend.models["oracle"] == "gpt-4-turbo"
        assert config.confidence_weights == DEFAULT_CONFIDENCE_WEIGHTS

    def test_load_from_file(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text(
            '{"backend": {"kind": "remote", "serial_only": true}, '
            '"toolchain": {"mode": "live"}, '
            '"harness": {"buffer_bytes": 64}, '
            '"confidence_weights": {"external": 0.75}, '
            '"workers": 3}'
        )

        config = load_config(path)

        assert config.backend.kind == BackendKind.REMOTE
        assert config.backend.serial_only is True
        assert config.toolchain.mode == ToolchainMode.LIVE
        assert config.harness.buffer_bytes == 64
        assert config.confidence_weights["external"] == 0.75
        assert config.confidence_weights["ptr"] == 1.0
        assert config.worker_bound == 3

    def test_unknown_weight_kind_rejected(self):
        with pytest.raises(ValidationError):
            RunConfig(confidence_weights={"segfault": 1.0})

    def test_executor_mode_is_checked(self):
        with pytest.raises(ValidationError):
            ExecutorConfig(mode="simulate")

    def test_executor_mode_parses_to_session_mode(self):
        assert ExecutorConfig.model_validate({"mode": "live"}).mode is SessionMode.LIVE

    def test_worker_bound_defaults_to_cpu_count(self, monkeypatch):
        monkeypatch.setattr("os.cpu_count", lambda: None)

        assert RunConfig().worker_bound == 1


class TestExecutorBinary:
    def test_explicit_binary_wins(self, monkeypatch):
        monkeypatch.setenv("KLEE_BIN", "/opt/klee/bin/klee")

        assert ExecutorConfig(binary="/usr/local/bin/klee").resolve_binary() == "/usr/local/bin/klee"

    def test_environment_then_path(self, monkeypatch):
        monkeypatch.setenv("KLEE_BIN", "/opt/klee/bin/klee")
        assert ExecutorConfig().resolve_binary() == "/opt/klee/bin/klee"

        monkeypatch.delenv("KLEE_BIN")
        assert ExecutorConfig().resolve_binary() == "klee"
