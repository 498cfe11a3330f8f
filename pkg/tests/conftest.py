"""Shared fixtures"""

from pathlib import Path

import pytest
import structlog

from tests.klee_payloads import CORPUS, write_corpus, write_output_dir


@pytest.fixture(autouse=True)
def _reset_structlog():
    # CLI runs point structlog at a captured stream; do not leak it into later tests
    yield
    structlog.reset_defaults()


@pytest.fixture(scope="session")
def cve_35904_output(tmp_path_factory) -> Path:
    """Recorded output directory with 48 pointer and 704 external errors"""
    root = tmp_path_factory.mktemp("klee_output")
    return write_output_dir(root / "cwe-131-cve-2020-35904", ptr=48, external=704)


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory) -> Path:
    """31 snippets with one replay directory each"""
    return write_corpus(tmp_path_factory.mktemp("corpus"), CORPUS)
