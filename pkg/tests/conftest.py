from __future__ import annotations

import sys
from pathlib import Path

import pytest

FIXTURES_DIR = Path(__file__).parent / "fixtures"
sys.path.insert(0, str(FIXTURES_DIR))

from sciforge.backends import Backends, CassetteLibrary
from sciforge.prompts import PromptLibrary
from sciforge.sandbox import SandboxConfig

import fakes

STUB_RUNNER = FIXTURES_DIR / "stub_runner.py"
CASSETTES_DIR = FIXTURES_DIR / "cassettes"
GOLDEN_DIR = FIXTURES_DIR / "golden"
ONTOLOGY = FIXTURES_DIR / "ontology.json"


@pytest.fixture
def prompts() -> PromptLibrary:
    return PromptLibrary()


@pytest.fixture
def fake_backends(tmp_path):
    """Factory for backend bundles over the scripted fake world."""

    def build(namespace: str = "test", mode: str = "live", **overrides) -> Backends:
        providers = {**fakes.providers(), **overrides}
        return Backends(
            library=CassetteLibrary(tmp_path / "cassettes", mode),
            namespace=namespace,
            llm_provider=providers["llm_provider"],
            search_provider=providers["search_provider"],
            fetch_provider=providers["fetch_provider"],
            retry_base_delay_s=0.0,
        )

    return build


@pytest.fixture
def stub_sandbox():
    """Factory for sandbox configs wired to the envelope-contract stub."""

    def build(timeout_s: float = 30.0, **kwargs) -> SandboxConfig:
        return SandboxConfig(timeout_s=timeout_s, runner_path=str(STUB_RUNNER), **kwargs)

    return build
