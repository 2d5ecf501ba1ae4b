import gc
import json
import os
import shutil
from pathlib import Path

import pytest

from blockflow.plugin import BUILTIN_PLUGIN_DIR, PluginRegistry

ROOT = Path(__file__).resolve().parent.parent
TEST_PLUGINS = Path(__file__).resolve().parent / "plugins"
DEMO_MODEL = ROOT / "models" / "pendulum_pid.json"

ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []


@pytest.fixture(autouse=True)
def _isolated_plugin_env(monkeypatch):
    monkeypatch.delenv("BLOCKFLOW_PLUGIN_PATH", raising=False)


@pytest.fixture(autouse=True)
def _gc_left_enabled():
    yield
    assert gc.isenabled(), "a pacer was started but never stopped"


@pytest.fixture
def registry():
    return PluginRegistry([TEST_PLUGINS])


@pytest.fixture
def probe_calls(registry):
    calls = registry.load("probe").module.CALLS
    calls.clear()
    yield calls
    calls.clear()


@pytest.fixture
def demo_model_path():
    return DEMO_MODEL


@pytest.fixture
def write_graph(tmp_path):
    """Write a graph dict (or raw text) to a file and return its path."""
    counter = iter(range(10_000))

    def _write(doc, name=None):
        path = tmp_path / (name or f"graph{next(counter)}.json")
        path.write_text(doc if isinstance(doc, str) else json.dumps(doc, indent=2))
        return path

    return _write


@pytest.fixture
def stdblocks_copy(tmp_path):
    """A directory holding a byte-identical copy of the stdblocks plugin."""
    d = tmp_path / "plugin_copy"
    d.mkdir()
    shutil.copy(BUILTIN_PLUGIN_DIR / "stdblocks.py", d / "stdblocks.py")
    return d


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")


def rt_slack() -> float:
    """Relative widening of wall-clock windows (CI may set BLOCKFLOW_RT_SLACK=0.2)."""
    return float(os.environ.get("BLOCKFLOW_RT_SLACK", "0"))


def rt_attempts() -> int:
    """Realtime checks measure up to this many times; one clean run passes.

    A single host preemption longer than a step produces an overrun no matter
    what the pacer does, so one noisy measurement is not evidence of a bug.
    """
    return max(1, int(os.environ.get("BLOCKFLOW_RT_ATTEMPTS", "3")))
