from __future__ import annotations

import shutil
import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parent.parent
DEMO = ROOT / "fixtures" / "demo"
sys.path.insert(0, str(ROOT / "scripts"))

import build_demo_pack  # noqa: E402

from toolsim.backend import CallbackBackend  # noqa: E402
from toolsim.tools import ToolSeed, build_tool  # noqa: E402

# Filled by tests/test_acceptance.py, printed once at the end of the session.
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def demo_backend():
    return CallbackBackend(build_demo_pack.respond, name="demo-author")


@pytest.fixture(scope="session")
def demo_tools(demo_backend):
    tools = {}
    for name, spec in build_demo_pack.TOOLS.items():
        tools[name] = build_tool(ToolSeed(name, spec["introduction"], spec["category"]), demo_backend)
    return tools


@pytest.fixture(scope="session")
def holiday_tool(demo_tools):
    return demo_tools["Nager.Date"]


@pytest.fixture()
def demo_copy(tmp_path):
    """A private copy of the shipped demo pack."""
    target = tmp_path / "demo"
    shutil.copytree(DEMO, target, ignore=shutil.ignore_patterns("out"))
    return target
