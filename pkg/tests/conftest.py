from __future__ import annotations

import pytest

from evoharness import _backend
from evoharness.mechanisms import seed_artifact
from evoharness.workspace import init_workspace

BACKENDS = _backend.available()


@pytest.fixture(params=sorted(BACKENDS), ids=lambda name: f"backend={name}")
def backend(request):
    return BACKENDS[request.param]


@pytest.fixture
def make_workspace(tmp_path):
    """Factory for fresh workspaces; the built-in seed is staged unless ``seed=None``."""
    counter = iter(range(1_000_000))

    def make(task="cp26", seed="builtin", **kwargs):
        root = tmp_path / f"ws{next(counter)}"
        content = seed_artifact(task) if seed == "builtin" else seed
        return init_workspace(root, task, content, **kwargs)

    return make


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.RESULTS:
        terminalreporter.write_line(line)
