import sys

import pytest

from krefcheck.corpus import corpus_file, load_manifest
from krefcheck.engine.solver import resolve_solver_cmd
from krefcheck.pipeline import load

MANIFEST = load_manifest()
PROGRAMS = {e.name: e for e in MANIFEST.entries}


def load_corpus(name: str):
    entry = PROGRAMS[name]
    return load(entry.path.read_text(), str(entry.path))


def corpus_text(name: str) -> str:
    return corpus_file(f"{name}.kir").read_text()


needs_solver = pytest.mark.skipif(resolve_solver_cmd() is None,
                                  reason="no Horn solver configured")


@pytest.fixture(params=sorted(PROGRAMS))
def program_name(request):
    return request.param


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for i in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.format_line(i))
