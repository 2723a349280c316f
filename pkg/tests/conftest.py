import time

import pytest

from rscorrect.experiments import PRESETS, preset, run_experiment

_cache: dict = {}


def preset_rows(name):
    """Rows (and wall time) of a preset ablation, computed once per session."""
    if name not in _cache:
        assert name in PRESETS
        start = time.perf_counter()
        rows = run_experiment(preset(name), jobs=1)
        _cache[name] = (rows, time.perf_counter() - start)
    return _cache[name]


@pytest.fixture(scope="session")
def ablation():
    return preset_rows


# acceptance criteria report: one line per criterion in the terminal summary
_criteria: dict = {}


@pytest.fixture(scope="session")
def criterion():
    def record(number, title, ok, detail):
        _criteria[number] = (title, bool(ok), detail)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, ok, detail = _criteria[number]
        terminalreporter.write_line(f"criterion {number} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
