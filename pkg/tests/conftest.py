"""Shared fixtures; acceptance criteria report one PASS/FAIL line each."""

from __future__ import annotations

import contextlib
from dataclasses import dataclass

import pytest

from segadapt.config import scenario
from segadapt.runtime import run_scenario

ACCEPTANCE: list[tuple[int, bool, str]] = []


@dataclass
class _Check:
    number: int
    title: str
    detail: str = ""


@pytest.fixture
def criterion():
    """``with criterion(3, "title") as c: ...`` records PASS, or FAIL on any exception."""

    @contextlib.contextmanager
    def check(number: int, title: str):
        c = _Check(number, title)
        try:
            yield c
        except BaseException as exc:
            msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
            ACCEPTANCE.append((number, False, f"{title}: {c.detail} [{msg}]"))
            raise
        ACCEPTANCE.append((number, True, f"{title}: {c.detail}"))

    return check


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, ok, text in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {text}")


@pytest.fixture(scope="session")
def run():
    """Memoised scenario runner: identical overrides reuse one simulation."""
    cache = {}

    def _run(**over):
        key = repr(sorted(over.items()))
        if key not in cache:
            cache[key] = run_scenario(scenario(**over))
        return cache[key]

    return _run


def inject(*pairs):
    return [{"time": t, "uncertainty": u} for u, t in pairs]


def script(*steps):
    out = []
    for step in steps:
        t, target, action = step[:3]
        item = {"time_s": t, "target": target, "action": action}
        if len(step) > 3:
            item["args"] = step[3]
        out.append(item)
    return out


@pytest.fixture(scope="session")
def full_sweep(tmp_path_factory):
    """The default 24 x 3 sweep plus reference rows, timed, with logs on disk."""
    import time

    from segadapt.cli import run_sweep

    out = tmp_path_factory.mktemp("sweep")
    t0 = time.perf_counter()
    text, failures = run_sweep(3, out)
    return out, text, failures, time.perf_counter() - t0
