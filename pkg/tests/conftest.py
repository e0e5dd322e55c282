import numpy as np
import pytest

from orbitdet import _backend


@pytest.fixture(params=_backend.available())
def backend(request, monkeypatch):
    """Run the test once per importable kernel backend."""
    impl = _backend.load(request.param)
    monkeypatch.setattr(_backend, "impl", impl)
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE = []


@pytest.fixture
def criterion(request):
    """Record one acceptance line: call with (ok, detail) before asserting."""
    def record(ok, detail=""):
        ACCEPTANCE.append((request.node.name, bool(ok), detail))
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
