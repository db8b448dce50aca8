import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# --- acceptance reporting ----------------------------------------------------

_ACCEPTANCE = pytest.StashKey[dict]()


class _Criterion:
    """Context manager that prints one PASS/FAIL line for an acceptance criterion."""

    def __init__(self, number, summary, store, capsys):
        self.number, self.summary, self.store, self.capsys = number, summary, store, capsys
        self.detail = ""

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        ok = exc_type is None
        detail = self.detail if ok or not exc else f"{self.detail} {exc}".strip()
        line = f"{'PASS' if ok else 'FAIL'} criterion {self.number:2d}: {self.summary}"
        if detail:
            line += f" [{detail.splitlines()[0]}]"
        self.store[self.number] = line
        with self.capsys.disabled():
            print("\n" + line)
        return False


@pytest.fixture
def criterion(request, capsys):
    store = request.config.stash.setdefault(_ACCEPTANCE, {})
    return lambda number, summary: _Criterion(number, summary, store, capsys)


def pytest_terminal_summary(terminalreporter, config):
    store = config.stash.get(_ACCEPTANCE, {})
    if store:
        terminalreporter.section("acceptance criteria")
        for number in sorted(store):
            terminalreporter.write_line(store[number])
