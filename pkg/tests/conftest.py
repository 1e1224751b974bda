import numpy as np
import pytest
from hypothesis import settings

import snnforge.snn as _snn

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

_CRITERIA: dict[str, tuple[bool, str]] = {}


class GridMonitor:
    """Checks every phi produced by the simulator lies on the theta/T grid."""

    def __init__(self, tol=1e-5):
        self.tol = tol
        self.calls = 0
        self.elements = 0
        self.worst = 0.0

    def observe(self, phi, theta, T):
        k = np.asarray(phi, dtype=np.float64) * T / float(np.float32(theta))
        off = np.abs(k - np.round(k))
        below = np.maximum(-k, 0)
        above = np.maximum(k - T, 0)
        worst = float(max(off.max(initial=0), below.max(initial=0), above.max(initial=0)))
        self.calls += 1
        self.elements += k.size
        self.worst = max(self.worst, worst)

    @property
    def ok(self):
        return self.worst <= self.tol


GRID = GridMonitor()
_original_phi = _snn.phi_from_counts


def _monitored_phi(count, theta, T):
    phi = _original_phi(count, theta, T)
    GRID.observe(phi, theta, T)
    return phi


_snn.phi_from_counts = _monitored_phi


def pytest_collection_modifyitems(items):
    # acceptance runs last so the grid monitor has seen every simulation
    items.sort(key=lambda it: it.module.__name__.endswith("test_acceptance"))


@pytest.fixture
def record_criterion():
    """Store one acceptance verdict; printed in the terminal summary."""

    def record(key: str, passed: bool, detail: str = ""):
        _CRITERIA[key] = (bool(passed), detail)
        return passed

    return record


@pytest.fixture
def grid_monitor():
    return GRID


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_CRITERIA, key=lambda k: int(k.split(".")[0])):
        passed, detail = _CRITERIA[key]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {key}  {detail}")
    terminalreporter.write_line(
        f"grid monitor over whole session: {GRID.calls} simulations, {GRID.elements} phi values, "
        f"worst deviation {GRID.worst:.2e} ({'ok' if GRID.ok else 'VIOLATED'})"
    )
