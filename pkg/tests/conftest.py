import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ORACLES = json.loads((Path(__file__).parent / "oracles" / "frozen.json").read_text())


@pytest.fixture
def oracles():
    return ORACLES


def smooth_lagrangian(grid):
    """Analytic smooth state matching tests/oracles/make_oracles.py (not compatible, kernels only)."""
    from twoch.state import LagrangianState

    t = 2 * np.pi * grid.nodes
    z = np.zeros(grid.n)
    return LagrangianState(grid, 0.05 * np.sin(t), 0.3 * np.cos(t) + 0.1 * np.sin(2 * t),
                           1 + 0.1 * np.pi * np.cos(t), z, 0.5 + 0.2 * np.cos(t), z)


# criterion number -> list of (ok, detail); filled by tests/test_acceptance.py
ACCEPTANCE: dict = {}


@pytest.fixture
def acceptance():
    def record(criterion: int, ok: bool, detail: str) -> bool:
        ACCEPTANCE.setdefault(criterion, []).append((bool(ok), detail))
        print(f"criterion {criterion}: {'PASS' if ok else 'FAIL'} ({detail})")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for c in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[c]
        ok = all(p[0] for p in parts)
        detail = "; ".join(p[1] for p in parts)
        terminalreporter.write_line(f"criterion {c:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
