import numpy as np
import pytest

from qrsim import engine, synthetic
from qrsim.flow import NS, Flow
from qrsim.lob import Eta, Side

T9 = 9 * 3600 * NS  # 09:00 on day 0


def make_flow(rows, ref=100.5):
    """rows: (ts_s, eta, side, level, size, q_before[, ref])."""
    cols = []
    for r in rows:
        ts, eta, side, level, size, q = r[:6]
        cols.append((T9 + int(round(ts * NS)), int(eta), int(side), level, size, -1, q, r[6] if len(r) > 6 else ref))
    return Flow(*map(np.array, zip(*cols)))


@pytest.fixture(scope="session")
def saqr_truth():
    return synthetic.saqr_ground_truth(K=3)


@pytest.fixture(scope="session")
def small_log(saqr_truth):
    return engine.run(saqr_truth, engine.SimConfig(horizon=1200, seed=3))


@pytest.fixture(scope="session")
def bd_model():
    return synthetic.birth_death_model([3.0, 1.5, 1.5], [0.0, 1.0, 1.2], [0.0, 1.0, 0.8])


ACCEPTANCE: list[str] = []


@pytest.fixture
def report_criterion():
    """Record one pass/fail line per acceptance criterion; printed live and in the session summary."""

    def emit(n: int, ok: bool, detail: str):
        line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE.append(line)
        print(line)
        return ok

    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
