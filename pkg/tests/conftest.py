import math

import numpy as np
import pytest
from scipy.stats import norm

ACCEPTANCE_LINES: list[str] = []


def bs_call(s0: float, k: float, T: float, vol: float) -> float:
    """Zero-rate Black-Scholes call."""
    if vol == 0:
        return max(s0 - k, 0.0)
    d1 = (math.log(s0 / k) + 0.5 * vol * vol * T) / (vol * math.sqrt(T))
    d2 = d1 - vol * math.sqrt(T)
    return float(s0 * norm.cdf(d1) - k * norm.cdf(d2))


@pytest.fixture
def record():
    def _record(num: int, name: str, ok: bool, detail: str, seconds: float):
        status = "PASS" if ok else "FAIL"
        ACCEPTANCE_LINES.append(f"[{status}] criterion {num:>2} {name}: {detail} ({seconds:.2f} s)")
        print(ACCEPTANCE_LINES[-1])
        return ok
    return _record


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
