from __future__ import annotations

import os

import numpy as np
import pytest

from delaylab.system import DelaySystem, load_system

SYSTEMS = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "systems")

# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


def scalar(a0: float, a1: float, b0: float = 1.0, b1: float = 0.0, n_seg: int = 64, omega=((-1.0,), (1.0,))) -> DelaySystem:
    """x' = a0 x + a1 x(t - 1) + b0 u + b1 u(t - 1)."""
    return DelaySystem((1.0,), ([[a0]], [[a1]]), ([[b0]], [[b1]]), np.array(omega), n_seg)


def random_system(rng: np.random.Generator, n_seg: int) -> DelaySystem:
    """n <= 3, m <= 2, p <= 2 and every ||A_i||, ||B_i|| in [0.2, 2]."""
    n = int(rng.integers(1, 4))
    m = int(rng.integers(1, 3))
    p = int(rng.integers(1, 3))
    delays = (1.0,) if p == 1 else (float(rng.choice([0.25, 0.5, 0.75])), 1.0)

    def mat(r, c):
        M = rng.normal(size=(r, c))
        return M * rng.uniform(0.2, 2.0) / np.linalg.norm(M, 2)

    A = [mat(n, n) for _ in range(p + 1)]
    B = [mat(n, m) for _ in range(p + 1)]
    V = np.array(np.meshgrid(*[[-1.0, 1.0]] * m)).reshape(m, -1).T
    return DelaySystem(delays, A, B, V, n_seg)


@pytest.fixture(scope="session")
def stable() -> DelaySystem:
    return load_system(os.path.join(SYSTEMS, "stable_scalar.json"))


@pytest.fixture(scope="session")
def unstable() -> DelaySystem:
    return load_system(os.path.join(SYSTEMS, "unstable_scalar.json"))


@pytest.fixture(scope="session")
def hayes() -> DelaySystem:
    return load_system(os.path.join(SYSTEMS, "hayes.json"))
