import hypothesis
import numpy as np
import pytest

from kawasaki_stefan.lattice import Torus

hypothesis.settings.register_profile("default", max_examples=40, deadline=None)
hypothesis.settings.register_profile("fast", max_examples=5, deadline=None)
hypothesis.settings.register_profile("thorough", max_examples=400, deadline=None)
hypothesis.settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def ring8():
    return Torus(1, 8)


def smooth_open_densities(N, rng, lo=0.1, hi=0.85):
    """Two smooth fields on a ring, strictly inside (0, 1)."""
    x = np.arange(N) / N
    out = []
    for _ in range(2):
        a, b = rng.uniform(-1, 1, size=2)
        g = a * np.sin(2 * np.pi * x) + b * np.cos(2 * np.pi * x)
        g = (g - g.min()) / max(np.ptp(g), 1e-12)
        out.append(lo + (hi - lo) * g)
    return out


_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line per acceptance criterion; returns the verdict."""

    def record(number: int, title: str, ok: bool, detail: str = "") -> bool:
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d}: {title}" + (f" | {detail}" if detail else "")
        _ACCEPTANCE[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for n in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[n])
