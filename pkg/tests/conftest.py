import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

settings.register_profile(
    "qlandscape", max_examples=100, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("qlandscape")

finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)


@st.composite
def hermitian(draw, scale=5.0):
    re = np.array(draw(st.lists(st.floats(-scale, scale), min_size=9, max_size=9))).reshape(3, 3)
    im = np.array(draw(st.lists(st.floats(-scale, scale), min_size=9, max_size=9))).reshape(3, 3)
    A = re + 1j * im
    return (A + A.conj().T) / 2


@st.composite
def systems(draw):
    from qlandscape.model import ThreeLevelSystem

    h = draw(st.lists(st.floats(-3, 3), min_size=3, max_size=3))
    mod = draw(st.lists(st.floats(0.2, 2.0), min_size=2, max_size=2))
    ph = draw(st.lists(st.floats(-np.pi, np.pi), min_size=2, max_size=2))
    return ThreeLevelSystem(h[0], h[1], h[2], mod[0] * np.exp(1j * ph[0]), mod[1] * np.exp(1j * ph[1]))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# acceptance bookkeeping: criterion -> list of (label, ok, detail)
ACCEPTANCE: dict = {}


def record(criterion: int, label: str, ok: bool, detail: str = ""):
    ACCEPTANCE.setdefault(criterion, []).append((label, bool(ok), detail))
    print(f"criterion {criterion} [{label}]: {'PASS' if ok else 'FAIL'} {detail}")
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for c in range(1, 9):
        parts = ACCEPTANCE.get(c)
        if not parts:
            tr.write_line(f"criterion {c}: NOT RUN")
            continue
        ok = all(p[1] for p in parts)
        tr.write_line(f"criterion {c}: {'PASS' if ok else 'FAIL'}")
        for label, pok, detail in parts:
            tr.write_line(f"    {'ok  ' if pok else 'FAIL'} {label}: {detail}")
