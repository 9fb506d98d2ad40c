import numpy as np
import pytest
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

# acceptance results collected here and printed once at the end of the session
ACCEPTANCE_LINES: list[str] = []

finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)


@st.composite
def hermitian(draw, n=4):
    re = draw(arrays(np.float64, (n, n), elements=finite))
    im = draw(arrays(np.float64, (n, n), elements=finite))
    a = re + 1j * im
    return (a + a.conj().T) / 2


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
