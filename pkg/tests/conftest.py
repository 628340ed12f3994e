import os

import pytest
from hypothesis import HealthCheck, settings, strategies as st

from chipforge.geometry import Box

settings.register_profile(
    "default", max_examples=200, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.register_profile("ci", max_examples=1000, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


coord = st.floats(-1000, 1000, allow_nan=False, allow_infinity=False)
side = st.floats(0.5, 800, allow_nan=False, allow_infinity=False)


@st.composite
def boxes(draw, xs=coord, ys=coord, ws=side, hs=side):
    return Box(draw(xs), draw(ys), draw(ws), draw(hs))


@pytest.fixture
def tmp_cwd(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path


# Lines recorded by test_acceptance.report(), echoed after the run.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
