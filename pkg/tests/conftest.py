import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from formpair.geometry import BoxClass, TextBox

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

PRE, INP = BoxClass.PREPRINTED, BoxClass.INPUT

# criterion number -> summary line, filled by tests/test_acceptance.py
ACCEPTANCE: dict[int, str] = {}


def box(id_, rect, cls=PRE, **kw) -> TextBox:
    return TextBox(id_, tuple(float(v) for v in rect), cls, **kw)


def random_rect(rng: np.random.Generator, span: float = 100.0) -> tuple[float, float, float, float]:
    x, y = rng.uniform(0, span, 2)
    w, h = rng.uniform(1, span / 2, 2)
    return (x, y, x + w, y + h)


@pytest.fixture
def record_acceptance():
    def record(number: int, passed: bool, detail: str) -> None:
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}"
        ACCEPTANCE[number] = line
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
