import numpy as np
import pytest

ACCEPTANCE = {}


def record_criterion(number: int, label: str, passed: bool, detail: str) -> None:
    """Store one acceptance verdict; printed in the terminal summary."""
    ACCEPTANCE[number] = (label, bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        label, passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  criterion {number:>2}: {label}: {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def textured():
    """64x64 deterministic test image with edges, gradients and texture."""
    y, x = np.mgrid[0:64, 0:64].astype(float)
    img = 100 + 60 * np.sin(x / 5.0) * np.cos(y / 7.0) + 0.8 * x
    img[20:40, 10:30] += 50
    return np.clip(img, 0, 255)
