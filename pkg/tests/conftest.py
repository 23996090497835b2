import numpy as np
import pytest

from fraclab.grid import build_box_basis, build_masked_basis


@pytest.fixture(scope="session")
def interval_basis():
    return build_box_basis([(-1.0, 1.0)], 2 / 64)


@pytest.fixture(scope="session")
def square_basis():
    return build_box_basis([(-1.0, 1.0)] * 2, 2 / 16)


@pytest.fixture(scope="session")
def lshape_basis():
    mask = np.ones((15, 15), dtype=bool)
    mask[8:, 8:] = False
    return build_masked_basis(mask, 1 / 8)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE = {}


@pytest.fixture(scope="session")
def acceptance():
    """record(number, ok, detail): one PASS/FAIL line per acceptance criterion."""

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'} criterion {number:2d}: {detail}"
        _ACCEPTANCE[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[k])
