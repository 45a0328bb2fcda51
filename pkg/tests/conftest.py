import numpy as np
import pytest

from edgevfm.cost_model import calibrate, reference_anchors
from edgevfm.fixtures import data_path
from edgevfm.search_space import default_space, representative_subnets
from edgevfm.selector import load_profile

# exact counts from the layer-by-layer / torch oracles in oracles.py
GOLDEN_COUNTS = {
    "Min": (6_842_784, 1_214_027_136),
    "Tiny": (15_232_176, 2_679_953_472),
    "Small": (26_933_568, 4_718_488_320),
    "Base": (34_161_216, 6_127_881_984),
    "Large": (48_616_512, 8_946_669_312),
}


@pytest.fixture(scope="session")
def space():
    return default_space()


@pytest.fixture(scope="session")
def reps():
    return representative_subnets()


@pytest.fixture(scope="session")
def calibration(space):
    return calibrate(reference_anchors(), space)


@pytest.fixture(scope="session")
def profile12():
    return load_profile(data_path("profile_12scenes.csv"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_CRITERIA: dict[int, tuple[str, bool]] = {}


@pytest.fixture
def criterion(request):
    """Record one acceptance line; the test fails through its own asserts."""

    def record(number: int, title: str, checks: dict[str, bool]):
        ok = all(checks.values())
        _CRITERIA[number] = (title, ok)
        status = "PASS" if ok else "FAIL"
        failed = [k for k, v in checks.items() if not v]
        line = f"criterion {number:>2} {status}: {title}" + (f" (failed: {', '.join(failed)})" if failed else "")
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, ok = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:>2} {'PASS' if ok else 'FAIL'}: {title}")
