import numpy as np
import pytest

from kirchhoff.field import Field2D, GridSpec, normalize
from kirchhoff.ground_state import reference_ground_state


@pytest.fixture(scope="session")
def reference():
    return reference_ground_state()


@pytest.fixture(scope="session")
def profile(reference):
    return reference[0]


@pytest.fixture(scope="session")
def astar(reference):
    return reference[1].a_star


def gaussian(grid: GridSpec, sigma: float, center=None) -> Field2D:
    """Unit-mass Gaussian exp(-|x - c|²/(2σ²))."""
    c = grid.center if center is None else center
    X, Y = grid.mesh
    vals = np.exp(-((X - c[0]) ** 2 + (Y - c[1]) ** 2) / (2 * sigma * sigma))
    vals[0, :] = vals[-1, :] = vals[:, 0] = vals[:, -1] = 0.0
    return normalize(Field2D(grid, vals))


@pytest.fixture(scope="session")
def two_well():
    from kirchhoff.potential import PotentialSpec, WellSpec

    return PotentialSpec((WellSpec((-1.0, 0.0), 2), WellSpec((1.0, 0.0), 4)))


@pytest.fixture(scope="session")
def two_well_analysis(two_well, profile):
    from kirchhoff.potential import analyze_wells

    return analyze_wells(two_well, profile)


@pytest.fixture(scope="session")
def twin_wells():
    from kirchhoff.potential import PotentialSpec, WellSpec

    return PotentialSpec((WellSpec((-1.0, 0.0), 2), WellSpec((1.0, 0.0), 2)))


@pytest.fixture(scope="session")
def twin_analysis(twin_wells, profile):
    from kirchhoff.potential import analyze_wells

    return analyze_wells(twin_wells, profile)


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
