import numpy as np
import pytest

from fracinv.meshfem import build_uniform_mesh


@pytest.fixture(scope="session")
def mesh8():
    return build_uniform_mesh(8)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def disc_coefficient(mesh, center=(0.5, 0.5), r=1.0 / 3.0, inside=1.0, outside=10.0):
    c = mesh.centroids
    return np.where(np.hypot(c[:, 0] - center[0], c[:, 1] - center[1]) < r, inside, outside)


ACCEPTANCE_LINES: list = []


@pytest.fixture
def report():
    """Record one acceptance line; it is echoed now and in the terminal summary."""

    def record(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
