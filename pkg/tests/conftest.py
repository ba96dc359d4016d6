import numpy as np
import pytest

from chmereo.histories import ProjectiveFamily
from chmereo.qlin import DenseOperator, FactorSpace, Projector, random_unitary

# factor structures with total dim <= 8
SHAPES = [(2,), (3,), (4,), (2, 2), (2, 3), (3, 2), (2, 4), (2, 2, 2), (5,), (8,)]

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, text): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    n, text = marker.args
    if report.when == "call" or (report.when == "setup" and report.failed):
        _criteria[n] = (text, report.passed)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        text, ok = _criteria[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {text}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_space(shape):
    return FactorSpace(tuple((f"f{i}", d) for i, d in enumerate(shape)))


def random_family(space, rng, name="F"):
    """Rotated computational basis, with basis vectors grouped into projectors
    of random rank."""
    n = space.total_dim
    u = random_unitary(n, rng)
    order = rng.permutation(n)
    k = int(rng.integers(1, n + 1))
    cuts = sorted(rng.choice(np.arange(1, n), size=k - 1, replace=False)) if k > 1 else []
    groups = np.split(order, cuts)
    projectors = []
    for grp in groups:
        vs = u[:, grp]
        projectors.append(Projector(DenseOperator(space, vs @ vs.conj().T)))
    return ProjectiveFamily(space, tuple(projectors), name=name)


def random_times(rng, n):
    gaps = rng.uniform(0.1, 2.0, size=n)
    times = np.cumsum(gaps)
    prepare = float(times[0] - rng.uniform(0.0, 1.0))
    return tuple(float(t) for t in times), prepare
