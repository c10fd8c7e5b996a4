import numpy as np
import pytest

from mixprec.context import Context
from mixprec.sem_core import setup_box_mesh


@pytest.fixture
def ctx():
    return Context()


@pytest.fixture(scope="session")
def mesh_222_8():
    return setup_box_mesh(2, 2, 2, 8)


@pytest.fixture(scope="session")
def mesh_111_3():
    return setup_box_mesh(1, 1, 1, 3)


def continuous_field(mesh, rng, masked=True):
    """Random field with identical values on coincident copies."""
    u = rng.standard_normal(mesh.n_global)[mesh.gs_map]
    return u * mesh.mask if masked else u


def assembled_matrix(mesh, ctx=None):
    """Dense global stiffness matrix on interior dofs, one ax application per column."""
    from mixprec.sem_core import ax

    ctx = ctx or Context()
    interior = np.unique(mesh.gs_map[mesh.mask > 0])
    cols = []
    for g in interior:
        e = (mesh.gs_map == g).astype(np.float64)
        w = ax(e, mesh, ctx)
        # read one copy per global dof
        first = np.full(mesh.n_global, -1)
        first[mesh.gs_map[::-1]] = np.arange(mesh.n)[::-1]
        cols.append(w[first[interior]])
    return np.column_stack(cols), interior


# -- acceptance reporting ---------------------------------------------------------

_CRITERIA = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "setup":
        # module fixtures do the heavy lifting; charge them to the criterion
        item._setup_seconds = report.duration
        if report.outcome == "passed":
            return
    elif report.when != "call":
        return
    number, title = marker.args
    if hasattr(report, "wasxfail"):
        status = "FAIL (expected, known limitation)" if report.skipped else "PASS (unexpected; xfail is strict)"
    else:
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
    duration = report.duration + (getattr(item, "_setup_seconds", 0.0) if report.when == "call" else 0.0)
    _CRITERIA.append((number, title, status, duration))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, status, duration in sorted(_CRITERIA, key=lambda c: str(c[0]).zfill(4)):
        terminalreporter.write_line(f"criterion {str(number) + ':':<4s} {status:<34s} {duration:7.1f} s  {title}")
