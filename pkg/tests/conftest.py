import time

import numpy as np
import pytest

from quadflux.cli import run_benchmark
from quadflux.fem import DiscreteSolution
from quadflux.mesh import QuadtreeMesh


class TimedRun:
    def __init__(self, name, cap=None):
        t0 = time.perf_counter()
        self.result = run_benchmark(name, cap=cap)
        self.seconds = time.perf_counter() - t0
        self.records = self.result.records


_RUNS = {}


def benchmark_run(name, cap=None):
    """Adaptive run shared across the whole session (each benchmark runs once)."""
    key = (name, cap)
    if key not in _RUNS:
        _RUNS[key] = TimedRun(name, cap)
    return _RUNS[key]


@pytest.fixture(scope="session")
def lshape_run():
    return benchmark_run("lshape")


@pytest.fixture(scope="session")
def kellogg_run():
    return benchmark_run("kellogg")


@pytest.fixture(scope="session")
def wavefront_run():
    return benchmark_run("wavefront")


@pytest.fixture(scope="session")
def wavefront_capped_run():
    return benchmark_run("wavefront", cap=1)


@pytest.fixture(scope="session")
def all_runs(lshape_run, kellogg_run, wavefront_run):
    return {"lshape": lshape_run, "kellogg": kellogg_run, "wavefront": wavefront_run}


def leaf_at(mesh, x, y):
    for c in mesh.leaves():
        x0, y0, x1, y1 = mesh.cell_bounds(c)
        if x0 < x < x1 and y0 < y < y1:
            return c
    raise AssertionError("point not strictly inside a leaf")


def seven_leaf_mesh():
    """2 x 2 mesh of the unit square with the lower-left cell quadsected."""
    m = QuadtreeMesh.unit_square(1)
    m.refine([leaf_at(m, 0.25, 0.25)])
    return m


def cascade_mesh():
    """Seven-leaf mesh with the upper-right child of the refined cell quadsected again."""
    m = seven_leaf_mesh()
    m.refine([leaf_at(m, 0.375, 0.375)])
    return m


def node_id(top, x, y):
    hit = np.flatnonzero((top.node_xy[:, 0] == x) & (top.node_xy[:, 1] == y))
    assert len(hit) == 1
    return int(hit[0])


def random_marks(mesh, rng, rounds, fraction=0.25, cap=None):
    for _ in range(rounds):
        leaves = mesh.leaves()
        k = max(1, int(fraction * len(leaves)))
        mesh.refine(rng.choice(leaves, size=k, replace=False).tolist(), cap=cap)
    return mesh


def state(top, values):
    """A solution-like object carrying only nodal values (no linear system)."""
    return DiscreteSolution(top, np.asarray(values, dtype=float), system=None)


# -- acceptance reporting ----------------------------------------------------------------

ACCEPTANCE = {}


def record_check(criterion, label, ok, detail=""):
    """Register one sub-check of an acceptance criterion and return its outcome."""
    ACCEPTANCE.setdefault(criterion, []).append((label, bool(ok), detail))
    print(f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {label}  {detail}")
    return bool(ok)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for crit in sorted(ACCEPTANCE):
        checks = ACCEPTANCE[crit]
        ok = all(c[1] for c in checks)
        tr.write_line(f"criterion {crit}: {'PASS' if ok else 'FAIL'}")
        for label, passed, detail in checks:
            tr.write_line(f"    [{'ok' if passed else 'FAIL'}] {label}  {detail}")
