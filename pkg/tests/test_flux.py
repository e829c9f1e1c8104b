import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from quadflux.benchmarks import get_benchmark
from quadflux.fem import ProblemData, assemble_and_solve
from quadflux.flux import (area_mean, constant_traces, divergence_defect,
                           element_divergence, gamma_weight, polynomial_traces, project_traces,
                           recover_edge_traces, recover_flux, stability_seminorm,
                           stability_seminorm_sq, trace_mismatch)
from quadflux.io import write_flux_csv
from quadflux.mesh import QuadtreeMesh

from conftest import random_marks, state


# -- gamma ---------------------------------------------------------------------------

def test_gamma_examples():
    assert gamma_weight(1.0, 1.0) == 0.5
    assert gamma_weight(1.0, 4.0) == pytest.approx(2.0 / 3.0, rel=1e-15)
    R = 161.4476387975881
    assert gamma_weight(1.0, R) + gamma_weight(R, 1.0) == pytest.approx(1.0, rel=1e-15)


@pytest.mark.parametrize("bad", [0.0, -1.0, float("nan")])
def test_gamma_rejects_non_positive(bad):
    with pytest.raises(ValueError):
        gamma_weight(bad, 1.0)
    with pytest.raises(ValueError):
        gamma_weight(1.0, bad)


@given(st.floats(1e-6, 1e6), st.floats(1e-6, 1e6))
def test_gamma_properties(a, b):
    g = gamma_weight(a, b)
    assert 0.0 < g < 1.0
    assert g + gamma_weight(b, a) == pytest.approx(1.0, rel=1e-14)


# -- trace recovery ----------------------------------------------------------------------

def strip_mesh():
    """Two unit leaves side by side on (0, 2) x (0, 1)."""
    return QuadtreeMesh([(0, 0), (1, 0)])


def test_linear_solution_traces():
    m = random_marks(QuadtreeMesh.unit_square(1), np.random.default_rng(1), 3)
    top = m.topology()
    sol = state(top, top.node_xy[:, 0])
    c0, c1, _ = recover_edge_traces(sol, np.ones(top.n_leaves))
    assert np.allclose(c0[top.se_vertical], -1.0, atol=1e-14)
    assert np.allclose(c0[~top.se_vertical], 0.0, atol=1e-14)
    assert np.allclose(c1, 0.0, atol=1e-13)


def test_unit_coefficient_gives_plain_average():
    m = random_marks(QuadtreeMesh.unit_square(1), np.random.default_rng(2), 3)
    top = m.topology()
    sol = state(top, np.random.default_rng(0).normal(size=top.n_nodes))
    beta = np.ones(top.n_leaves)
    c0, c1, gamma = recover_edge_traces(sol, beta)
    inner = top.se_interior
    assert np.all(gamma[inner] == 0.5)
    assert np.all(np.isnan(gamma[~inner]))
    # plain average of the one-sided fluxes at the sub-edge midpoints
    mid = top.se_start + 0.5 * top.se_length[:, None] * np.where(top.se_vertical[:, None], [0, 1], [1, 0])
    e = np.flatnonzero(inner)
    gm = sol.gradient(top.se_minus[e], mid[e, 0], mid[e, 1])
    gp = sol.gradient(top.se_plus[e], mid[e, 0], mid[e, 1])
    nm = np.where(top.se_vertical[e], gm[0], gm[1])
    np_ = np.where(top.se_vertical[e], gp[0], gp[1])
    assert np.allclose(c0[e], -0.5 * (nm + np_), atol=1e-12)


def test_interface_weighting_example():
    top = strip_mesh().topology()
    sol = state(top, top.node_xy[:, 0])
    beta = np.array([1.0, 4.0])  # leaves are ordered left, right
    c0, c1, gamma = recover_edge_traces(sol, beta)
    e = int(np.flatnonzero(top.se_interior)[0])
    assert gamma[e] == pytest.approx(2.0 / 3.0)
    assert c0[e] == pytest.approx(-2.0, rel=1e-14)


# -- divergence ------------------------------------------------------------------------

def unit_leaf():
    return QuadtreeMesh.unit_square(0).topology()


def test_divergence_of_constant_is_zero():
    top = random_marks(QuadtreeMesh.unit_square(1), np.random.default_rng(4), 3).topology()
    c0, _ = constant_traces(top, [0.3, -1.7])
    assert np.allclose(element_divergence(top, c0), 0.0, atol=1e-14)


def test_divergence_of_position_field():
    top = unit_leaf()
    c0, _ = polynomial_traces(top, lambda x, y: (x, y), np.arange(top.n_subedges))
    assert element_divergence(top, c0)[0] == pytest.approx(2.0, rel=1e-15)


def test_divergence_of_shear_field():
    top = random_marks(QuadtreeMesh.unit_square(1), np.random.default_rng(5), 2).topology()
    c0, _ = polynomial_traces(top, lambda x, y: (y, 0 * x), np.arange(top.n_subedges))
    assert np.allclose(element_divergence(top, c0), 0.0, atol=1e-13)


# -- projection --------------------------------------------------------------------------

def test_constant_field_is_reproduced():
    top = random_marks(QuadtreeMesh.unit_square(1), np.random.default_rng(6), 3).topology()
    ic0, ic1 = constant_traces(top, [2.5, -0.75], top.inc_edge)
    assert np.allclose(project_traces(top, ic0, ic1), [2.5, -0.75], rtol=1e-13)


def test_projection_of_gradient_of_xy():
    top = unit_leaf()

    def tau(x, y, *_):
        return y, x

    ic0, ic1 = polynomial_traces(top, tau, top.inc_edge)
    dof = project_traces(top, ic0, ic1)[0]
    poly = area_mean(top, tau)[0]
    assert np.allclose(dof, [0.5, 0.5], rtol=1e-14)
    assert np.allclose(poly, [0.5, 0.5], rtol=1e-14)
    # idempotency
    jc0, jc1 = constant_traces(top, dof, top.inc_edge)
    assert np.allclose(project_traces(top, jc0, jc1)[0], dof, rtol=1e-14)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.lists(st.floats(-5, 5), min_size=6, max_size=6))
def test_projection_paths_agree_on_linear_fields(seed, a):
    top = random_marks(QuadtreeMesh.unit_square(1), np.random.default_rng(seed), 3).topology()

    def tau(x, y, *_):
        return a[0] + a[1] * x + a[2] * y, a[3] + a[4] * x + a[5] * y

    ic0, ic1 = polynomial_traces(top, tau, top.inc_edge)
    assert np.allclose(project_traces(top, ic0, ic1), area_mean(top, tau), rtol=1e-12, atol=1e-12)


# -- stabilisation ---------------------------------------------------------------------------

def test_stability_examples():
    top = unit_leaf()
    zero = np.zeros(len(top.inc_edge))
    assert stability_seminorm(top, zero, zero)[0] == 0.0
    ic0, ic1 = constant_traces(top, [1.0, 0.0], top.inc_edge)
    assert stability_seminorm_sq(top, ic0, ic1)[0] == pytest.approx(2.0, rel=1e-15)


def test_stability_scales_with_element_size():
    coarse = unit_leaf()
    fine = QuadtreeMesh.unit_square(1).topology()
    a = stability_seminorm_sq(coarse, *constant_traces(coarse, [0.6, 0.8], coarse.inc_edge))[0]
    b = stability_seminorm_sq(fine, *constant_traces(fine, [0.6, 0.8], fine.inc_edge))
    assert np.allclose(b / a, 0.25, rtol=1e-14)


# -- recovered flux properties ----------------------------------------------------------------

def test_linear_solution_is_recovered_exactly():
    p = ProblemData(g=lambda x, y: x)
    m = random_marks(QuadtreeMesh.unit_square(1), np.random.default_rng(8), 4)
    sol = assemble_and_solve(m, p)
    flux = recover_flux(sol, p.beta_on(sol.top))
    assert np.allclose(flux.div, 0.0, atol=1e-12)
    assert np.allclose(flux.projection(), [-1.0, 0.0], atol=1e-12)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.integers(1, 4), st.sampled_from(["kellogg", "wavefront", "lshape"]))
def test_conformity_and_compatibility(seed, rounds, name):
    b = get_benchmark(name)
    m = random_marks(b.seed_mesh(), np.random.default_rng(seed), rounds, fraction=0.15)
    p = b.problem()
    sol = assemble_and_solve(m, p)
    beta = p.beta_on(sol.top)
    flux = recover_flux(sol, beta)
    assert trace_mismatch(flux, sol, beta) <= 1e-12
    assert divergence_defect(flux) <= 1e-12
    g = flux.gamma[sol.top.se_interior]
    assert np.all((g > 0) & (g < 1))


def test_debug_dump(tmp_path):
    p = get_benchmark("manufactured").problem()
    sol = assemble_and_solve(QuadtreeMesh.unit_square(2), p)
    flux = recover_flux(sol, p.beta_on(sol.top))
    edges, leaves = write_flux_csv(tmp_path / "flux", flux)
    rows = list(csv.DictReader(open(edges)))
    assert len(rows) == sol.top.n_subedges
    assert float(rows[3]["c0"]) == flux.c0[3]
    rows = list(csv.DictReader(open(leaves)))
    assert [int(r["leaf"]) for r in rows] == sol.top.leaf_ids.tolist()
    assert float(rows[2]["div"]) == flux.div[2]

