import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from quadflux.benchmarks import get_benchmark
from quadflux.errors import UndefinedEffectivity
from quadflux.estimators import (ElementIndicators, aggregate, compute_indicators, effectivity,
                                 eta_f_hat, eta_res, eta_s_hat, oscillation)
from quadflux.fem import ProblemData, assemble_and_solve
from quadflux.flux import RecoveredFlux, element_divergence, recover_flux
from quadflux.mesh import QuadtreeMesh
from quadflux.verify import cascade_mesh, scaled_effectivities

from conftest import random_marks, state


def unit_leaf():
    return QuadtreeMesh.unit_square(0).topology()


def artificial_flux(top, c0, c1):
    c0 = np.asarray(c0, dtype=float)
    return RecoveredFlux(top, c0, np.asarray(c1, dtype=float), np.full(top.n_subedges, np.nan),
                         element_divergence(top, c0))


def indicators(values):
    v = np.asarray(values, dtype=float)
    z = np.zeros_like(v)
    return ElementIndicators(np.arange(len(v)), v, z, z, z, z)


# -- recovery-based parts ---------------------------------------------------------------

def test_eta_f_of_artificial_constant_state():
    top = unit_leaf()
    flux = artificial_flux(top, np.where(top.se_vertical, 1.0, 0.0), np.zeros(top.n_subedges))
    zero = state(top, np.zeros(top.n_nodes))
    assert eta_f_hat(flux, zero, np.array([1.0]))[0] == pytest.approx(1.0, rel=1e-15)
    assert eta_f_hat(flux, zero, np.array([4.0]))[0] == pytest.approx(0.5, rel=1e-15)
    # a constant combined field is reproduced by the projection
    assert eta_s_hat(flux, zero, np.array([1.0]))[0] == pytest.approx(0.0, abs=1e-15)


def test_eta_s_of_linear_traces():
    top = unit_leaf()
    flux = artificial_flux(top, np.zeros(top.n_subedges), np.ones(top.n_subedges))
    zero = state(top, np.zeros(top.n_nodes))
    assert np.allclose(flux.projection(), 0.0, atol=1e-16)
    assert eta_s_hat(flux, zero, np.array([1.0]))[0] ** 2 == pytest.approx(1.0 / 3.0, rel=1e-14)


def test_constant_combined_field_has_no_stabilisation_part():
    m = cascade_mesh(depth=2, base=2)
    top = m.topology()
    vals = 3.0 * top.node_xy[:, 0] - 2.0 * top.node_xy[:, 1]
    sol = state(top, vals)
    beta = np.ones(top.n_leaves)
    # sigma_T = -grad u_T exactly, plus an arbitrary constant shift
    flux = recover_flux(sol, beta)
    flux.c0 = flux.c0 + np.where(top.se_vertical, 0.4, -1.1)
    flux.div = element_divergence(top, flux.c0)
    assert np.max(eta_s_hat(flux, sol, beta)) <= 1e-13
    assert np.allclose(eta_f_hat(flux, sol, beta), np.sqrt(top.area) * math.hypot(0.4, 1.1), rtol=1e-12)


def test_patch_state_has_zero_indicators():
    p = ProblemData(g=lambda x, y: 2.0 * x - y)
    sol = assemble_and_solve(cascade_mesh(), p)
    ind = compute_indicators(sol, recover_flux(sol, p.beta_on(sol.top)), p)
    assert max(aggregate(ind)) <= 1e-12


# -- residual parts -----------------------------------------------------------------------

def test_residual_of_linear_solution_without_source_is_zero():
    top = cascade_mesh().topology()
    sol = state(top, top.node_xy[:, 0] + 0.5 * top.node_xy[:, 1])
    bulk, jump = eta_res(sol, ProblemData().f, np.ones(top.n_leaves))
    assert np.allclose(bulk, 0.0) and np.allclose(jump, 0.0, atol=1e-28)


def test_bulk_term_uses_diameter():
    top = unit_leaf()
    bulk, jump = eta_res(state(top, np.zeros(4)), ProblemData(f=1.0).f, np.array([1.0]))
    assert bulk[0] == pytest.approx(2.0, rel=1e-14)
    assert jump[0] == 0.0


def test_jump_term_two_leaves():
    top = QuadtreeMesh([(0, 0), (1, 0)]).topology()
    x = top.node_xy[:, 0]
    u = np.where(x <= 1.0, x, 1.0 + 2.0 * (x - 1.0))  # gradients (1, 0) and (2, 0)
    bulk, jump = eta_res(state(top, u), ProblemData().f, np.ones(2))
    assert np.allclose(jump, 0.25, rtol=1e-14)


def test_oscillation_examples():
    top = unit_leaf()
    beta = np.array([1.0])
    assert oscillation(top, ProblemData(f=3.0).f, beta)[0] == pytest.approx(0.0, abs=1e-14)
    fx = lambda x, y: x  # noqa: E731
    assert oscillation(top, fx, beta)[0] == pytest.approx(math.sqrt(2.0) * math.sqrt(1.0 / 12.0), rel=1e-14)
    scaled = oscillation(top, lambda x, y: 2.5 * x, beta)[0]
    assert scaled == pytest.approx(2.5 * oscillation(top, fx, beta)[0], rel=1e-14)


# -- aggregation and effectivity ------------------------------------------------------------

def test_aggregate_examples():
    assert aggregate(indicators([0.0, 0.0])) == (0.0, 0.0)
    assert aggregate(indicators([3.0, 4.0]))[0] == 5.0


@settings(max_examples=50)
@given(st.lists(st.floats(0, 1e6), min_size=1, max_size=60), st.randoms(use_true_random=False))
def test_aggregate_is_order_independent(values, rnd):
    ind = indicators(values)
    perm = list(range(len(values)))
    rnd.shuffle(perm)
    shuffled = ElementIndicators(ind.leaf_ids[perm], ind.eta_f_hat[perm], ind.eta_s_hat[perm],
                                 ind.res_bulk_sq[perm], ind.res_jump_sq[perm], ind.osc[perm])
    assert aggregate(shuffled) == aggregate(ind)
    assert aggregate(ind)[0] == pytest.approx(math.sqrt(math.fsum(np.square(values))), rel=1e-12)


def test_effectivity():
    assert effectivity(0.37, 0.37) == 1.0
    with pytest.raises(UndefinedEffectivity):
        effectivity(1.0, 0.0)


@pytest.mark.parametrize("name", ["kellogg", "wavefront", "lshape"])
@pytest.mark.parametrize("c", [1e-2, 3.0, 1e3])
def test_effectivities_are_scale_invariant(name, c):
    ref = scaled_effectivities(1.0, name)
    got = scaled_effectivities(c, name)
    assert got == pytest.approx(ref, rel=1e-8)


def test_indicator_csv(tmp_path):
    ind = indicators([1.0, 2.0])
    ind.write_csv(tmp_path / "ind.csv")
    lines = (tmp_path / "ind.csv").read_text().splitlines()
    assert lines[0].startswith("leaf,eta_f_hat") and len(lines) == 3


# -- efficiency and reliability probes along the adaptive runs ------------------------------

def _halves(values):
    v = np.asarray(values, dtype=float)
    h = len(v) // 2
    return np.max(v[:h]), np.max(v[h:])


@pytest.mark.parametrize("name", ["lshape", "kellogg", "wavefront"])
def test_local_efficiency_is_mesh_independent(all_runs, name):
    first, second = _halves([r.local_eff_max for r in all_runs[name].records])
    assert np.isfinite(first) and np.isfinite(second)
    assert 0.5 < second / first < 2.0


@pytest.mark.parametrize("name", ["lshape", "kellogg", "wavefront"])
def test_reliability_constant_is_stable(all_runs, name):
    first, second = _halves([r.reliability for r in all_runs[name].records])
    assert 0.5 < second / first < 2.0


def jump_sq_by_simpson(sol, beta):
    """Per-leaf shared jump term, one sub-edge at a time, with Simpson's rule."""
    top = sol.top
    out = np.zeros(top.n_leaves)
    for e in np.flatnonzero(top.se_interior):
        h = top.se_length[e]
        direction = np.array([0.0, 1.0]) if top.se_vertical[e] else np.array([1.0, 0.0])
        axis = 0 if top.se_vertical[e] else 1
        km, kp = top.se_minus[e], top.se_plus[e]
        vals = []
        for t in (0.0, 0.5, 1.0):
            x, y = top.se_start[e] + t * h * direction
            gm = sol.gradient(np.array([km]), np.array([x]), np.array([y]))
            gp = sol.gradient(np.array([kp]), np.array([x]), np.array([y]))
            vals.append((beta[km] * gm[axis][0] - beta[kp] * gp[axis][0]) ** 2)
        integral = h / 6.0 * (vals[0] + 4.0 * vals[1] + vals[2])
        share = 0.5 * h * integral / (beta[km] + beta[kp])
        out[km] += share
        out[kp] += share
    return out


@pytest.mark.parametrize("name", ["kellogg", "lshape"])
def test_jump_term_against_simpson_oracle(name):
    b = get_benchmark(name)
    p = b.problem()
    sol = assemble_and_solve(random_marks(b.seed_mesh(), np.random.default_rng(9), 3), p)
    beta = p.beta_on(sol.top)
    _, jump = eta_res(sol, p.f, beta)
    # absolute floor for leaves whose jumps vanish up to rounding
    assert np.allclose(jump, jump_sq_by_simpson(sol, beta), rtol=1e-12, atol=1e-14 * jump.max())
