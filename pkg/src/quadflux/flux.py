"""H(div) flux recovery in the lowest-order virtual element space.

A recovered flux is stored only through its degrees of freedom: on every
sub-edge the normal trace ``c0 + c1 (s - m_e)/h_e`` (s the arc length from the
lower/left endpoint, ``m_e = h_e/2``) and, per leaf, the constant divergence
fixed by the divergence theorem. Everything downstream (projection,
stabilisation, indicators) is computed from these numbers.

Traces attached to a single leaf (e.g. ``beta_K grad u_T|_K . n_e``) are kept
per *incidence*: one entry per (leaf, sub-edge) pair in the order of
``MeshTopology.inc_leaf``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fem import DiscreteSolution, leaf_gradient
from .mesh import MeshTopology
from .quadrature import gauss_1d, rect_points

_GX, _GW = gauss_1d(2)


def gamma_weight(beta_minus, beta_plus):
    """Weight of the minus side in the robust average: sqrt(b+)/(sqrt(b+) + sqrt(b-))."""
    bm = np.asarray(beta_minus, dtype=float)
    bp = np.asarray(beta_plus, dtype=float)
    if np.any(~(bm > 0)) or np.any(~(bp > 0)):
        raise ValueError("diffusion coefficients must be positive")
    out = np.sqrt(bp) / (np.sqrt(bp) + np.sqrt(bm))
    return float(out) if out.ndim == 0 else out


def edge_points(top: MeshTopology, edges):
    """Two Gauss points per sub-edge: (x, y, s) each of shape (len(edges), 2)."""
    edges = np.asarray(edges)
    h = top.se_length[edges][:, None]
    s = h * _GX
    a = top.se_start[edges]
    vert = top.se_vertical[edges][:, None]
    x = np.where(vert, a[:, [0]], a[:, [0]] + s)
    y = np.where(vert, a[:, [1]] + s, a[:, [1]])
    return x, y, s


def coeffs_from_gauss(values, h):
    """(c0, c1) of the linear function with the given values at the 2 Gauss points.

    Computed from the moments against 1 and (s - m)/h, which 2-point Gauss
    integrates exactly for linear data.
    """
    h = np.asarray(h, dtype=float)
    lin = _GX - 0.5
    m0 = h * (values @ _GW)
    m1 = h * (values @ (_GW * lin))
    return m0 / h, 12.0 * m1 / h


def trace_at_gauss(c0, c1):
    return np.asarray(c0)[:, None] + np.asarray(c1)[:, None] * (_GX - 0.5)


def normal_component(top: MeshTopology, edges, vx, vy):
    vert = top.se_vertical[np.asarray(edges)][:, None]
    return np.where(vert, vx, vy)


def leaf_normal_traces(top: MeshTopology, values, scale, edges, leaf_pos):
    """Coefficients of ``scale_K grad u_T|_K . n_e`` on the given (sub-edge, leaf) pairs."""
    x, y, _ = edge_points(top, edges)
    lp = np.broadcast_to(np.asarray(leaf_pos)[:, None], x.shape)
    gx, gy = leaf_gradient(top, values, lp, x, y)
    v = np.asarray(scale)[:, None] * normal_component(top, edges, gx, gy)
    return coeffs_from_gauss(v, top.se_length[np.asarray(edges)])


@dataclass
class RecoveredFlux:
    top: MeshTopology
    c0: np.ndarray  # per sub-edge
    c1: np.ndarray
    gamma: np.ndarray  # per sub-edge, NaN on the boundary
    div: np.ndarray  # per leaf

    def inc_traces(self):
        """Per-incidence (c0, c1) of the single-valued normal trace."""
        e = self.top.inc_edge
        return self.c0[e], self.c1[e]

    def projection(self) -> np.ndarray:
        return project_traces(self.top, *self.inc_traces(), self.div)


def recover_edge_traces(solution: DiscreteSolution, beta: np.ndarray):
    """Weighted average of the one-sided numerical fluxes ``-beta grad u_T . n_e``.

    Interior sub-edges use ``gamma_e`` on the minus side and ``1 - gamma_e`` on
    the plus side; boundary sub-edges take the flux of their only leaf.
    Returns (c0, c1, gamma) per sub-edge.
    """
    top = solution.top
    nE = top.n_subedges
    edges = np.arange(nE)
    mi, pl = top.se_minus, top.se_plus
    has_m, has_p = mi >= 0, pl >= 0
    x, y, _ = edge_points(top, edges)
    vm = np.zeros_like(x)
    vp = np.zeros_like(x)
    for side, has, v in ((mi, has_m, vm), (pl, has_p, vp)):
        k = side[has]
        gx, gy = leaf_gradient(top, solution.values, np.broadcast_to(k[:, None], x[has].shape), x[has], y[has])
        v[has] = -beta[k][:, None] * normal_component(top, edges[has], gx, gy)
    interior = has_m & has_p
    gamma = np.full(nE, np.nan)
    gamma[interior] = gamma_weight(beta[mi[interior]], beta[pl[interior]])
    vals = np.where(has_m[:, None], vm, vp)
    g = gamma[interior][:, None]
    vals[interior] = g * vm[interior] + (1.0 - g) * vp[interior]
    c0, c1 = coeffs_from_gauss(vals, top.se_length)
    return c0, c1, gamma


def element_divergence(top: MeshTopology, c0: np.ndarray) -> np.ndarray:
    """Constant divergence per leaf: (1/|K|) sum_e sign c0_e h_e.

    The linear part of each trace integrates to zero over its sub-edge.
    """
    flux = top.inc_sign * c0[top.inc_edge] * top.se_length[top.inc_edge]
    return np.bincount(top.inc_leaf, weights=flux, minlength=top.n_leaves) / top.area


def recover_flux(solution: DiscreteSolution, beta: np.ndarray) -> RecoveredFlux:
    c0, c1, gamma = recover_edge_traces(solution, beta)
    return RecoveredFlux(solution.top, c0, c1, gamma, element_divergence(solution.top, c0))


def project_traces(top: MeshTopology, ic0, ic1, div=None) -> np.ndarray:
    """Oblique projection onto constants from per-incidence normal traces.

    Tests against ``p = (x - x_K)/h_K`` and ``(y - y_K)/h_K`` with ``x_K`` the
    centroid, so the divergence term ``(div, p)_K`` vanishes and ``div`` is
    accepted only for signature symmetry. Returns (n_leaves, 2).
    """
    e = top.inc_edge
    x, y, _ = edge_points(top, e)
    cx = top.centroid[top.inc_leaf]
    v = trace_at_gauss(ic0, ic1) * top.inc_sign[:, None]
    h = top.se_length[e]
    mx = h * (((x - cx[:, [0]]) * v) @ _GW)
    my = h * (((y - cx[:, [1]]) * v) @ _GW)
    out = np.empty((top.n_leaves, 2))
    out[:, 0] = np.bincount(top.inc_leaf, weights=mx, minlength=top.n_leaves)
    out[:, 1] = np.bincount(top.inc_leaf, weights=my, minlength=top.n_leaves)
    return out / top.area[:, None]


def area_mean(top: MeshTopology, field, order: int = 3) -> np.ndarray:
    """Projection of a polynomial field: its mean over each leaf (3x3 Gauss).

    ``field(x, y, leaf_pos)`` returns the pair of components at the points.
    """
    b = top.bounds
    X, Y, W = rect_points(b[:, 0], b[:, 1], b[:, 2], b[:, 3], order)
    lp = np.broadcast_to(np.arange(top.n_leaves)[:, None], X.shape)
    vx, vy = field(X, Y, lp)
    return np.column_stack([(vx * W).sum(axis=1), (vy * W).sum(axis=1)]) / top.area[:, None]


def scaled_gradient_mean(solution: DiscreteSolution, beta: np.ndarray) -> np.ndarray:
    """Projection of the polynomial field ``beta_K grad u_T`` on every leaf."""
    def field(x, y, lp):
        gx, gy = leaf_gradient(solution.top, solution.values, lp, x, y)
        return beta[lp] * gx, beta[lp] * gy
    return area_mean(solution.top, field)


def stability_seminorm_sq(top: MeshTopology, ic0, ic1) -> np.ndarray:
    """Per-leaf ``sum_e h_e ||v . n_e||_e^2`` from per-incidence traces (2-point Gauss)."""
    e = top.inc_edge
    h = top.se_length[e]
    v = trace_at_gauss(ic0, ic1)
    contrib = h * h * ((v * v) @ _GW)
    return np.bincount(top.inc_leaf, weights=contrib, minlength=top.n_leaves)


def stability_seminorm(top: MeshTopology, ic0, ic1) -> np.ndarray:
    return np.sqrt(stability_seminorm_sq(top, ic0, ic1))


def constant_traces(top: MeshTopology, vec, edges=None):
    """Per-sub-edge (c0, c1) of a constant vector field, or of one constant per listed incidence."""
    vec = np.asarray(vec, dtype=float)
    if edges is None:
        edges = np.arange(top.n_subedges)
    vert = top.se_vertical[edges]
    vec = np.broadcast_to(vec, (len(edges), 2))
    return np.where(vert, vec[:, 0], vec[:, 1]), np.zeros(len(edges))


def polynomial_traces(top: MeshTopology, field, edges):
    """(c0, c1) of ``field . n_e`` on the given sub-edges; ``field`` must be linear along edges."""
    x, y, _ = edge_points(top, edges)
    vx, vy = field(x, y)
    return coeffs_from_gauss(normal_component(top, edges, vx, vy), top.se_length[np.asarray(edges)])


def remainder_traces(top: MeshTopology, ic0, ic1, proj):
    """Per-incidence traces of ``(I - Pi) tau`` given ``Pi tau`` per leaf."""
    e = top.inc_edge
    pn = np.where(top.se_vertical[e], proj[top.inc_leaf, 0], proj[top.inc_leaf, 1])
    return ic0 - pn, ic1


# -- consistency checks --------------------------------------------------------

def trace_mismatch(flux: RecoveredFlux, solution: DiscreteSolution, beta: np.ndarray) -> float:
    """Largest relative disagreement between the stored trace and each leaf's own average.

    Every leaf recomputes the weighted average on each of its interior
    sub-edges from its own flux and its neighbour's, weighting its own side by
    ``sqrt(beta_other)/(sqrt(beta_other) + sqrt(beta_own))``. The result is
    normalised by the magnitude of the two one-sided fluxes.
    """
    top = flux.top
    e = top.inc_edge
    k = top.inc_leaf
    other = np.where(top.inc_sign > 0, top.se_plus[e], top.se_minus[e])
    inner = other >= 0
    e, k, other = e[inner], k[inner], other[inner]
    if len(e) == 0:
        return 0.0
    x, y, _ = edge_points(top, e)
    gx, gy = leaf_gradient(top, solution.values, np.broadcast_to(k[:, None], x.shape), x, y)
    own = -beta[k][:, None] * normal_component(top, e, gx, gy)
    gx, gy = leaf_gradient(top, solution.values, np.broadcast_to(other[:, None], x.shape), x, y)
    opp = -beta[other][:, None] * normal_component(top, e, gx, gy)
    so, sk = np.sqrt(beta[other])[:, None], np.sqrt(beta[k])[:, None]
    w = so / (so + sk)
    local = w * own + (1.0 - w) * opp
    stored = trace_at_gauss(flux.c0[e], flux.c1[e])
    scale = np.maximum(np.abs(own) + np.abs(opp), np.finfo(float).tiny)
    return float(np.max(np.abs(local - stored) / scale))


def divergence_defect(flux: RecoveredFlux) -> float:
    """Largest relative defect of ``|K| div_K = sum_e sign int_e sigma . n_e``.

    The right-hand side is re-integrated with 2-point Gauss on the stored
    traces, independently of the ``c0 h_e`` shortcut used to build ``div``.
    """
    top = flux.top
    e = top.inc_edge
    v = trace_at_gauss(flux.c0[e], flux.c1[e])
    integ = top.inc_sign * top.se_length[e] * (v @ _GW)
    total = np.bincount(top.inc_leaf, weights=integ, minlength=top.n_leaves)
    scale = np.bincount(top.inc_leaf, weights=np.abs(integ), minlength=top.n_leaves)
    defect = np.abs(top.area * flux.div - total)
    rel = np.where(scale > 0, defect / np.where(scale > 0, scale, 1.0), defect)
    return float(np.max(rel, initial=0.0))
