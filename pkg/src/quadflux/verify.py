"""Numerical property checks run by ``quadflux verify``.

Each check returns a :class:`CheckResult`; :func:`run_all` collects them.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass

import numpy as np

from .afem import dorfler_mark
from .benchmarks import get_benchmark
from .estimators import aggregate, compute_indicators, effectivity
from .fem import ProblemData, assemble_and_solve, energy_error
from .flux import (constant_traces, divergence_defect, polynomial_traces, project_traces,
                   area_mean, recover_flux, remainder_traces, stability_seminorm_sq, trace_mismatch)
from .mesh import MeshTopology, QuadtreeMesh
from .quadrature import rect_points


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    limit: str
    seconds: float = 0.0

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return f"{flag}  {self.name:<34s} value={self.value:.3e}  limit {self.limit}  ({self.seconds:.2f}s)"


def leaf_at(mesh: QuadtreeMesh, x: float, y: float) -> int:
    """Id of the leaf whose closed box contains (x, y); the lowest id wins on ties."""
    for c in mesh.leaves():
        x0, y0, x1, y1 = mesh.cell_bounds(c)
        if x0 <= x <= x1 and y0 <= y <= y1:
            return c
    raise ValueError(f"({x}, {y}) is outside the domain")


def cascade_mesh(depth: int = 3, base: int = 3) -> QuadtreeMesh:
    """Uniform mesh with a corner cascade towards (1/2, 1/2).

    The leaf just above-right of the centre is quadsected ``depth`` times, so
    its coarse left neighbour ends up with ``depth`` hanging nodes on one side.
    """
    mesh = QuadtreeMesh.unit_square(base)
    eps = 2.0 ** -(base + depth + 3)
    for _ in range(depth):
        mesh.refine([leaf_at(mesh, 0.5 + eps, 0.5 + eps)])
    return mesh


def random_mesh(rng: np.random.Generator, rounds: int = 5, fraction: float = 0.2,
                cap: int | None = None) -> QuadtreeMesh:
    mesh = QuadtreeMesh.unit_square(2)
    for _ in range(rounds):
        leaves = mesh.leaves()
        k = max(1, int(fraction * len(leaves)))
        mesh.refine(rng.choice(leaves, size=k, replace=False).tolist(), cap=cap)
    return mesh


def _timed(fn):
    def wrapper(*a, **kw):
        t0 = time.perf_counter()
        res = fn(*a, **kw)
        res.seconds = time.perf_counter() - t0
        return res
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def _linear_problem(which: str) -> ProblemData:
    if which == "x":
        u = lambda x, y: np.asarray(x, dtype=float) + 0.0 * y  # noqa: E731
        grad = lambda x, y: (np.ones_like(x, dtype=float), np.zeros_like(x, dtype=float))  # noqa: E731
    else:
        u = lambda x, y: np.asarray(y, dtype=float) + 0.0 * x  # noqa: E731
        grad = lambda x, y: (np.zeros_like(x, dtype=float), np.ones_like(x, dtype=float))  # noqa: E731
    return ProblemData(f=0.0, beta=1.0, g=u, exact_u=u, exact_grad=grad, name=f"patch-{which}")


def patch_test(which: str, mesh: QuadtreeMesh | None = None) -> dict:
    """Energy error and both estimators for a globally linear solution."""
    mesh = cascade_mesh() if mesh is None else mesh
    p = _linear_problem(which)
    sol = assemble_and_solve(mesh, p)
    beta = p.beta_on(sol.top)
    flux = recover_flux(sol, beta)
    eta_hat, eta_res = aggregate(compute_indicators(sol, flux, p))
    return {"energy_error": energy_error(sol, p), "eta_hat": eta_hat, "eta_res": eta_res,
            "n_leaves": sol.top.n_leaves, "irregularity": sol.top.irregularity()}


@_timed
def check_patch(tol: float = 1e-9) -> CheckResult:
    worst = 0.0
    for which in ("x", "y"):
        r = patch_test(which)
        worst = max(worst, r["energy_error"], r["eta_hat"], r["eta_res"])
    return CheckResult("patch test (u = x, u = y)", worst <= tol, worst, f"<= {tol:g}")


@_timed
def check_flux_identities(tol: float = 1e-12) -> CheckResult:
    """Trace single-valuedness and the divergence identity on an irregular mesh."""
    rng = np.random.default_rng(7)
    mesh = random_mesh(rng)
    bench = get_benchmark("kellogg")
    worst = 0.0
    for p in (get_benchmark("manufactured").problem(), bench.problem()):
        m = mesh if p.name == "manufactured" else bench.seed_mesh().uniform_refine(1)
        sol = assemble_and_solve(m, p)
        beta = p.beta_on(sol.top)
        flux = recover_flux(sol, beta)
        worst = max(worst, trace_mismatch(flux, sol, beta), divergence_defect(flux))
    return CheckResult("flux conformity and divergence", worst <= tol, worst, f"<= {tol:g}")


def _rel(a, b):
    return float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(b))))


@_timed
def check_projection(n_leaves: int = 100, tol: float = 1e-12, seed: int = 11) -> CheckResult:
    """Constant reproduction, idempotency and agreement of both projection paths."""
    rng = np.random.default_rng(seed)
    mesh = random_mesh(rng, rounds=6)
    top = mesh.topology()
    pick = rng.choice(top.n_leaves, size=min(n_leaves, top.n_leaves), replace=False)
    e = top.inc_edge
    worst = 0.0
    # constants
    c = rng.normal(size=(top.n_leaves, 2))
    ic0, ic1 = constant_traces(top, c[top.inc_leaf], e)
    worst = max(worst, _rel(project_traces(top, ic0, ic1)[pick], c[pick]))
    # idempotency on random DoFs
    c0, c1 = rng.normal(size=top.n_subedges), rng.normal(size=top.n_subedges)
    once = project_traces(top, c0[e], c1[e])
    ic0, ic1 = constant_traces(top, once[top.inc_leaf], e)
    worst = max(worst, _rel(project_traces(top, ic0, ic1)[pick], once[pick]))
    # DoF path against the area mean for a linear field
    a = rng.normal(size=6)

    def field(x, y, *_):
        return a[0] + a[1] * x + a[2] * y, a[3] + a[4] * x + a[5] * y

    ic0, ic1 = polynomial_traces(top, field, e)
    worst = max(worst, _rel(project_traces(top, ic0, ic1)[pick], area_mean(top, field)[pick]))
    return CheckResult("projection on random leaves", worst <= tol, worst, f"<= {tol:g}")


def similar_leaf_mesh(level: int) -> tuple[MeshTopology, int]:
    """Mesh at scale 2^-(level+1) whose lower-left leaf has hanging nodes on its E and N sides."""
    mesh = QuadtreeMesh.unit_square(level + 1)
    h = 2.0 ** -(level + 1)
    k = leaf_at(mesh, 0.5 * h, 0.5 * h)
    mesh.refine([leaf_at(mesh, 1.5 * h, 0.5 * h), leaf_at(mesh, 0.5 * h, 1.5 * h)])
    top = mesh.topology()
    return top, top.leaf_pos[k]


def gradient_family_forms(top: MeshTopology, leaf: int):
    """Gram matrices on one leaf for the gradients of quadratics modulo constants.

    Returns (mass, stabilised, divergence) 5x5 matrices: the L2 inner product,
    ``|K| Pi.Pi + S_K((I - Pi) ., (I - Pi) .)`` and ``|K| div.div``.
    """
    cx, cy = top.centroid[leaf]
    hK = top.diameter[leaf]
    basis = [
        (lambda x, y: (np.ones_like(x), np.zeros_like(x)), 0.0),
        (lambda x, y: (np.zeros_like(x), np.ones_like(x)), 0.0),
        (lambda x, y: (2 * (x - cx) / hK, np.zeros_like(x)), 2.0 / hK),
        (lambda x, y: ((y - cy) / hK, (x - cx) / hK), 0.0),
        (lambda x, y: (np.zeros_like(x), 2 * (y - cy) / hK), 2.0 / hK),
    ]
    b = top.bounds[leaf]
    X, Y, W = rect_points([b[0]], [b[1]], [b[2]], [b[3]], 3)
    vals = [f(X[0], Y[0]) for f, _ in basis]
    n = len(basis)
    mass = np.array([[np.sum((vals[i][0] * vals[j][0] + vals[i][1] * vals[j][1]) * W[0])
                      for j in range(n)] for i in range(n)])
    area = top.area[leaf]
    div = np.array([d for _, d in basis])
    divergence = area * np.outer(div, div)
    projs, rems = [], []
    for f, _ in basis:
        ic0, ic1 = polynomial_traces(top, f, top.inc_edge)
        proj = project_traces(top, ic0, ic1)
        r0, r1 = remainder_traces(top, ic0, ic1, proj)
        projs.append(proj[leaf])
        rems.append((r0, r1))
    stab = np.zeros((n, n))
    for i, j in itertools.product(range(n), repeat=2):
        # polarisation of the quadratic seminorm
        s_plus = stability_seminorm_sq(top, rems[i][0] + rems[j][0], rems[i][1] + rems[j][1])[leaf]
        s_minus = stability_seminorm_sq(top, rems[i][0] - rems[j][0], rems[i][1] - rems[j][1])[leaf]
        stab[i, j] = 0.25 * (s_plus - s_minus)
    proj_gram = area * np.array([[projs[i] @ projs[j] for j in range(n)] for i in range(n)])
    return mass, proj_gram + stab, divergence


def _gen_eigs(B, M):
    from scipy.linalg import eigh
    return eigh(B, M, eigvals_only=True)


def norm_equivalence_bounds(levels=(0, 1, 2)):
    """Per level: (min, max) of the stabilised/L2 norm ratio and the inverse-estimate constant."""
    out = []
    for lv in levels:
        top, k = similar_leaf_mesh(lv)
        M, B, D = gradient_family_forms(top, k)
        lam = _gen_eigs(B, M)
        inv = _gen_eigs(D, M)
        c_inv = math.sqrt(max(inv.max(), 0.0)) * top.diameter[k]
        out.append((math.sqrt(max(lam.min(), 0.0)), math.sqrt(lam.max()), c_inv))
    return out


@_timed
def check_norm_equivalence(lo: float = 1 / 20, hi: float = 20.0) -> CheckResult:
    b = norm_equivalence_bounds()
    worst_lo = min(r[0] for r in b)
    worst_hi = max(r[1] for r in b)
    ok = worst_lo >= lo and worst_hi <= hi
    # reported as the larger of max ratio and 1/min ratio
    spread = max(worst_hi, 1.0 / worst_lo) if worst_lo > 0 else math.inf
    return CheckResult("norm equivalence ratio", ok, spread, f"ratios in [{lo:g}, {hi:g}]")


@_timed
def check_inverse_estimate(tol: float = 0.05) -> CheckResult:
    c = [r[2] for r in norm_equivalence_bounds()]
    spread = (max(c) - min(c)) / max(c)
    return CheckResult("inverse-estimate constant", spread < tol, spread, f"< {tol:g} spread")


def brute_force_min_count(sq: np.ndarray, theta: float) -> int:
    """Smallest cardinality of a subset whose sum reaches ``theta * sum``."""
    n = len(sq)
    masks = (np.arange(1 << n)[:, None] >> np.arange(n)) & 1
    sums = masks @ sq
    ok = sums >= theta * math.fsum(sq)
    return int(masks.sum(axis=1)[ok].min())


@_timed
def check_dorfler(n_sets: int = 1000, seed: int = 5) -> CheckResult:
    rng = np.random.default_rng(seed)
    bad = 0
    for _ in range(n_sets):
        n = int(rng.integers(1, 13))
        eta = rng.exponential(size=n)
        if rng.random() < 0.2:
            eta = np.round(eta, 1)  # exercise ties
        theta = float(rng.uniform(0.05, 0.95))
        marked = dorfler_mark(eta, theta)
        sq = eta * eta
        reach = math.fsum(sq[list(marked)]) >= theta * math.fsum(sq) * (1 - 1e-14)
        if not reach or len(marked) != brute_force_min_count(sq, theta):
            bad += 1
    return CheckResult("Doerfler minimality (brute force)", bad == 0, float(bad), "0 failures")


def scaled_effectivities(c: float, name: str = "kellogg", refinements: int = 1):
    bench = get_benchmark(name)
    p = bench.problem() if c == 1.0 else bench.problem().scaled(c)
    mesh = bench.seed_mesh().uniform_refine(refinements)
    sol = assemble_and_solve(mesh, p)
    beta = p.beta_on(sol.top)
    flux = recover_flux(sol, beta)
    eta_hat, eta_res = aggregate(compute_indicators(sol, flux, p))
    err = energy_error(sol, p)
    return effectivity(eta_hat, err), effectivity(eta_res, err)


@_timed
def check_beta_scaling(tol: float = 1e-8) -> CheckResult:
    worst = 0.0
    for name in ("kellogg", "wavefront"):
        ref = np.array(scaled_effectivities(1.0, name))
        for c in (1e-3, 7.3, 250.0):
            worst = max(worst, float(np.max(np.abs(np.array(scaled_effectivities(c, name)) - ref) / ref)))
    return CheckResult("beta-scaling of effectivities", worst <= tol, worst, f"<= {tol:g}")


ALL_CHECKS = (check_patch, check_flux_identities, check_projection, check_norm_equivalence,
              check_inverse_estimate, check_dorfler, check_beta_scaling)


def run_all() -> list[CheckResult]:
    return [chk() for chk in ALL_CHECKS]
