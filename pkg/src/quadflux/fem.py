"""Conforming bilinear finite elements on quadtrees with hanging nodes.

The stiffness matrix is assembled over *all* nodes and the conforming space is
recovered with a prolongation ``P`` from regular-node values to all-node
values, so the solved system is ``P^T A P u = P^T f`` restricted to the free
regular nodes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import AssemblyError, NumericalFailure, QuadfluxError, UnsupportedOperation
from .mesh import MeshTopology, QuadtreeMesh
from .quadrature import gauss_1d, rect_points

# corner order LL, LR, UR, UL as (x-index, y-index)
_CORNER_AB = np.array([[0, 0], [1, 0], [1, 1], [0, 1]])
_STIFF_1D = np.array([[1.0, -1.0], [-1.0, 1.0]])
_MASS_1D = np.array([[1.0 / 3.0, 1.0 / 6.0], [1.0 / 6.0, 1.0 / 3.0]])
_KX = _STIFF_1D[np.ix_(_CORNER_AB[:, 0], _CORNER_AB[:, 0])] * _MASS_1D[np.ix_(_CORNER_AB[:, 1], _CORNER_AB[:, 1])]
_KY = _MASS_1D[np.ix_(_CORNER_AB[:, 0], _CORNER_AB[:, 0])] * _STIFF_1D[np.ix_(_CORNER_AB[:, 1], _CORNER_AB[:, 1])]


def _as_field(v) -> Callable:
    if callable(v):
        return v
    c = float(v)
    return lambda x, y: np.full(np.broadcast(np.asarray(x), np.asarray(y)).shape, c)


@dataclass
class ProblemData:
    """Data of ``-div(beta grad u) = f`` with ``u = g`` on the boundary.

    All callables take coordinate arrays ``(x, y)`` and are evaluated
    elementwise; ``exact_grad`` returns the pair ``(u_x, u_y)``. ``beta`` is
    sampled once per leaf at its centroid.
    """

    f: Callable | float = 0.0
    beta: Callable | float = 1.0
    g: Callable | float = 0.0
    exact_u: Callable | None = None
    exact_grad: Callable | None = None
    singular_points: tuple = ()
    name: str = ""

    def __post_init__(self):
        self.f = _as_field(self.f)
        self.beta = _as_field(self.beta)
        self.g = _as_field(self.g)

    def beta_on(self, top: MeshTopology) -> np.ndarray:
        b = np.asarray(self.beta(top.centroid[:, 0], top.centroid[:, 1]), dtype=float)
        if np.any(~(b > 0)):
            raise ValueError("diffusion coefficient must be positive on every leaf")
        return b

    def scaled(self, c: float) -> "ProblemData":
        """The problem with (beta, f) replaced by (c beta, c f); its solution is unchanged."""
        beta, f = self.beta, self.f
        grad = self.exact_grad
        return ProblemData(f=lambda x, y: c * f(x, y), beta=lambda x, y: c * beta(x, y), g=self.g,
                           exact_u=self.exact_u, exact_grad=grad,
                           singular_points=self.singular_points, name=self.name)


def local_stiffness(hx: float, hy: float, beta: float = 1.0) -> np.ndarray:
    """Exact 4x4 stiffness of the bilinear basis on an ``hx`` by ``hy`` rectangle.

    Rows and columns follow the corner order LL, LR, UR, UL.
    """
    return beta * ((hy / hx) * _KX + (hx / hy) * _KY)


@dataclass
class Prolongation:
    matrix: sp.csr_matrix  # (n_nodes, n_regular)
    regular: np.ndarray  # node id of each column

    def weights(self, node: int) -> dict[int, float]:
        row = self.matrix.getrow(node)
        return {int(self.regular[c]): float(w) for c, w in zip(row.indices, row.data)}


def build_prolongation(top: MeshTopology) -> Prolongation:
    """Regular rows are unit rows; hanging rows come from recursive midpoint substitution.

    A hanging node takes weights 1/2, 1/2 on its two masters; masters that are
    hanging themselves are replaced by their own rows until only regular nodes
    remain.
    """
    hanging, masters = top.hanging, top.masters
    regular = np.flatnonzero(~hanging)
    col = np.full(top.n_nodes, -1, dtype=np.int64)
    col[regular] = np.arange(len(regular))
    memo: dict[int, dict[int, float]] = {}

    def resolve(z: int) -> dict[int, float]:
        stack = [z]
        active = {z}
        while stack:
            y = stack[-1]
            pending = [int(m) for m in masters[y] if hanging[m] and int(m) not in memo]
            if pending:
                for m in pending:
                    if m in active:
                        raise QuadfluxError(f"cyclic hanging-node dependency at node {m}")
                    active.add(m)
                    stack.append(m)
                continue
            w: dict[int, float] = {}
            for m in masters[y]:
                m = int(m)
                part = memo[m] if hanging[m] else {m: 1.0}
                for r, v in part.items():
                    w[r] = w.get(r, 0.0) + 0.5 * v
            memo[y] = w
            active.discard(y)
            stack.pop()
        return memo[z]

    rows, cols, vals = list(regular), list(col[regular]), [1.0] * len(regular)
    for z in np.flatnonzero(hanging):
        for r, v in sorted(resolve(int(z)).items()):
            rows.append(int(z))
            cols.append(int(col[r]))
            vals.append(v)
    P = sp.csr_matrix((vals, (rows, cols)), shape=(top.n_nodes, len(regular)))
    return Prolongation(P, regular)


def assemble_stiffness(top: MeshTopology, beta: np.ndarray) -> sp.csr_matrix:
    hx = top.bounds[:, 2] - top.bounds[:, 0]
    hy = top.bounds[:, 3] - top.bounds[:, 1]
    K = beta[:, None, None] * ((hy / hx)[:, None, None] * _KX + (hx / hy)[:, None, None] * _KY)
    I = np.repeat(top.corners, 4, axis=1)
    J = np.tile(top.corners, (1, 4))
    return sp.coo_matrix((K.ravel(), (I.ravel(), J.ravel())), shape=(top.n_nodes, top.n_nodes)).tocsr()


def _shape_values(xi, eta):
    return np.stack([(1 - xi) * (1 - eta), xi * (1 - eta), xi * eta, (1 - xi) * eta], axis=-1)


def assemble_load(top: MeshTopology, f: Callable, order: int = 3) -> np.ndarray:
    X, Y, Wq = rect_points(top.bounds[:, 0], top.bounds[:, 1], top.bounds[:, 2], top.bounds[:, 3], order)
    b = top.bounds
    xi = (X - b[:, [0]]) / (b[:, [2]] - b[:, [0]])
    eta = (Y - b[:, [1]]) / (b[:, [3]] - b[:, [1]])
    fv = np.asarray(f(X, Y), dtype=float) * Wq
    local = np.einsum("kq,kqa->ka", fv, _shape_values(xi, eta))
    return np.bincount(top.corners.ravel(), weights=local.ravel(), minlength=top.n_nodes)


@dataclass
class LinearSystem:
    A: sp.csr_matrix
    load: np.ndarray
    prolongation: Prolongation
    free: np.ndarray  # node ids of free regular nodes
    dirichlet: np.ndarray  # node ids of regular boundary nodes
    g_values: np.ndarray  # Dirichlet values on ``dirichlet``

    def reduced(self):
        """``(A_ff, rhs)`` of the conforming system after Dirichlet elimination."""
        P = self.prolongation.matrix
        AR = (P.T @ self.A @ P).tocsr()
        FR = P.T @ self.load
        col = np.full(P.shape[0], -1, dtype=np.int64)
        col[self.prolongation.regular] = np.arange(P.shape[1])
        fi, di = col[self.free], col[self.dirichlet]
        A_ff = AR[fi][:, fi].tocsr()
        rhs = FR[fi] - AR[fi][:, di] @ self.g_values
        return A_ff, rhs


def assemble(top: MeshTopology, problem: ProblemData) -> LinearSystem:
    beta = problem.beta_on(top)
    A = assemble_stiffness(top, beta)
    load = assemble_load(top, problem.f)
    P = build_prolongation(top)
    reg = P.regular
    on_bnd = top.boundary_node[reg]
    free, dirichlet = reg[~on_bnd], reg[on_bnd]
    xy = top.node_xy[dirichlet]
    g = np.asarray(problem.g(xy[:, 0], xy[:, 1]), dtype=float).reshape(-1)
    return LinearSystem(A, load, P, free, dirichlet, g)


def pcg(A, b, rtol=1e-10, maxiter=None):
    """Conjugate gradients with a diagonal preconditioner.

    Returns ``(x, iterations)``; raises AssemblyError on a non-positive
    curvature direction and NumericalFailure when ``maxiter`` is exhausted.
    """
    n = len(b)
    maxiter = maxiter if maxiter is not None else max(100, 10 * n)
    d = A.diagonal()
    if np.any(d <= 0):
        raise AssemblyError("non-positive diagonal entry in the reduced matrix")
    dinv = 1.0 / d
    x = np.zeros(n)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return x, 0
    r = b.copy()
    z = dinv * r
    p = z.copy()
    rz = r @ z
    for it in range(1, maxiter + 1):
        Ap = A @ p
        pAp = p @ Ap
        if pAp <= 0:
            raise AssemblyError("reduced matrix is not positive definite")
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        if np.linalg.norm(r) <= rtol * bnorm:
            return x, it
        z = dinv * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise NumericalFailure(f"PCG did not reach relative residual {rtol:g} in {maxiter} iterations")


@dataclass
class DiscreteSolution:
    """All-node coefficients of the conforming bilinear solution on one mesh state."""

    top: MeshTopology
    values: np.ndarray
    system: LinearSystem = field(repr=False)
    residual: float = 0.0

    @property
    def ndof(self) -> int:
        return len(self.system.free)

    def gradient(self, leaf_pos, x, y):
        """Gradient of the bilinear expansion on the given leaves at points (x, y)."""
        return leaf_gradient(self.top, self.values, leaf_pos, x, y)

    def conformity_defect(self) -> float:
        """Largest deviation of a hanging-node value from its prolongation weights."""
        P = self.system.prolongation
        rebuilt = P.matrix @ self.values[P.regular]
        return float(np.max(np.abs(rebuilt - self.values), initial=0.0))

    def galerkin_residual(self) -> float:
        """Max-norm of ``P^T (f - A u)`` on the free regular nodes."""
        sys_ = self.system
        r = sys_.prolongation.matrix.T @ (sys_.load - sys_.A @ self.values)
        col = np.full(self.top.n_nodes, -1, dtype=np.int64)
        col[sys_.prolongation.regular] = np.arange(len(sys_.prolongation.regular))
        return float(np.max(np.abs(r[col[sys_.free]]), initial=0.0))


def leaf_gradient(top: MeshTopology, values: np.ndarray, leaf_pos, x, y):
    leaf_pos = np.asarray(leaf_pos)
    b = top.bounds[leaf_pos]
    hx = b[..., 2] - b[..., 0]
    hy = b[..., 3] - b[..., 1]
    xi = (x - b[..., 0]) / hx
    eta = (y - b[..., 1]) / hy
    u = values[top.corners[leaf_pos]]
    ux = ((u[..., 1] - u[..., 0]) * (1 - eta) + (u[..., 2] - u[..., 3]) * eta) / hx
    uy = ((u[..., 3] - u[..., 0]) * (1 - xi) + (u[..., 2] - u[..., 1]) * xi) / hy
    return ux, uy


def assemble_and_solve(mesh: QuadtreeMesh | MeshTopology, problem: ProblemData,
                       solver: str = "direct", rtol: float = 1e-10) -> DiscreteSolution:
    """Assemble over all nodes, eliminate Dirichlet data, solve, prolong to hanging nodes.

    ``solver`` is ``"direct"`` (sparse LU) or ``"pcg"`` (Jacobi-preconditioned
    conjugate gradients); both must reach relative residual ``rtol``.
    """
    top = mesh.topology() if isinstance(mesh, QuadtreeMesh) else mesh
    system = assemble(top, problem)
    A_ff, rhs = system.reduced()
    n = A_ff.shape[0]
    if n and (abs(A_ff - A_ff.T).max() > 1e-12 * abs(A_ff).max()):
        raise AssemblyError("reduced matrix is not symmetric")
    if n == 0:
        u_f = np.zeros(0)
    elif solver == "pcg":
        u_f, _ = pcg(A_ff, rhs, rtol=rtol)
    elif solver == "direct":
        if np.any(A_ff.diagonal() <= 0):
            raise AssemblyError("non-positive diagonal entry in the reduced matrix")
        lu = spla.splu(A_ff.tocsc())
        u_f = lu.solve(rhs)
        for _ in range(3):  # iterative refinement if the factorisation lost digits
            r = rhs - A_ff @ u_f
            if np.linalg.norm(r) <= rtol * max(np.linalg.norm(rhs), 1e-300):
                break
            u_f = u_f + lu.solve(r)
    else:
        raise ValueError(f"unknown solver {solver!r}")
    bnorm = np.linalg.norm(rhs)
    res = float(np.linalg.norm(rhs - A_ff @ u_f) / bnorm) if bnorm > 0 else 0.0
    if res > rtol:
        raise NumericalFailure(f"relative residual {res:.3e} exceeds {rtol:g}")

    P = system.prolongation
    u_reg = np.zeros(len(P.regular))
    col = np.full(top.n_nodes, -1, dtype=np.int64)
    col[P.regular] = np.arange(len(P.regular))
    u_reg[col[system.free]] = u_f
    u_reg[col[system.dirichlet]] = system.g_values
    values = P.matrix @ u_reg
    return DiscreteSolution(top, values, system, res)


# -- energy error --------------------------------------------------------------

@lru_cache(maxsize=None)
def _radial_rule(levels: int = 64, ratio: float = 0.25, n: int = 6):
    """Composite Gauss rule on (0, 1] with geometrically graded panels towards 0."""
    x, w = gauss_1d(n)
    lo = ratio ** np.arange(1, levels + 1)
    hi = ratio ** np.arange(levels)
    t = (lo[:, None] + (hi - lo)[:, None] * x).ravel()
    wt = ((hi - lo)[:, None] * w).ravel()
    return t, wt


def singular_corner_rule(bounds, point, n_angle: int = 16):
    """Polar rule on a rectangle with ``point`` at one of its corners.

    Radial panels shrink geometrically towards the corner, which integrates
    power-type singularities ``r^(-a)`` with ``a < 2`` to near machine
    precision. Returns (x, y, w).
    """
    x0, y0, x1, y1 = bounds
    px, py = point
    sx = 1.0 if px == x0 else -1.0
    sy = 1.0 if py == y0 else -1.0
    A, B = x1 - x0, y1 - y0
    split = np.arctan2(B, A)
    t, wt = _radial_rule()
    ga, gw = gauss_1d(n_angle)
    xs, ys, ws = [], [], []
    for lo, hi, use_a in ((0.0, split, True), (split, 0.5 * np.pi, False)):
        phi = lo + (hi - lo) * ga
        wphi = (hi - lo) * gw
        rmax = A / np.cos(phi) if use_a else B / np.sin(phi)
        r = rmax[:, None] * t[None, :]
        w = (wphi * rmax)[:, None] * wt[None, :] * r
        xs.append(px + sx * r * np.cos(phi)[:, None])
        ys.append(py + sy * r * np.sin(phi)[:, None])
        ws.append(w)
    return (np.concatenate([a.ravel() for a in xs]), np.concatenate([a.ravel() for a in ys]),
            np.concatenate([a.ravel() for a in ws]))


def singular_leaves(top: MeshTopology, points) -> dict[int, tuple[float, float]]:
    """Leaf positions having one of ``points`` as a corner."""
    out = {}
    for p in points:
        px, py = float(p[0]), float(p[1])
        b = top.bounds
        hit = ((b[:, 0] == px) | (b[:, 2] == px)) & ((b[:, 1] == py) | (b[:, 3] == py))
        for k in np.flatnonzero(hit):
            out[int(k)] = (px, py)
    return out


def energy_error_sq(top: MeshTopology, values: np.ndarray, problem: ProblemData,
                    order: int = 5) -> np.ndarray:
    """Per-leaf squared energy error ``int_K beta_K |grad u - grad u_T|^2``.

    Tensor Gauss of the given order per leaf; leaves with a corner at one of
    the problem's singular points use :func:`singular_corner_rule` instead.
    """
    if problem.exact_grad is None:
        raise UnsupportedOperation("energy error needs the exact gradient")
    beta = problem.beta_on(top)
    b = top.bounds
    X, Y, Wq = rect_points(b[:, 0], b[:, 1], b[:, 2], b[:, 3], order)
    leaf = np.broadcast_to(np.arange(top.n_leaves)[:, None], X.shape)
    sing = singular_leaves(top, problem.singular_points)
    if sing:
        keep = np.ones(top.n_leaves, dtype=bool)
        keep[list(sing)] = False
        X, Y, Wq, leaf = X[keep], Y[keep], Wq[keep], leaf[keep]
    gx, gy = problem.exact_grad(X, Y)
    hx, hy = leaf_gradient(top, values, leaf, X, Y)
    err = np.zeros(top.n_leaves)
    contrib = ((gx - hx) ** 2 + (gy - hy) ** 2) * Wq
    err[leaf[:, 0]] = contrib.sum(axis=1)
    for k, p in sorted(sing.items()):
        x, y, w = singular_corner_rule(b[k], p)
        gx, gy = problem.exact_grad(x, y)
        hx, hy = leaf_gradient(top, values, np.full(x.shape, k), x, y)
        err[k] = float(np.sum(((gx - hx) ** 2 + (gy - hy) ** 2) * w))
    return beta * err


def energy_error(solution: DiscreteSolution, problem: ProblemData, order: int = 5) -> float:
    """``(sum_K int_K beta_K |grad u - grad u_T|^2)^(1/2)``."""
    return float(np.sqrt(np.sum(energy_error_sq(solution.top, solution.values, problem, order))))
