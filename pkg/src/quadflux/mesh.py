"""Quadtree meshes with arbitrary-level hanging nodes.

Cells live in a linear quadtree keyed by ``(level, i, j)`` where ``(i, j)``
index the cell on the uniform grid of that level spanning the bounding box of
the unit root boxes. Node coordinates are stored as integers at resolution
``2**MAX_LEVEL`` so that deduplication and hanging-node detection never compare
floats.

Each leaf is also viewed as a polygon whose vertex cycle contains every
hanging node on its boundary. Consecutive cycle vertices bound a *sub-edge*;
sub-edges are stored once globally with a fixed normal, ``(1, 0)`` for vertical
and ``(0, 1)`` for horizontal ones. The leaf on the side the normal points away
from is ``minus``, the other one ``plus``.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import MeshError, QuadfluxError, RefinementBudgetError

MAX_LEVEL = 200

# sides in counterclockwise order, starting with the bottom one
S, E, N, W = range(4)
SIDE_NAMES = ("S", "E", "N", "W")
_OFFSET = ((0, -1), (1, 0), (0, 1), (-1, 0))
_OPPOSITE = (N, W, S, E)
# children indices touching a side, ordered by increasing coordinate along it;
# children are numbered LL, LR, UR, UL
_ADJACENT_CHILDREN = ((0, 1), (1, 2), (3, 2), (0, 3))
_CHILD_OFFSET = ((0, 0), (1, 0), (1, 1), (0, 1))


class Cell:
    __slots__ = ("level", "i", "j", "parent", "children", "corners")

    def __init__(self, level, i, j, parent, corners):
        self.level = level
        self.i = i
        self.j = j
        self.parent = parent
        self.children = None
        self.corners = corners  # node ids LL, LR, UR, UL

    @property
    def is_leaf(self) -> bool:
        return self.children is None


class QuadtreeMesh:
    """Hierarchical cell tree over a union of unit boxes.

    Parameters
    ----------
    boxes : iterable of (int, int)
        Integer positions of the unit root boxes relative to ``origin``.
    origin : (int, int)
        Integer coordinates of the lower-left corner of box ``(0, 0)``.
    """

    def __init__(self, boxes: Iterable[tuple[int, int]], origin=(0, 0)):
        boxes = sorted({(int(a), int(b)) for a, b in boxes}, key=lambda p: (p[1], p[0]))
        if not boxes or min(min(b) for b in boxes) < 0:
            raise MeshError("root boxes must be a non-empty set of non-negative positions")
        self.origin = (int(origin[0]), int(origin[1]))
        self.grid_shape = (max(b[0] for b in boxes) + 1, max(b[1] for b in boxes) + 1)
        self.boxes = tuple(boxes)
        self.cells: list[Cell] = []
        self._index: dict[tuple[int, int, int], int] = {}
        self.node_keys: list[tuple[int, int]] = []
        self._node_index: dict[tuple[int, int], int] = {}
        self._version = 0
        self._topology = None
        for bi, bj in boxes:
            self._new_cell(0, bi, bj, None)

    # -- constructors -----------------------------------------------------

    @classmethod
    def unit_square(cls, refinements: int = 0) -> "QuadtreeMesh":
        """(0, 1)^2 as one root box."""
        return cls([(0, 0)]).uniform_refine(refinements)

    @classmethod
    def square(cls, refinements: int = 0) -> "QuadtreeMesh":
        """(-1, 1)^2 as a 2 x 2 block of root boxes aligned with the axes."""
        return cls([(0, 0), (1, 0), (0, 1), (1, 1)], origin=(-1, -1)).uniform_refine(refinements)

    @classmethod
    def lshape(cls, refinements: int = 0) -> "QuadtreeMesh":
        """(-1, 1)^2 minus [0, 1) x (-1, 0] as three root boxes."""
        return cls([(0, 0), (0, 1), (1, 1)], origin=(-1, -1)).uniform_refine(refinements)

    # -- basic queries ----------------------------------------------------

    @property
    def n_nodes(self) -> int:
        return len(self.node_keys)

    @property
    def domain_area(self) -> float:
        return float(len(self.boxes))

    def leaves(self) -> list[int]:
        return [c for c, cell in enumerate(self.cells) if cell.children is None]

    def is_leaf(self, cid) -> bool:
        return isinstance(cid, (int, np.integer)) and 0 <= cid < len(self.cells) \
            and self.cells[cid].children is None

    def node_xy(self, nid: int) -> tuple[float, float]:
        X, Y = self.node_keys[nid]
        return (math.ldexp((self.origin[0] << MAX_LEVEL) + X, -MAX_LEVEL),
                math.ldexp((self.origin[1] << MAX_LEVEL) + Y, -MAX_LEVEL))

    def cell_bounds(self, cid: int) -> tuple[float, float, float, float]:
        c = self.cells[cid]
        l = c.level
        ox = self.origin[0] << l
        oy = self.origin[1] << l
        return (math.ldexp(ox + c.i, -l), math.ldexp(oy + c.j, -l),
                math.ldexp(ox + c.i + 1, -l), math.ldexp(oy + c.j + 1, -l))

    def find(self, level: int, i: int, j: int):
        """Deepest existing cell covering grid cell ``(level, i, j)``, or None outside the domain."""
        if i < 0 or j < 0 or i >= (self.grid_shape[0] << level) or j >= (self.grid_shape[1] << level):
            return None
        index = self._index
        while level >= 0:
            c = index.get((level, i, j))
            if c is not None:
                return c
            level -= 1
            i >>= 1
            j >>= 1
        return None

    # -- construction -----------------------------------------------------

    def _node(self, X: int, Y: int) -> int:
        key = (X, Y)
        nid = self._node_index.get(key)
        if nid is None:
            nid = len(self.node_keys)
            self.node_keys.append(key)
            self._node_index[key] = nid
        return nid

    def _new_cell(self, level, i, j, parent) -> int:
        s = MAX_LEVEL - level
        x0, y0, x1, y1 = i << s, j << s, (i + 1) << s, (j + 1) << s
        corners = (self._node(x0, y0), self._node(x1, y0), self._node(x1, y1), self._node(x0, y1))
        cid = len(self.cells)
        self.cells.append(Cell(level, i, j, parent, corners))
        self._index[(level, i, j)] = cid
        return cid

    def _quadsect(self, cid: int) -> None:
        cell = self.cells[cid]
        if cell.level + 1 > MAX_LEVEL:
            raise RefinementBudgetError(f"cell {cid} is already at the maximum level {MAX_LEVEL}")
        l, i, j = cell.level + 1, 2 * cell.i, 2 * cell.j
        cell.children = tuple(self._new_cell(l, i + di, j + dj, cid) for di, dj in _CHILD_OFFSET)

    def uniform_refine(self, times: int = 1) -> "QuadtreeMesh":
        for _ in range(times):
            self.refine(self.leaves())
        return self

    def refine(self, marked: Iterable[int], cap: int | None = None) -> "QuadtreeMesh":
        """Quadsect the marked leaves, then enforce the irregularity cap if given.

        The closure repeatedly quadsects any leaf owning an edge with more than
        ``cap`` hanging nodes. It assumes the mesh satisfied the cap before the
        call, so only leaves next to newly refined cells are re-examined.
        """
        marked = sorted(set(marked))
        for c in marked:
            if not self.is_leaf(c):
                raise MeshError(f"cell {c} is not a leaf")
        if cap is not None and (int(cap) != cap or cap < 0):
            raise MeshError(f"irregularity cap must be a non-negative integer, got {cap!r}")
        for c in marked:
            self._quadsect(c)
        if cap is not None and marked:
            self._close(int(cap), marked)
        self._version += 1
        self._topology = None
        return self

    def _leaf_neighbors(self, cid):
        cell = self.cells[cid]
        out = []
        for s in range(4):
            di, dj = _OFFSET[s]
            nb = self.find(cell.level, cell.i + di, cell.j + dj)
            if nb is not None and self.cells[nb].children is None:
                out.append(nb)
        return out

    def _close(self, cap: int, refined: list[int]) -> None:
        queue = deque()
        queued = set()

        def push_around(c):
            for nb in sorted(self._leaf_neighbors(c)) + list(self.cells[c].children):
                if nb not in queued:
                    queued.add(nb)
                    queue.append(nb)

        for c in refined:
            push_around(c)
        while queue:
            c = queue.popleft()
            queued.discard(c)
            if self.cells[c].children is not None:
                continue
            if any(self.side_hanging_count(c, s) > cap for s in range(4)):
                self._quadsect(c)
                push_around(c)

    # -- side traversal ---------------------------------------------------

    def _collect(self, cid: int, side: int, out: list) -> None:
        cell = self.cells[cid]
        if cell.children is None:
            out.append(cid)
            return
        for k in _ADJACENT_CHILDREN[side]:
            self._collect(cell.children[k], side, out)

    def side_neighbors(self, cid: int, side: int) -> list[int] | None:
        """Leaves across ``side`` of leaf ``cid`` in increasing order along the side.

        Returns None on the domain boundary. A single coarser or equal neighbor
        comes back as a one-element list.
        """
        cell = self.cells[cid]
        di, dj = _OFFSET[side]
        nb = self.find(cell.level, cell.i + di, cell.j + dj)
        if nb is None:
            return None
        out: list[int] = []
        self._collect(nb, _OPPOSITE[side], out)
        return out

    def side_hanging_count(self, cid: int, side: int) -> int:
        nbs = self.side_neighbors(cid, side)
        return 0 if nbs is None else len(nbs) - 1

    # -- snapshots --------------------------------------------------------

    def topology(self) -> "MeshTopology":
        """Immutable snapshot of the current leaves, nodes and sub-edges (cached)."""
        if self._topology is None:
            self._topology = MeshTopology.build(self)
        return self._topology


@dataclass(frozen=True)
class SubEdge:
    id: int
    nodes: tuple[int, int]  # ordered by increasing coordinate along the edge
    normal: tuple[float, float]
    length: float
    minus: int  # leaf id
    plus: int  # leaf id, or -1 on the boundary

    @property
    def is_boundary(self) -> bool:
        return self.minus < 0 or self.plus < 0


@dataclass(frozen=True)
class PolygonView:
    leaf: int
    nodes: tuple[int, ...]  # counterclockwise from the lower-left corner
    subedges: tuple[int, ...]  # subedges[k] joins nodes[k] and nodes[k+1]
    signs: tuple[int, ...]  # +1 where the leaf is the minus side of the sub-edge
    diameter: float
    area: float


@dataclass(frozen=True)
class NodeClassification:
    hanging: np.ndarray  # bool per node
    masters: np.ndarray  # (n_nodes, 2) node ids, -1 for regular nodes

    @property
    def n_regular(self) -> int:
        return int((~self.hanging).sum())

    @property
    def n_hanging(self) -> int:
        return int(self.hanging.sum())

    def kind(self, nid: int) -> str:
        return "hanging" if self.hanging[nid] else "regular"


def _frozen(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


class MeshTopology:
    """Array view of one mesh state; leaf arrays are in increasing leaf-id order.

    Attributes use leaf *positions* (0..n_leaves-1) internally; ``leaf_ids``
    maps positions back to cell ids.
    """

    @classmethod
    def build(cls, mesh: QuadtreeMesh) -> "MeshTopology":
        self = cls()
        self.version = mesh._version
        leaves = mesh.leaves()
        pos = {c: k for k, c in enumerate(leaves)}
        nL = len(leaves)
        nN = mesh.n_nodes
        self.leaf_ids = _frozen(np.array(leaves, dtype=np.int64))
        self.leaf_pos = pos
        cells = mesh.cells
        self.corners = _frozen(np.array([cells[c].corners for c in leaves], dtype=np.int64).reshape(nL, 4))
        self.bounds = _frozen(np.array([mesh.cell_bounds(c) for c in leaves], dtype=float).reshape(nL, 4))
        self.level = _frozen(np.array([cells[c].level for c in leaves], dtype=np.int64))
        self.node_xy = _frozen(np.array([mesh.node_xy(n) for n in range(nN)], dtype=float).reshape(nN, 2))
        hx = self.bounds[:, 2] - self.bounds[:, 0]
        hy = self.bounds[:, 3] - self.bounds[:, 1]
        self.area = _frozen(hx * hy)
        self.diameter = _frozen(np.hypot(hx, hy))
        self.centroid = _frozen(np.column_stack([0.5 * (self.bounds[:, 0] + self.bounds[:, 2]),
                                                 0.5 * (self.bounds[:, 1] + self.bounds[:, 3])]))

        node_index = mesh._node_index
        hanging = np.zeros(nN, dtype=bool)
        masters = np.full((nN, 2), -1, dtype=np.int64)
        hang_count = np.zeros((nL, 4), dtype=np.int64)
        boundary_node = np.zeros(nN, dtype=bool)

        se_key: dict[tuple[int, int], int] = {}
        se_nodes, se_vertical, se_minus, se_plus = [], [], [], []
        cycles, cyc_edges, cyc_signs = [], [], []
        inc_leaf, inc_edge, inc_sign = [], [], []

        M = MAX_LEVEL
        for k, c in enumerate(leaves):
            cell = cells[c]
            s = M - cell.level
            X0, Y0, X1, Y1 = cell.i << s, cell.j << s, (cell.i + 1) << s, (cell.j + 1) << s
            cyc, ced, csg = [], [], []
            for side in range(4):
                nbs = mesh.side_neighbors(c, side)
                vertical = side in (E, W)
                line = X1 if side == E else X0 if side == W else Y0 if side == S else Y1
                lo = Y0 if vertical else X0
                if nbs is None:
                    bounds_along = [lo, Y1 if vertical else X1]
                    owners = [-1]
                else:
                    hang_count[k, side] = len(nbs) - 1
                    bounds_along = [lo]
                    for nb in nbs:
                        nc = cells[nb]
                        t = M - nc.level
                        bounds_along.append(((nc.j + 1) if vertical else (nc.i + 1)) << t)
                    # a coarser neighbour overshoots the side
                    bounds_along[-1] = Y1 if vertical else X1
                    owners = [pos[nb] for nb in nbs]
                ids = [node_index[(line, b) if vertical else (b, line)] for b in bounds_along]
                if len(ids) > 2:
                    for b, nid in zip(bounds_along[1:-1], ids[1:-1]):
                        if not hanging[nid]:
                            hanging[nid] = True
                            d = b & -b
                            if vertical:
                                m0, m1 = (line, b - d), (line, b + d)
                            else:
                                m0, m1 = (b - d, line), (b + d, line)
                            try:
                                masters[nid] = (node_index[m0], node_index[m1])
                            except KeyError:  # pragma: no cover - impossible on valid meshes
                                raise QuadfluxError(f"missing master node for hanging node {nid}")
                minus_side = side in (E, N)
                sign = 1 if minus_side else -1
                segs = []
                for a, b, nb in zip(ids[:-1], ids[1:], owners):
                    key = (a, b)
                    e = se_key.get(key)
                    if e is None:
                        e = len(se_nodes)
                        se_key[key] = e
                        se_nodes.append(key)
                        se_vertical.append(vertical)
                        se_minus.append(-1)
                        se_plus.append(-1)
                    if minus_side:
                        se_minus[e] = k
                    else:
                        se_plus[e] = k
                    if nb < 0:
                        boundary_node[a] = True
                        boundary_node[b] = True
                    segs.append((a, b, e))
                if side in (N, W):  # counterclockwise walk runs against the global orientation
                    segs = [(b, a, e) for a, b, e in reversed(segs)]
                for a, b, e in segs:
                    cyc.append(a)
                    ced.append(e)
                    csg.append(sign)
                    inc_leaf.append(k)
                    inc_edge.append(e)
                    inc_sign.append(sign)
            cycles.append(tuple(cyc))
            cyc_edges.append(tuple(ced))
            cyc_signs.append(tuple(csg))

        self.hanging = _frozen(hanging)
        self.masters = _frozen(masters)
        self.hang_count = _frozen(hang_count)
        self.boundary_node = _frozen(boundary_node)
        nE = len(se_nodes)
        self.se_nodes = _frozen(np.array(se_nodes, dtype=np.int64).reshape(nE, 2))
        self.se_vertical = _frozen(np.array(se_vertical, dtype=bool))
        self.se_minus = _frozen(np.array(se_minus, dtype=np.int64))
        self.se_plus = _frozen(np.array(se_plus, dtype=np.int64))
        a = self.node_xy[self.se_nodes[:, 0]]
        b = self.node_xy[self.se_nodes[:, 1]]
        self.se_start = _frozen(a)
        self.se_length = _frozen(np.where(self.se_vertical, b[:, 1] - a[:, 1], b[:, 0] - a[:, 0]))
        self.se_interior = _frozen((self.se_minus >= 0) & (self.se_plus >= 0))
        self.cycles = tuple(cycles)
        self.cycle_edges = tuple(cyc_edges)
        self.cycle_signs = tuple(cyc_signs)
        self.inc_leaf = _frozen(np.array(inc_leaf, dtype=np.int64))
        self.inc_edge = _frozen(np.array(inc_edge, dtype=np.int64))
        self.inc_sign = _frozen(np.array(inc_sign, dtype=float))
        self.domain_area = mesh.domain_area
        return self

    # -- sizes ------------------------------------------------------------

    @property
    def n_leaves(self) -> int:
        return len(self.leaf_ids)

    @property
    def n_nodes(self) -> int:
        return len(self.node_xy)

    @property
    def n_subedges(self) -> int:
        return len(self.se_nodes)

    @property
    def n_free(self) -> int:
        """Regular nodes off the Dirichlet boundary: the DoF count of the discrete problem."""
        return int((~self.hanging & ~self.boundary_node).sum())

    @property
    def se_normal(self) -> np.ndarray:
        return np.where(self.se_vertical[:, None], [1.0, 0.0], [0.0, 1.0])

    # -- object views -----------------------------------------------------

    def classification(self) -> NodeClassification:
        return NodeClassification(self.hanging, self.masters)

    def subedge(self, e: int) -> SubEdge:
        lid = lambda k: int(self.leaf_ids[k]) if k >= 0 else -1  # noqa: E731
        return SubEdge(e, tuple(int(n) for n in self.se_nodes[e]),
                       (1.0, 0.0) if self.se_vertical[e] else (0.0, 1.0),
                       float(self.se_length[e]), lid(self.se_minus[e]), lid(self.se_plus[e]))

    def polygon(self, leaf_id: int) -> PolygonView:
        k = self.leaf_pos[leaf_id]
        return PolygonView(int(leaf_id), self.cycles[k], self.cycle_edges[k], self.cycle_signs[k],
                           float(self.diameter[k]), float(self.area[k]))

    def irregularity(self) -> int:
        return int(self.hang_count.max()) if self.n_leaves else 0


def classify_nodes(mesh: QuadtreeMesh) -> NodeClassification:
    """Regular/hanging label for every node; hanging nodes carry their master pair."""
    return mesh.topology().classification()


def build_polygon_view(mesh: QuadtreeMesh) -> dict[int, PolygonView]:
    top = mesh.topology()
    return {int(c): top.polygon(int(c)) for c in top.leaf_ids}


def irregularity(mesh: QuadtreeMesh) -> int:
    """Maximum number of hanging nodes on any leaf edge."""
    return mesh.topology().irregularity()


def refine(mesh: QuadtreeMesh, marked: Iterable[int], cap: int | None = None) -> QuadtreeMesh:
    return mesh.refine(marked, cap=cap)
