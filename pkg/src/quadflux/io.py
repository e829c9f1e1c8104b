"""File output: legacy VTK snapshots, JSON topology dumps, convergence tables."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .afem import ConvergenceRecord
from .flux import RecoveredFlux
from .mesh import MeshTopology

VTK_QUAD = 9


def write_vtk(path, top: MeshTopology, point_data: dict | None = None,
              title: str = "quadflux mesh") -> None:
    """Legacy ASCII unstructured grid with one quad per leaf on its generation vertices.

    Hanging nodes are written as points but referenced by no cell.
    """
    lines = ["# vtk DataFile Version 3.0", title[:255], "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {top.n_nodes} double"]
    lines += [f"{x!r} {y!r} 0.0" for x, y in top.node_xy.tolist()]
    n = top.n_leaves
    lines.append(f"CELLS {n} {5 * n}")
    lines += ["4 " + " ".join(map(str, c)) for c in top.corners.tolist()]
    lines.append(f"CELL_TYPES {n}")
    lines += [str(VTK_QUAD)] * n
    if point_data:
        lines.append(f"POINT_DATA {top.n_nodes}")
        for name, values in point_data.items():
            lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            lines += [repr(float(v)) for v in np.asarray(values)]
    Path(path).write_text("\n".join(lines) + "\n")


def topology_dict(top: MeshTopology) -> dict:
    """Nodes, leaves, sub-edges and node classification as plain JSON types."""
    nodes = [{"id": i, "x": float(x), "y": float(y),
              "kind": "hanging" if top.hanging[i] else "regular",
              "masters": [int(m) for m in top.masters[i]] if top.hanging[i] else []}
             for i, (x, y) in enumerate(top.node_xy.tolist())]
    leaves = []
    for k, lid in enumerate(top.leaf_ids.tolist()):
        leaves.append({"id": lid, "level": int(top.level[k]),
                       "corners": [int(c) for c in top.corners[k]],
                       "cycle": list(top.cycles[k]), "subedges": list(top.cycle_edges[k]),
                       "signs": list(top.cycle_signs[k])})
    subedges = [{"id": e, "nodes": list(se.nodes), "normal": list(se.normal), "length": se.length,
                 "minus": se.minus, "plus": se.plus}
                for e in range(top.n_subedges) for se in (top.subedge(e),)]
    return {"nodes": nodes, "leaves": leaves, "subedges": subedges}


def write_topology_json(path, top: MeshTopology) -> None:
    Path(path).write_text(json.dumps(topology_dict(top), indent=1))


def write_flux_csv(prefix, flux: RecoveredFlux) -> tuple[Path, Path]:
    """Debug dump: ``<prefix>_edges.csv`` and ``<prefix>_leaves.csv``."""
    top = flux.top
    edges, leaves = Path(f"{prefix}_edges.csv"), Path(f"{prefix}_leaves.csv")
    with open(edges, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["subedge", "c0", "c1", "gamma"])
        for e in range(top.n_subedges):
            w.writerow([e, repr(float(flux.c0[e])), repr(float(flux.c1[e])), repr(float(flux.gamma[e]))])
    proj = flux.projection()
    with open(leaves, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["leaf", "div", "proj_x", "proj_y"])
        for k, lid in enumerate(top.leaf_ids.tolist()):
            w.writerow([lid, repr(float(flux.div[k])), repr(float(proj[k, 0])), repr(float(proj[k, 1]))])
    return edges, leaves


# -- convergence tables ----------------------------------------------------------

_INT_FIELDS = {"iter", "ndof", "n_marked", "max_irregularity"}


def _columns() -> list[str]:
    names = ConvergenceRecord.field_names()
    head = list(ConvergenceRecord.CSV_COLUMNS)
    return head + [n for n in names if n not in head]


def write_convergence_csv(path, records) -> None:
    """Required columns first, then the diagnostic fields; floats via repr so they round-trip."""
    cols = _columns()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in records:
            d = r.as_dict()
            w.writerow([str(d[c]) if c in _INT_FIELDS else repr(float(d[c])) for c in cols])


def read_convergence_csv(path) -> list[ConvergenceRecord]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(ConvergenceRecord(**{k: int(v) if k in _INT_FIELDS else float(v)
                                            for k, v in row.items()}))
    return out


def _jsonable(v):
    if isinstance(v, float) and not math.isfinite(v):
        return repr(v)  # nan/inf are not valid JSON numbers
    return v


def write_summary(path, summary: dict) -> None:
    Path(path).write_text(json.dumps({k: _jsonable(v) for k, v in summary.items()}, indent=2))


def read_summary(path) -> dict:
    raw = json.loads(Path(path).read_text())
    return {k: float(v) if v in ("nan", "inf", "-inf") else v for k, v in raw.items()}
