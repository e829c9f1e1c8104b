"""SOLVE -> ESTIMATE -> MARK -> REFINE with bulk (Doerfler) marking."""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Iterable

import numpy as np

from .errors import InsufficientDataError, QuadfluxError, UndefinedEffectivity
from .estimators import (ElementIndicators, aggregate, compute_indicators, effectivity,
                         total_oscillation)
from .fem import ProblemData, assemble_and_solve, energy_error_sq
from .flux import divergence_defect, recover_flux, trace_mismatch
from .mesh import QuadtreeMesh


@dataclass
class AfemConfig:
    theta: float = 0.3
    stop_relative_error: float = 0.01
    max_iterations: int = 60
    max_dofs: int = 30000
    cap: int | None = None  # irregularity cap; None means unbounded
    solver: str = "direct"

    def __post_init__(self):
        if not 0.0 < self.theta < 1.0:
            raise ValueError("theta must lie in (0, 1)")
        if not self.stop_relative_error > 0:
            raise ValueError("stop_relative_error must be positive")
        if self.cap is not None and self.cap < 0:
            raise ValueError("cap must be non-negative")


@dataclass
class ConvergenceRecord:
    iter: int
    ndof: int
    energy_error: float
    eta_hat: float
    eta_res: float
    eff_hat: float
    eff_res: float
    n_marked: int
    max_irregularity: int
    wall_ms: float = 0.0
    rel_error: float = math.nan
    osc: float = 0.0
    trace_mismatch: float = 0.0
    div_defect: float = 0.0
    local_eff_max: float = 0.0
    reliability: float = math.nan

    CSV_COLUMNS = ("iter", "ndof", "energy_error", "eta_hat", "eta_res", "eff_hat", "eff_res",
                   "n_marked", "max_irregularity")

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


@dataclass
class AfemResult:
    records: list[ConvergenceRecord]
    mesh: QuadtreeMesh
    status: str = "converged"  # converged | budget | max_iterations | failed
    error: str | None = None

    @property
    def final(self) -> ConvergenceRecord:
        return self.records[-1]


def dorfler_mark(indicators, theta: float, leaf_ids=None) -> set:
    """Smallest set whose squared indicators reach ``theta`` times the total.

    Indicators are sorted by decreasing square with ties broken by ascending
    leaf id. All-zero input yields the empty set.
    """
    eta = np.asarray(indicators, dtype=float)
    ids = np.arange(len(eta)) if leaf_ids is None else np.asarray(leaf_ids)
    if not 0.0 < theta < 1.0:
        raise ValueError("theta must lie in (0, 1)")
    sq = eta * eta
    total = math.fsum(sq)
    if total == 0.0:
        return set()
    order = np.lexsort((ids, -sq))
    target = theta * total
    acc = before = 0.0
    marked = []
    for k in order:
        marked.append(k)
        before, acc = acc, acc + sq[k]
        if acc >= target:
            break
    # minimality: dropping the last (smallest) member falls short
    assert before < target
    return {ids[k].item() for k in marked}


def fit_rate(records: Iterable, quantity: str | Callable = "energy_error") -> float:
    """Negated least-squares slope of ln(quantity) against ln(ndof) over the asymptotic window.

    The window is the second half of the records, with at least 4 points.
    """
    records = list(records)
    if len(records) < 4:
        raise InsufficientDataError(f"rate fit needs at least 4 records, got {len(records)}")
    get = quantity if callable(quantity) else (lambda r: getattr(r, quantity))
    window = records[-max(math.ceil(len(records) / 2), 4):]
    n = np.log([r.ndof for r in window])
    q = np.log([get(r) for r in window])
    slope = np.polyfit(n, q, 1)[0]
    return float(-slope)


def run_afem(problem: ProblemData, config: AfemConfig, mesh: QuadtreeMesh,
             energy_norm: float | None = None,
             callback: Callable | None = None) -> AfemResult:
    """Adaptive loop on ``mesh`` (refined in place).

    Stops when the relative energy error drops below the configured tolerance,
    or, without an exact gradient, when ``eta_hat / eta_hat_0`` does. The
    callback receives ``(record, solution, indicators)`` after each iteration.
    """
    has_exact = problem.exact_grad is not None
    if has_exact and energy_norm is None:
        raise ValueError("energy_norm is required when the exact gradient is known")
    records: list[ConvergenceRecord] = []
    eta0 = None
    while True:
        t0 = time.perf_counter()
        try:
            sol = assemble_and_solve(mesh, problem, solver=config.solver)
        except QuadfluxError as exc:
            return AfemResult(records, mesh, "failed", str(exc))
        top = sol.top
        beta = problem.beta_on(top)
        flux = recover_flux(sol, beta)
        ind = compute_indicators(sol, flux, problem)
        eta_hat, eta_res = aggregate(ind)
        osc = total_oscillation(ind)
        if has_exact:
            err = math.sqrt(math.fsum(energy_error_sq(top, sol.values, problem)))
            rel = err / energy_norm if energy_norm > 0 else err
        else:
            err = math.nan
            eta0 = eta_hat if eta0 is None else eta0
            rel = eta_hat / eta0 if eta0 > 0 else 0.0
        try:
            eff_hat, eff_res = effectivity(eta_hat, err), effectivity(eta_res, err)
        except UndefinedEffectivity:
            eff_hat = eff_res = math.nan
        done = rel <= config.stop_relative_error or eta_hat == 0.0
        marked = set() if done else dorfler_mark(ind.eta_hat_sq ** 0.5, config.theta, top.leaf_ids)
        loc = ind.local_efficiency()
        rec = ConvergenceRecord(
            iter=len(records), ndof=top.n_free, energy_error=err, eta_hat=eta_hat, eta_res=eta_res,
            eff_hat=eff_hat, eff_res=eff_res, n_marked=len(marked),
            max_irregularity=top.irregularity(), rel_error=rel, osc=osc,
            trace_mismatch=trace_mismatch(flux, sol, beta), div_defect=divergence_defect(flux),
            local_eff_max=float(np.max(loc[np.isfinite(loc)], initial=0.0)),
            reliability=err / (eta_hat + osc) if eta_hat + osc > 0 else math.nan,
        )
        rec.wall_ms = (time.perf_counter() - t0) * 1e3
        records.append(rec)
        if callback is not None:
            callback(rec, sol, ind)
        if done:
            return AfemResult(records, mesh, "converged")
        if len(records) >= config.max_iterations:
            return AfemResult(records, mesh, "max_iterations")
        if top.n_free >= config.max_dofs:
            return AfemResult(records, mesh, "budget")
        try:
            mesh.refine(marked, cap=config.cap)
        except QuadfluxError as exc:
            return AfemResult(records, mesh, "failed", str(exc))


def error_at_dofs(records, ndof: float, quantity: str = "rel_error") -> float:
    """Log-log interpolation of a record quantity at a given DoF count."""
    n = np.array([r.ndof for r in records], dtype=float)
    q = np.array([getattr(r, quantity) for r in records], dtype=float)
    if not n[0] <= ndof <= n[-1]:
        raise ValueError(f"{ndof} DoFs is outside the recorded range [{n[0]:g}, {n[-1]:g}]")
    return float(np.exp(np.interp(np.log(ndof), np.log(n), np.log(q))))
