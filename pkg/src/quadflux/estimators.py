"""Recovery-based and residual-based element indicators."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import UndefinedEffectivity
from .fem import DiscreteSolution, ProblemData, leaf_gradient
from .flux import (RecoveredFlux, edge_points, normal_component, project_traces, remainder_traces,
                   scaled_gradient_mean, stability_seminorm_sq, coeffs_from_gauss)
from .mesh import MeshTopology
from .quadrature import gauss_1d, rect_points

_GX, _GW = gauss_1d(2)


@dataclass
class ElementIndicators:
    """Per-leaf indicators, ordered like ``MeshTopology.leaf_ids``."""

    leaf_ids: np.ndarray
    eta_f_hat: np.ndarray
    eta_s_hat: np.ndarray
    res_bulk_sq: np.ndarray
    res_jump_sq: np.ndarray  # with the 1/2 weight of shared sub-edges
    osc: np.ndarray

    @property
    def eta_hat_sq(self) -> np.ndarray:
        return self.eta_f_hat ** 2 + self.eta_s_hat ** 2

    @property
    def eta_res_sq(self) -> np.ndarray:
        return self.res_bulk_sq + self.res_jump_sq

    def local_efficiency(self) -> np.ndarray:
        """``eta_hat_K / (osc_K + eta_R,K + eta_J,K)``; the jump part is taken without the 1/2."""
        denom = self.osc + np.sqrt(self.res_bulk_sq) + np.sqrt(2.0 * self.res_jump_sq)
        num = np.sqrt(self.eta_hat_sq)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(denom > 0, num / denom, np.where(num > 0, np.inf, 0.0))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["leaf", "eta_f_hat", "eta_s_hat", "res_bulk_sq", "res_jump_sq", "osc"])
            for row in zip(self.leaf_ids, self.eta_f_hat, self.eta_s_hat, self.res_bulk_sq,
                           self.res_jump_sq, self.osc):
                w.writerow([int(row[0])] + [repr(float(v)) for v in row[1:]])


def combined_traces(flux: RecoveredFlux, solution: DiscreteSolution, beta: np.ndarray):
    """Per-incidence traces of ``sigma_T + beta_K grad u_T|_K`` (normal component)."""
    top = flux.top
    e = top.inc_edge
    x, y, _ = edge_points(top, e)
    k = top.inc_leaf
    gx, gy = leaf_gradient(top, solution.values, np.broadcast_to(k[:, None], x.shape), x, y)
    c0, c1 = coeffs_from_gauss(beta[k][:, None] * normal_component(top, e, gx, gy), top.se_length[e])
    return flux.c0[e] + c0, flux.c1[e] + c1


def eta_f_hat(flux: RecoveredFlux, solution: DiscreteSolution, beta: np.ndarray) -> np.ndarray:
    """``beta_K^(-1/2) |K|^(1/2) |Pi sigma_T + Pi(beta_K grad u_T)|`` per leaf."""
    top = flux.top
    c = flux.projection() + scaled_gradient_mean(solution, beta)
    return np.sqrt(top.area / beta) * np.hypot(c[:, 0], c[:, 1])


def eta_s_hat(flux: RecoveredFlux, solution: DiscreteSolution, beta: np.ndarray) -> np.ndarray:
    """``beta_K^(-1/2) S_K((I - Pi) tau)^(1/2)`` with ``tau = sigma_T + beta_K grad u_T``."""
    top = flux.top
    ic0, ic1 = combined_traces(flux, solution, beta)
    proj = project_traces(top, ic0, ic1)
    r0, r1 = remainder_traces(top, ic0, ic1, proj)
    return np.sqrt(stability_seminorm_sq(top, r0, r1) / beta)


def eta_res(solution: DiscreteSolution, f, beta: np.ndarray):
    """(bulk^2, jump^2) per leaf of the residual indicator.

    The bulk term uses ``div(beta_K grad u_T) = 0`` for bilinears on
    rectangles; the jump term sums over interior sub-edges only.
    """
    top = solution.top
    b = top.bounds
    X, Y, W = rect_points(b[:, 0], b[:, 1], b[:, 2], b[:, 3], 3)
    fsq = (np.asarray(f(X, Y)) ** 2 * W).sum(axis=1)
    bulk = top.diameter ** 2 * fsq / beta

    inner = np.flatnonzero(top.se_interior)
    mi, pl = top.se_minus[inner], top.se_plus[inner]
    x, y, _ = edge_points(top, inner)
    gm = leaf_gradient(top, solution.values, np.broadcast_to(mi[:, None], x.shape), x, y)
    gp = leaf_gradient(top, solution.values, np.broadcast_to(pl[:, None], x.shape), x, y)
    jump = (beta[pl][:, None] * normal_component(top, inner, *gp)
            - beta[mi][:, None] * normal_component(top, inner, *gm))
    h = top.se_length[inner]
    per_edge = 0.5 * h * h * ((jump * jump) @ _GW) / (beta[mi] + beta[pl])
    jump_sq = (np.bincount(mi, weights=per_edge, minlength=top.n_leaves)
               + np.bincount(pl, weights=per_edge, minlength=top.n_leaves))
    return bulk, jump_sq


def oscillation(top: MeshTopology, f, beta: np.ndarray) -> np.ndarray:
    """``beta_K^(-1/2) h_K ||f - mean_K f||_K`` per leaf (3x3 Gauss)."""
    b = top.bounds
    X, Y, W = rect_points(b[:, 0], b[:, 1], b[:, 2], b[:, 3], 3)
    fv = np.asarray(f(X, Y), dtype=float)
    mean = (fv * W).sum(axis=1) / top.area
    dev = ((fv - mean[:, None]) ** 2 * W).sum(axis=1)
    return top.diameter * np.sqrt(dev / beta)


def compute_indicators(solution: DiscreteSolution, flux: RecoveredFlux,
                       problem: ProblemData) -> ElementIndicators:
    top = solution.top
    beta = problem.beta_on(top)
    bulk, jump = eta_res(solution, problem.f, beta)
    return ElementIndicators(
        leaf_ids=np.asarray(top.leaf_ids),
        eta_f_hat=eta_f_hat(flux, solution, beta),
        eta_s_hat=eta_s_hat(flux, solution, beta),
        res_bulk_sq=bulk,
        res_jump_sq=jump,
        osc=oscillation(top, problem.f, beta),
    )


def _ordered_sum(values, leaf_ids) -> float:
    """Correctly rounded sum, taken in leaf-id order."""
    order = np.argsort(leaf_ids, kind="stable")
    return math.fsum(np.asarray(values, dtype=float)[order])


def aggregate(ind: ElementIndicators) -> tuple[float, float]:
    """Global (eta_hat, eta_res) as square roots of sums of squares."""
    return (math.sqrt(_ordered_sum(ind.eta_hat_sq, ind.leaf_ids)),
            math.sqrt(_ordered_sum(ind.eta_res_sq, ind.leaf_ids)))


def total_oscillation(ind: ElementIndicators) -> float:
    return math.sqrt(_ordered_sum(ind.osc ** 2, ind.leaf_ids))


def effectivity(eta: float, energy_error: float) -> float:
    if energy_error == 0:
        raise UndefinedEffectivity("effectivity index is undefined for a zero error")
    return eta / energy_error
