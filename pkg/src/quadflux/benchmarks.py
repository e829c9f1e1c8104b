"""Exact solutions, coefficients and seed meshes of the test problems."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np

from .errors import SingularPointError
from .fem import ProblemData, energy_error_sq
from .mesh import QuadtreeMesh

BENCHMARKS = ("lshape", "wavefront", "kellogg", "manufactured")


def _polar(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    r = np.hypot(x, y)
    theta = np.mod(np.arctan2(y, x), 2.0 * np.pi)
    return r, theta


def _check_origin(r):
    if np.any(r == 0.0):
        raise SingularPointError("gradient is unbounded at the origin")


# -- L-shape -------------------------------------------------------------------

def lshape_u(x, y):
    r, t = _polar(x, y)
    return r ** (2.0 / 3.0) * np.sin(2.0 * t / 3.0)


def lshape_grad(x, y):
    r, t = _polar(x, y)
    _check_origin(r)
    c = (2.0 / 3.0) * r ** (-1.0 / 3.0)
    return -c * np.sin(t / 3.0), c * np.cos(t / 3.0)


# -- Kellogg -------------------------------------------------------------------

@dataclass(frozen=True)
class KelloggParams:
    gamma: float = 0.1
    R: float = 161.4476387975881
    rho: float = math.pi / 4
    delta: float = -14.92256510455152

    def branches(self):
        """(amplitude, phase) per quadrant: mu = amplitude * cos((theta - phase) * gamma)."""
        g, rho, d = self.gamma, self.rho, self.delta
        pi = math.pi
        return (
            (math.cos((pi / 2 - d) * g), pi / 2 - rho),
            (math.cos(rho * g), pi - d),
            (math.cos(d * g), pi + rho),
            (math.cos((pi / 2 - rho) * g), 3 * pi / 2 + d),
        )

    def mu(self, theta, quadrant=None):
        """Angular factor; ``quadrant`` forces a branch (used for continuity checks)."""
        theta = np.asarray(theta, dtype=float)
        q = self._quadrant(theta) if quadrant is None else np.full(theta.shape, quadrant)
        amp, phase = self._table(q)
        return amp * np.cos((theta - phase) * self.gamma)

    def dmu(self, theta, quadrant=None):
        theta = np.asarray(theta, dtype=float)
        q = self._quadrant(theta) if quadrant is None else np.full(theta.shape, quadrant)
        amp, phase = self._table(q)
        return -self.gamma * amp * np.sin((theta - phase) * self.gamma)

    def _table(self, q):
        tab = np.array(self.branches())
        return tab[q, 0], tab[q, 1]

    @staticmethod
    def _quadrant(theta):
        return np.minimum((theta // (0.5 * np.pi)).astype(int), 3)

    def u(self, x, y):
        r, t = _polar(x, y)
        return r ** self.gamma * self.mu(t)

    def grad(self, x, y):
        r, t = _polar(x, y)
        _check_origin(r)
        m, dm = self.mu(t), self.dmu(t)
        s = r ** (self.gamma - 1.0)
        c, sn = np.cos(t), np.sin(t)
        return s * (self.gamma * m * c - dm * sn), s * (self.gamma * m * sn + dm * c)

    def beta(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        odd = (x > 0) == (y > 0)  # first or third quadrant
        return np.where(odd, self.R, 1.0)


# -- wave front ------------------------------------------------------------------

@dataclass(frozen=True)
class WavefrontParams:
    alpha: float = 100.0
    r0: float = 0.7
    center: tuple = (-0.05, -0.05)

    def radius(self, x, y):
        return np.hypot(np.asarray(x) - self.center[0], np.asarray(y) - self.center[1])

    def u(self, x, y):
        return np.arctan(self.alpha * (self.radius(x, y) - self.r0))

    def du(self, r):
        s = r - self.r0
        return self.alpha / (1.0 + (self.alpha * s) ** 2)

    def d2u(self, r):
        s = r - self.r0
        return -2.0 * self.alpha ** 3 * s / (1.0 + (self.alpha * s) ** 2) ** 2

    def grad(self, x, y):
        r = self.radius(x, y)
        d = self.du(r) / r
        return d * (np.asarray(x) - self.center[0]), d * (np.asarray(y) - self.center[1])

    def source(self, x, y):
        r = self.radius(x, y)
        return -(self.d2u(r) + self.du(r) / r)


# -- smooth manufactured -------------------------------------------------------------

def manufactured_u(x, y):
    return np.sin(np.pi * np.asarray(x)) * np.sin(np.pi * np.asarray(y))


def manufactured_grad(x, y):
    x = np.asarray(x)
    y = np.asarray(y)
    return (np.pi * np.cos(np.pi * x) * np.sin(np.pi * y),
            np.pi * np.sin(np.pi * x) * np.cos(np.pi * y))


def manufactured_f(x, y):
    return 2.0 * np.pi ** 2 * manufactured_u(x, y)


@dataclass
class BenchmarkSpec:
    name: str
    make_problem: Callable[[], ProblemData] = field(repr=False)
    make_mesh: Callable[[], QuadtreeMesh] = field(repr=False)
    stop_relative_error: float
    # mesh used to integrate the exact energy norm (with the singular rule if needed)
    norm_mesh: Callable[[], QuadtreeMesh] = field(repr=False)

    def problem(self) -> ProblemData:
        return self.make_problem()

    def seed_mesh(self) -> QuadtreeMesh:
        return self.make_mesh()

    def energy_norm(self) -> float:
        return _energy_norm(self.name)


_KELLOGG = KelloggParams()
_WAVE = WavefrontParams()


def _problems():
    return {
        "lshape": lambda: ProblemData(f=0.0, beta=1.0, g=lshape_u, exact_u=lshape_u,
                                      exact_grad=lshape_grad, singular_points=((0.0, 0.0),),
                                      name="lshape"),
        "kellogg": lambda: ProblemData(f=0.0, beta=_KELLOGG.beta, g=_KELLOGG.u, exact_u=_KELLOGG.u,
                                       exact_grad=_KELLOGG.grad, singular_points=((0.0, 0.0),),
                                       name="kellogg"),
        "wavefront": lambda: ProblemData(f=_WAVE.source, beta=1.0, g=_WAVE.u, exact_u=_WAVE.u,
                                         exact_grad=_WAVE.grad, name="wavefront"),
        "manufactured": lambda: ProblemData(f=manufactured_f, beta=1.0, g=0.0, exact_u=manufactured_u,
                                            exact_grad=manufactured_grad, name="manufactured"),
    }


def get_benchmark(name: str) -> BenchmarkSpec:
    if name not in BENCHMARKS:
        raise KeyError(f"unknown benchmark {name!r}; choose from {', '.join(BENCHMARKS)}")
    make = _problems()[name]
    if name == "lshape":
        return BenchmarkSpec(name, make, lambda: QuadtreeMesh.lshape(2), 0.01,
                             lambda: QuadtreeMesh.lshape(3))
    if name == "kellogg":
        return BenchmarkSpec(name, make, lambda: QuadtreeMesh.square(2), 0.05,
                             lambda: QuadtreeMesh.square(3))
    if name == "wavefront":
        # the layer has width ~1/alpha, so the norm mesh resolves it with ~2.5 cells
        return BenchmarkSpec(name, make, lambda: QuadtreeMesh.unit_square(3), 0.05,
                             lambda: QuadtreeMesh.unit_square(8))
    return BenchmarkSpec(name, make, lambda: QuadtreeMesh.unit_square(2), 0.01,
                         lambda: QuadtreeMesh.unit_square(4))


@lru_cache(maxsize=None)
def _energy_norm(name: str) -> float:
    bench = get_benchmark(name)
    top = bench.norm_mesh().topology()
    per_leaf = energy_error_sq(top, np.zeros(top.n_nodes), bench.problem())
    return math.sqrt(math.fsum(per_leaf))


def exact_eval(name: str, x, y):
    """(u, grad u) of a benchmark at points (x, y)."""
    p = get_benchmark(name).problem()
    return p.exact_u(x, y), p.exact_grad(x, y)


def source_term(name: str, x, y):
    return get_benchmark(name).problem().f(x, y)
