"""Adaptive bilinear finite elements on quadtrees with arbitrary hanging nodes,
with an H(div) flux recovery and the matching a posteriori error estimator."""

from .afem import AfemConfig, AfemResult, ConvergenceRecord, dorfler_mark, fit_rate, run_afem
from .benchmarks import BENCHMARKS, KelloggParams, get_benchmark
from .errors import (AssemblyError, InsufficientDataError, MeshError, NumericalFailure,
                     QuadfluxError, RefinementBudgetError, SingularPointError,
                     UndefinedEffectivity, UnsupportedOperation)
from .estimators import ElementIndicators, aggregate, compute_indicators, effectivity
from .fem import DiscreteSolution, ProblemData, assemble_and_solve, energy_error
from .flux import RecoveredFlux, gamma_weight, recover_flux
from .mesh import MeshTopology, QuadtreeMesh, classify_nodes, irregularity, refine

__version__ = "0.1.0"

__all__ = [
    "AfemConfig", "AfemResult", "ConvergenceRecord", "dorfler_mark", "fit_rate", "run_afem",
    "BENCHMARKS", "KelloggParams", "get_benchmark",
    "AssemblyError", "InsufficientDataError", "MeshError", "NumericalFailure", "QuadfluxError",
    "RefinementBudgetError", "SingularPointError", "UndefinedEffectivity", "UnsupportedOperation",
    "ElementIndicators", "aggregate", "compute_indicators", "effectivity",
    "DiscreteSolution", "ProblemData", "assemble_and_solve", "energy_error",
    "RecoveredFlux", "gamma_weight", "recover_flux",
    "MeshTopology", "QuadtreeMesh", "classify_nodes", "irregularity", "refine",
]
