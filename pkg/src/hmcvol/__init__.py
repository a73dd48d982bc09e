"""Riemannian Hamiltonian Monte Carlo on polytopes with a hybrid Lewis-weight barrier."""

from .barrier import BarrierParams, MetricState, default_p, metric, minimize_phi, phi
from .cooling import CoolingConfig, CoolingTrace, estimate_volume, sample_anneal, schedule
from .dynamics import PhaseState, TrajectoryResult, hamiltonian, integrate
from .lewis import LewisState, lewis_weights
from .polytope import (InteriorPoint, Polytope, box, cross_polytope, cube, find_interior_point,
                       load_polytope, membership, random_polytope, save_polytope, simplex)
from .sampler import ChainConfig, ChainStats, diagnostics, run_chain, step_size

__version__ = "0.1.0"

__all__ = [
    "BarrierParams", "MetricState", "default_p", "metric", "minimize_phi", "phi",
    "CoolingConfig", "CoolingTrace", "estimate_volume", "sample_anneal", "schedule",
    "PhaseState", "TrajectoryResult", "hamiltonian", "integrate",
    "LewisState", "lewis_weights",
    "InteriorPoint", "Polytope", "box", "cross_polytope", "cube", "find_interior_point",
    "load_polytope", "membership", "random_polytope", "save_polytope", "simplex",
    "ChainConfig", "ChainStats", "diagnostics", "run_chain", "step_size",
]
