"""Multichannel mixer-limiter built on a per-frame quadratic program."""
from .engine import EngineConfig, MixerLimiter, assemble_frame_qp, frame_stream, mix_output, process
from .objective import AttenuationRates, build_objective, critical_point, secular_eigs
from .qp import QpProblem, QpSolution, SolverConfig, Status, solve
from .reduction import (ConstraintSet, PremixKind, build_premixer, cull_occluded, lp_supports,
                        presolve, reduce_problem)
from .window import ColaWindow, WindowSpec, design_window, validate_cola

__all__ = [
    "AttenuationRates", "ColaWindow", "ConstraintSet", "EngineConfig", "MixerLimiter",
    "PremixKind", "QpProblem", "QpSolution", "SolverConfig", "Status", "WindowSpec",
    "assemble_frame_qp", "build_objective", "build_premixer", "critical_point", "cull_occluded",
    "design_window", "frame_stream", "lp_supports", "mix_output", "presolve", "process",
    "reduce_problem", "secular_eigs", "solve", "validate_cola",
]
__version__ = "0.1.0"
