from .cg import CGSolver
from .driver import ResultRecord, RunConfig, TimeBreakdown, WORKLOADS, digest, run
from .jacobi import Jacobi2D, decompose
from .presets import DEFAULT_ITERS, PRESETS, InputPreset, resolve_input

__all__ = [
    "CGSolver", "Jacobi2D", "ResultRecord", "RunConfig", "TimeBreakdown", "WORKLOADS",
    "DEFAULT_ITERS", "PRESETS", "InputPreset", "decompose", "digest", "resolve_input", "run",
]
