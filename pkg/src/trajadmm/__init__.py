"""Parallel piecewise-polynomial trajectory optimization via consensus ADMM."""

import os as _os

# Allow worker counts above the core count (the engine accepts any worker
# number and results are bit-identical); must be set before numba loads.
_os.environ.setdefault("NUMBA_NUM_THREADS", str(max(_os.cpu_count() or 1, 8)))

from .basis import BasisConfig, basis_row, boundary_map, deriv_stack, gram_matrix, kron_expand
from .problem import (
    BoundaryCondition,
    Polytope,
    ProblemSpec,
    SegmentMatrices,
    SegmentSpec,
    SolverConfig,
    ValidationReport,
    build_segment_matrices,
    corridor_rows,
    sample_times,
    validate_problem,
    velocity_rows,
)
from .admm import (
    ConsensusState,
    FactorizationError,
    OptimizeResult,
    RhoState,
    SegmentState,
    SegmentStates,
    TraceRow,
    optimize,
)
from .trajectory import Trajectory
from .oracle import (
    OracleError,
    active_set_qp,
    kkt_solve,
    quintic_reference,
    similarity_metric,
)

__version__ = "0.1.0"

__all__ = [
    "BasisConfig",
    "BoundaryCondition",
    "ConsensusState",
    "FactorizationError",
    "OptimizeResult",
    "OracleError",
    "Polytope",
    "ProblemSpec",
    "RhoState",
    "SegmentMatrices",
    "SegmentSpec",
    "SegmentState",
    "SegmentStates",
    "SolverConfig",
    "TraceRow",
    "Trajectory",
    "ValidationReport",
    "active_set_qp",
    "basis_row",
    "boundary_map",
    "build_segment_matrices",
    "corridor_rows",
    "deriv_stack",
    "gram_matrix",
    "kkt_solve",
    "kron_expand",
    "optimize",
    "quintic_reference",
    "sample_times",
    "similarity_metric",
    "validate_problem",
    "velocity_rows",
]
