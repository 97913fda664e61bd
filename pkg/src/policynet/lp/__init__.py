"""Linear programs: container, solvers, QP routine and MPS interchange."""

from .mps import dumps, export, read
from .program import LinearProgram
from .qp import QPResult, solve_qp
from .solve import Solution, SolverError, Status, residuals, solve

__all__ = [
    "LinearProgram", "Solution", "SolverError", "Status", "QPResult",
    "solve", "solve_qp", "residuals", "export", "dumps", "read",
]
