"""Compilation of robust design problems into linear programs."""

from ..lp import LinearProgram
from .build import Compiled, Contract, build, epigraph_norm
from .expr import AffineExpr
from .registry import Decisions, Uncertainty
from .robust import Rows, dualize, expand_vertices, identically_zero
from .solution import (DesignInfeasible, DesignResult, bcd_flexible, certificates,
                       identity_Y, open_loop_Y, solve_compiled, solve_design,
                       tightest_contracts)


def rollout(net, cfg, i):
    """Symbolic state trajectory of agent ``i`` (one expression per stage)."""
    return build(net, cfg, check=False).x[i]


__all__ = [
    "AffineExpr", "Compiled", "Contract", "Decisions", "DesignInfeasible", "DesignResult",
    "LinearProgram", "Rows", "Uncertainty", "bcd_flexible", "build", "certificates",
    "dualize", "epigraph_norm", "expand_vertices", "identically_zero", "identity_Y",
    "open_loop_Y", "rollout", "solve_compiled", "solve_design", "tightest_contracts",
]
