"""LP solve entry point and solution type."""

from __future__ import annotations

import enum
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from . import simplex
from .program import LinearProgram

log = logging.getLogger(__name__)


class Status(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    ITER_LIMIT = "iter_limit"


@dataclass
class Solution:
    """Result of an LP solve.

    Dual values are sensitivities of the optimal value: ``dual_ub`` (<= 0)
    and ``dual_eq`` for the rows, ``dual_lb``/``dual_ubnd`` for finite bounds.
    """

    status: Status
    objective: float = np.nan
    x: np.ndarray | None = None
    dual_ub: np.ndarray | None = None
    dual_eq: np.ndarray | None = None
    dual_lb: np.ndarray | None = None
    dual_ubnd: np.ndarray | None = None
    iterations: int = 0
    message: str = ""
    diagnostics: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == Status.OPTIMAL

    @property
    def dual(self) -> np.ndarray:
        return np.concatenate([self.dual_ub, self.dual_eq])

    def dual_objective(self, lp: LinearProgram) -> float:
        lo = np.where(np.isfinite(lp.lb), lp.lb, 0.0)
        hi = np.where(np.isfinite(lp.ub), lp.ub, 0.0)
        return float(lp.b_ub @ self.dual_ub + lp.b_eq @ self.dual_eq
                     + lo @ self.dual_lb + hi @ self.dual_ubnd + lp.c0)


class SolverError(RuntimeError):
    """The LP could not be solved to optimality."""

    def __init__(self, message: str, solution: Solution | None = None):
        super().__init__(message)
        self.solution = solution


def residuals(lp: LinearProgram, sol: Solution) -> dict[str, float]:
    """Primal feasibility and complementary slackness residuals."""
    x = sol.x
    r_ub = lp.A_ub @ x - lp.b_ub
    r_eq = lp.A_eq @ x - lp.b_eq
    primal = max(np.max(r_ub, initial=0.0), np.max(np.abs(r_eq), initial=0.0),
                 np.max(lp.lb - x, initial=0.0), np.max(x - lp.ub, initial=0.0))
    comp = np.max(np.abs(sol.dual_ub * r_ub), initial=0.0)
    fin_lo = np.isfinite(lp.lb)
    fin_hi = np.isfinite(lp.ub)
    comp = max(comp, np.max(np.abs(sol.dual_lb[fin_lo] * (x - lp.lb)[fin_lo]), initial=0.0),
               np.max(np.abs(sol.dual_ubnd[fin_hi] * (lp.ub - x)[fin_hi]), initial=0.0))
    reduced = lp.c - lp.A_ub.T @ sol.dual_ub - lp.A_eq.T @ sol.dual_eq - sol.dual_lb - sol.dual_ubnd
    return {"primal": float(primal), "complementarity": float(comp),
            "stationarity": float(np.max(np.abs(reduced), initial=0.0))}


def _solve_highs(lp: LinearProgram, tol: float, max_iters: int) -> Solution:
    bounds = np.column_stack([np.where(np.isfinite(lp.lb), lp.lb, -np.inf),
                              np.where(np.isfinite(lp.ub), lp.ub, np.inf)])
    options = {"primal_feasibility_tolerance": tol, "dual_feasibility_tolerance": tol,
               "maxiter": max_iters, "presolve": True}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = linprog(lp.c,
                      A_ub=lp.A_ub if lp.A_ub.shape[0] else None,
                      b_ub=lp.b_ub if lp.A_ub.shape[0] else None,
                      A_eq=lp.A_eq if lp.A_eq.shape[0] else None,
                      b_eq=lp.b_eq if lp.A_eq.shape[0] else None,
                      bounds=bounds, method="highs-ds", options=options)
    status = {0: Status.OPTIMAL, 1: Status.ITER_LIMIT, 2: Status.INFEASIBLE,
              3: Status.UNBOUNDED}.get(res.status, Status.ITER_LIMIT)
    iters = int(getattr(res, "nit", 0) or 0)
    if status != Status.OPTIMAL:
        return Solution(status, iterations=iters, message=res.message)
    m_ub, m_eq = lp.A_ub.shape[0], lp.A_eq.shape[0]
    d_ub = res.ineqlin.marginals if m_ub else np.zeros(0)
    d_eq = res.eqlin.marginals if m_eq else np.zeros(0)
    return Solution(Status.OPTIMAL, float(res.fun + lp.c0), np.asarray(res.x),
                    np.asarray(d_ub, float), np.asarray(d_eq, float),
                    np.asarray(res.lower.marginals, float), np.asarray(res.upper.marginals, float),
                    iters, res.message)


def _solve_simplex(lp: LinearProgram, tol: float, max_iters: int) -> Solution:
    status, x, duals, iters = simplex.revised_simplex(
        lp.c, lp.A_ub.toarray(), lp.b_ub, lp.A_eq.toarray(), lp.b_eq, lp.lb, lp.ub,
        tol=tol, max_iters=max_iters)
    if status != simplex.OPTIMAL:
        return Solution(Status(status), iterations=iters)
    return Solution(Status.OPTIMAL, float(lp.c @ x + lp.c0), x, duals["ub"], duals["eq"],
                    duals["lb"], duals["ubnd"], iters)


def solve(lp: LinearProgram, method: str = "highs", tol: float = 1e-9,
          max_iters: int = 1_000_000) -> Solution:
    """Solve ``lp``.

    ``method="highs"`` uses the HiGHS dual simplex shipped with scipy (the
    default, suited to compiled design problems); ``method="simplex"`` uses
    the dense revised simplex of this package, intended for small programs.
    """
    if method == "highs":
        sol = _solve_highs(lp, tol, max_iters)
    elif method == "simplex":
        sol = _solve_simplex(lp, tol, max_iters)
    else:
        raise ValueError(f"unknown LP method {method!r}")
    if sol.ok:
        sol.diagnostics = residuals(lp, sol)
        if sol.diagnostics["primal"] > 1e-6 * max(1.0, np.abs(lp.b_ub).max(initial=0.0)):
            log.warning("LP primal residual %.2e above tolerance", sol.diagnostics["primal"])
    return sol
