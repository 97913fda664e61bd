"""Consensus ADMM over the agents of a local design.

The forecast-set parameters ``(y, z)`` are the only columns shared
between agents.  Each agent keeps a private copy ``beta_i`` of the shared
parameters it touches; a coordinator holds the global vector ``alpha``
and only ever sees the copies and the dual variables, never an agent's
rows or costs.
"""

from __future__ import annotations

import csv
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .lp import LinearProgram, SolverError
from .lp.qp import solve_qp
from .model import DesignConfig, Mode, NetworkSpec
from .reformulate import build

log = logging.getLogger(__name__)


class AdmmNotConverged(RuntimeError):
    def __init__(self, message: str, history: list):
        super().__init__(message)
        self.history = history


@dataclass
class ConsensusLayout:
    """Global shared parameters and the (overlapping) chunk each agent owns a copy of."""

    names: list
    chunks: dict  # agent -> indices into alpha
    rho: float = 0.1

    def __post_init__(self):
        n = len(self.names)
        seen = np.zeros(n, dtype=bool)
        for idx in self.chunks.values():
            idx = np.asarray(idx)
            if len(idx) and (idx.min() < 0 or idx.max() >= n):
                raise ValueError("chunk index out of range")
            seen[idx] = True
        if not seen.all():
            raise ValueError("every global index must belong to at least one chunk")

    @property
    def n(self) -> int:
        return len(self.names)

    def counts(self) -> np.ndarray:
        c = np.zeros(self.n)
        for idx in self.chunks.values():
            np.add.at(c, idx, 1.0)
        return c


@dataclass
class AdmmState:
    beta: dict
    gamma: dict
    alpha: np.ndarray
    primal: list = field(default_factory=list)
    dual: list = field(default_factory=list)
    objective: list = field(default_factory=list)

    @property
    def k(self) -> int:
        return len(self.primal)


class LocalProblem:
    """Agent ``i``'s share of the compiled LP with the shared columns as ``beta``.

    ``J_i(beta) = min c_i @ w  s.t.  rows_i(w, beta) feasible``.
    """

    def __init__(self, agent: int, lp: LinearProgram, own: np.ndarray, shared: np.ndarray):
        self.agent = agent
        self._own = own
        self._shared = shared
        cols = np.concatenate([own, shared])
        A_ub = lp.A_ub[lp.ub_owner == agent]
        A_eq = lp.A_eq[lp.eq_owner == agent]
        outside = np.setdiff1d(np.arange(lp.n), cols)
        if (A_ub[:, outside].nnz if len(outside) else 0) or (A_eq[:, outside].nnz if len(outside) else 0):
            raise ValueError(f"rows of agent {agent} touch another agent's columns")
        self._A_ub = A_ub[:, cols]
        self._b_ub = lp.b_ub[lp.ub_owner == agent]
        self._A_eq = A_eq[:, cols]
        self._b_eq = lp.b_eq[lp.eq_owner == agent]
        self._c = np.concatenate([lp.c[own], np.zeros(len(shared))])
        self._lb = lp.lb[cols]
        self._ub = lp.ub[cols]
        self.w = np.zeros(len(own))
        self.y = None  # multipliers of the last prox solve
        self._rows = None

    @property
    def dim(self) -> int:
        return len(self._shared)

    def _constraints(self):
        if self._rows is None:
            self._rows = self._stack()
        return self._rows

    def _stack(self):
        n = len(self._c)
        bounded = np.flatnonzero(np.isfinite(self._lb) | np.isfinite(self._ub))
        A = sp.vstack([self._A_ub, self._A_eq, sp.eye(n, format="csr")[bounded]], format="csc")
        l = np.concatenate([np.full(len(self._b_ub), -np.inf), self._b_eq, self._lb[bounded]])
        u = np.concatenate([self._b_ub, self._b_eq, self._ub[bounded]])
        return A, l, u

    def prox(self, gamma: np.ndarray, target: np.ndarray, rho: float, eps: float = 1e-10):
        """``argmin J_i(beta) + gamma @ beta + rho/2 ||beta - target||^2``; returns ``(beta, J_i)``."""
        n_own = len(self._own)
        n = n_own + self.dim
        P = sp.diags(np.concatenate([np.zeros(n_own), np.full(self.dim, rho)]), format="csc")
        q = self._c + np.concatenate([np.zeros(n_own), gamma - rho * target])
        A, l, u = self._constraints()
        res = solve_qp(P, q, A, l, u, eps=eps)
        if res.status != "optimal":
            raise SolverError(f"agent {self.agent}: prox step ended with status {res.status}")
        self.w = res.x[:n_own]
        self.y = res.y
        return res.x[n_own:], float(self._c[:n_own] @ res.x[:n_own])

    def kkt_residual(self, gamma, target, rho, beta) -> float:
        """Largest KKT violation of ``(w, beta)`` with the last prox multipliers.

        Covers stationarity, feasibility, multiplier signs and complementary
        slackness of ``min c@w + gamma@beta + rho/2 ||beta - target||^2``.
        """
        n_own = len(self._own)
        x = np.concatenate([self.w, beta])
        A, l, u = self._constraints()
        y = self.y
        grad = self._c + np.concatenate([np.zeros(n_own), gamma + rho * (beta - target)])
        Ax = A @ x
        up, lo = np.maximum(y, 0.0), np.maximum(-y, 0.0)
        gap_u = np.where(np.isfinite(u), u - Ax, 0.0)
        gap_l = np.where(np.isfinite(l), Ax - l, 0.0)
        parts = [
            np.abs(grad + A.T @ y),
            np.maximum(l - Ax, 0.0), np.maximum(Ax - u, 0.0),
            np.where(np.isfinite(u), 0.0, up), np.where(np.isfinite(l), 0.0, lo),
            np.abs(up * gap_u), np.abs(lo * gap_l),
        ]
        return float(max(np.max(p, initial=0.0) for p in parts))


def decompose(net: NetworkSpec, cfg: DesignConfig, rho: float = 0.1):
    """Compile the local design and split it into agent problems and a layout."""
    if not Mode(cfg.mode) == Mode.LOCAL_RECT:
        raise ValueError("consensus ADMM is implemented for the rectangular local design")
    comp = build(net, cfg)
    lp = comp.lp
    shared = np.flatnonzero(lp.col_owner == -1)
    names = [lp.names[k] for k in shared]
    where = {int(k): g for g, k in enumerate(shared)}
    problems, chunks = {}, {}
    for i in net.ids:
        own = np.flatnonzero(lp.col_owner == i)
        rows = sp.vstack([lp.A_ub[lp.ub_owner == i], lp.A_eq[lp.eq_owner == i]], format="csc")
        touched = shared[np.diff(rows[:, shared].indptr) > 0] if len(shared) else shared
        chunks[i] = np.array([where[int(k)] for k in touched], dtype=int)
        problems[i] = LocalProblem(i, lp, own, touched)
    layout = ConsensusLayout(names, chunks, rho)
    return comp, problems, layout


def local_update(problem: LocalProblem, gamma: np.ndarray, alpha_chunk: np.ndarray, rho: float):
    return problem.prox(gamma, alpha_chunk, rho)


def global_update(betas: dict, gammas: dict, layout: ConsensusLayout) -> np.ndarray:
    """Average ``beta_i + gamma_i / rho`` over the chunks holding each global index."""
    acc = np.zeros(layout.n)
    for i, idx in layout.chunks.items():
        np.add.at(acc, idx, betas[i] + gammas[i] / layout.rho)
    return acc / layout.counts()


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("POLICYNET_THREADS", "1")))
    except ValueError:
        return 1


@dataclass
class AdmmResult:
    alpha: np.ndarray
    objective: float
    state: AdmmState
    layout: ConsensusLayout
    converged: bool
    y: dict
    z: dict

    @property
    def history(self) -> list:
        s = self.state
        return [{"iter": k + 1, "objective": s.objective[k], "primal_res": s.primal[k],
                 "dual_res": s.dual[k]} for k in range(s.k)]


def run(net: NetworkSpec, cfg: DesignConfig, rho: float = 0.1, tol: float = 1e-6,
        max_iters: int = 200, *, raise_on_failure: bool = False) -> AdmmResult:
    """Consensus ADMM from a zero start.

    Stops when ``max(max_i ||beta_i - alpha_i||_inf, rho ||alpha^+ - alpha||_inf) <= tol``.
    """
    comp, problems, layout = decompose(net, cfg, rho)
    alpha = np.zeros(layout.n)
    gamma = {i: np.zeros(len(idx)) for i, idx in layout.chunks.items()}
    state = AdmmState({i: np.zeros(len(idx)) for i, idx in layout.chunks.items()}, gamma, alpha)
    converged = False
    workers = _workers()
    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    try:
        for k in range(max_iters):
            jobs = {i: (problems[i], state.gamma[i], state.alpha[layout.chunks[i]], rho)
                    for i in net.ids}
            if pool:
                done = dict(zip(jobs, pool.map(lambda a: local_update(*a), jobs.values())))
            else:
                done = {i: local_update(*a) for i, a in jobs.items()}
            betas = {i: b for i, (b, _) in done.items()}
            objective = float(sum(v for _, v in done.values()))
            new_alpha = global_update(betas, state.gamma, layout)
            primal = 0.0
            for i, idx in layout.chunks.items():
                diff = betas[i] - new_alpha[idx]
                state.gamma[i] = state.gamma[i] + rho * diff
                primal = max(primal, float(np.max(np.abs(diff), initial=0.0)))
            dual = rho * float(np.max(np.abs(new_alpha - state.alpha), initial=0.0))
            state.alpha = new_alpha
            state.beta = betas
            state.primal.append(primal)
            state.dual.append(dual)
            state.objective.append(objective)
            log.debug("admm %d: obj %.10g primal %.3g dual %.3g", k + 1, objective, primal, dual)
            if max(primal, dual) <= tol:
                converged = True
                break
    finally:
        if pool:
            pool.shutdown()
    if not converged and raise_on_failure:
        raise AdmmNotConverged(f"no convergence in {max_iters} iterations", state.primal)
    y, z = {}, {}
    lp = comp.lp
    shared = np.flatnonzero(lp.col_owner == -1)
    value = np.zeros(lp.n)
    value[shared] = state.alpha
    for j, con in comp.contracts.items():
        y[j] = value[con.y - 1]
        z[j] = value[con.z - 1]
    return AdmmResult(state.alpha, state.objective[-1], state, layout, converged, y, z)


def write_log(result: AdmmResult, path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "objective", "primal_res", "dual_res"])
        for row in result.history:
            w.writerow([row["iter"], f"{row['objective']:.12g}", f"{row['primal_res']:.6e}",
                        f"{row['dual_res']:.6e}"])
    return path
