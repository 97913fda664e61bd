"""Closed-loop evaluation: sampling, worst-case certificates and rolling horizon."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .lp import LinearProgram, SolverError, solve
from .model import DesignConfig, Mode, NetworkSpec, ordered_neighbors, topological_order
from .reformulate import DesignResult, solve_design
from .uncertainty import VERTEX_CAP, CapExceeded, EmptySetError, Polyhedron, vertices

log = logging.getLogger(__name__)

BURN_IN = 200
FIXED_POINT_TOL = 1e-9


# -- sampling -------------------------------------------------------------------

def _chebyshev_centre(p: Polyhedron) -> np.ndarray:
    norms = np.linalg.norm(p.W, axis=1)
    d = p.dim
    # max r  s.t.  W v - |W_k| r >= w
    c = np.zeros(d + 1)
    c[-1] = -1.0
    A = -np.hstack([p.W, -norms[:, None]])
    lp = LinearProgram(c, sp.csr_matrix(A), -p.w, sp.csr_matrix((0, d + 1)), np.zeros(0),
                       np.concatenate([np.full(d, -np.inf), [0.0]]), np.full(d + 1, np.inf),
                       [f"v{k}" for k in range(d)] + ["r"])
    sol = solve(lp)
    if not sol.ok:
        raise EmptySetError("cannot find an interior point")
    return sol.x[:d]


def sample(p: Polyhedron, seed, n: int | None = None) -> np.ndarray:
    """Point(s) of a bounded polyhedron, deterministic in ``seed``.

    Boxes are sampled uniformly; other sets by hit-and-run from the
    Chebyshev centre with a fixed burn-in.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    count = 1 if n is None else n
    if p.dim == 0:
        out = np.zeros((count, 0))
        return out[0] if n is None else out
    if p.status() != "ok":
        raise EmptySetError(f"cannot sample a set that is {p.status()}")
    if p.is_box():
        lo, hi = p.bounds()
        out = lo + (hi - lo) * rng.random((count, p.dim))
        return out[0] if n is None else out
    v = _chebyshev_centre(p)
    out = np.empty((count, p.dim))
    for k in range(BURN_IN + count):
        direction = rng.standard_normal(p.dim)
        direction /= np.linalg.norm(direction)
        a = p.W @ direction
        slack = p.W @ v - p.w  # >= 0
        with np.errstate(divide="ignore", invalid="ignore"):
            lim = -slack / a
        lo = np.max(lim[a > 1e-14], initial=-np.inf)
        hi = np.min(lim[a < -1e-14], initial=np.inf)
        if not (np.isfinite(lo) and np.isfinite(hi)):
            raise EmptySetError("set is unbounded along a sampled direction")
        v = v + rng.uniform(lo, hi) * direction if hi > lo else v
        if k >= BURN_IN:
            out[k - BURN_IN] = v
    return out[0] if n is None else out


def sample_realization(net: NetworkSpec, seed) -> dict:
    """Disturbances per agent, each ``(T, nxi)``."""
    rng = np.random.default_rng(seed)
    return {a.id: sample(a.Xi, rng).reshape(a.T, a.nxi) for a in net.agents}


# -- closed loop on a solved design ----------------------------------------------

@dataclass
class Trajectory:
    x: dict
    u: dict
    xi: dict
    cost: dict
    violation: dict = field(default_factory=dict)
    dynamics_residual: float = 0.0

    @property
    def total(self) -> float:
        return float(sum(self.cost.values()))


def _xi_vector(res: DesignResult, xi: dict) -> tuple[np.ndarray, np.ndarray]:
    """Uncertainty vector with the disturbances filled in and the mask of known entries."""
    unc = res.compiled.unc
    v = np.zeros(unc.n)
    known = np.zeros(unc.n, dtype=bool)
    for k, (kind, agent, t, comp) in enumerate(unc.coords):
        if kind == "xi":
            v[k] = xi[agent][t, comp]
            known[k] = True
    return v, known


def _belief_equations(res: DesignResult):
    """Rows ``M v = r`` that pin the primitive variables to the actual commitments."""
    comp = res.compiled
    x = res.solution.x
    n = comp.unc.n
    rows, rhs = [], []
    for j, con in comp.contracts.items():
        if con.mode == "rect":
            for t in range(con.T):
                c0, G = res.numeric(comp.commit[j][t][con.comps.tolist()])
                F = np.eye(con.m) if con.rotation is None else con.rotation[t]
                y = np.maximum(x[con.y[t] - 1], 0.0)
                z = x[con.z[t] - 1]
                proj = sp.csr_matrix(F.T) @ G
                for k in range(con.m):
                    sid = con.s_ids[t][k] - 1
                    row = sp.lil_matrix((1, n))
                    if y[k] > FIXED_POINT_TOL:
                        row[0, sid] = y[k]
                        rows.append(row.tocsr() - proj[k])
                        rhs.append((F.T @ c0)[k] - z[k])
                    else:
                        row[0, sid] = 1.0
                        rows.append(row.tocsr())
                        rhs.append(0.0)
        else:
            from .reformulate.solution import certificates
            const, G, cert_unc = certificates(comp, x)[j]
            G = sp.csr_matrix(G)
            full = sp.csr_matrix((G.data, cert_unc[G.indices] - 1, G.indptr), shape=(G.shape[0], n))
            ids = con.s_ids.ravel() - 1
            eye = sp.csr_matrix((np.ones(len(ids)), (np.arange(len(ids)), ids)), shape=(len(ids), n))
            rows.append(eye - full)
            rhs.extend(const)
    if not rows:
        return sp.csr_matrix((0, n)), np.zeros(0)
    return sp.vstack(rows, format="csr"), np.asarray(rhs, dtype=float)


def _solve_beliefs(res: DesignResult, v: np.ndarray, known: np.ndarray) -> np.ndarray:
    M, r = _belief_equations(res)
    if not M.shape[0]:
        return v
    unknown = np.flatnonzero(~known)
    Mu = M[:, unknown].toarray()
    b = r - M[:, known] @ v[known]
    s, *_ = np.linalg.lstsq(Mu, b, rcond=None)
    full = v.copy()
    full[unknown] = s
    if np.max(np.abs(Mu @ s - b), initial=0.0) <= 1e-7 and _in_sets(res, full):
        return full
    # consistent point inside the primitive sets
    comp = res.compiled
    A_ub, b_ub = [], []
    for blk in comp.unc.blocks:
        if not np.isin(blk.ids - 1, unknown).all():
            continue
        pos = np.searchsorted(unknown, blk.ids - 1)
        Wf = sp.csr_matrix((blk.W.ravel(), (np.repeat(np.arange(blk.W.shape[0]), blk.W.shape[1]),
                                             np.tile(pos, blk.W.shape[0]))),
                           shape=(blk.W.shape[0], len(unknown)))
        A_ub.append(-Wf)
        b_ub.append(-blk.w)
    m = len(unknown)
    lp = LinearProgram(np.zeros(m), sp.vstack(A_ub, format="csr") if A_ub else sp.csr_matrix((0, m)),
                       np.concatenate(b_ub) if b_ub else np.zeros(0), sp.csr_matrix(Mu), b,
                       np.full(m, -np.inf), np.full(m, np.inf), [f"s{k}" for k in range(m)])
    sol = solve(lp)
    if not sol.ok:
        raise SolverError("no consistent belief for the realized disturbances", sol)
    full[unknown] = sol.x
    return full


def _in_sets(res: DesignResult, v: np.ndarray, tol: float = 1e-7) -> bool:
    for blk in res.compiled.unc.blocks:
        if np.any(blk.W @ v[blk.ids - 1] < blk.w - tol):
            return False
    return True


def closed_loop(res: DesignResult, xi: dict) -> Trajectory:
    """Apply the designed policies to one disturbance realization.

    In local designs every agent translates the commitments it actually
    receives into primitive variables; these are found as the fixed point
    of that translation, so the trajectory is what the deployed policies
    produce.  States are then re-simulated from the dynamics.
    """
    net = res.net
    v, known = _xi_vector(res, xi)
    if res.compiled.contracts:
        v = _solve_beliefs(res, v, known)
    U = {}
    for a in net.agents:
        U[a.id] = np.array([c + G @ v for c, G in res.input_maps(a.id)]).reshape(a.T, a.nu)
    X_map = {a.id: np.array([c + G @ v for c, G in res.state_maps(a.id)]) for a in net.agents}
    X = simulate_dynamics(net, res.cfg.committed_variable, U, xi)
    resid = max(float(np.max(np.abs(X[i] - X_map[i]), initial=0.0)) for i in X)
    cost = {a.id: a.cost(X[a.id], U[a.id]) for a in net.agents}
    viol = {a.id: a.constraint_violation(X[a.id], U[a.id]) for a in net.agents}
    return Trajectory(X, U, xi, cost, viol, resid)


def simulate_dynamics(net: NetworkSpec, committed: str, U: dict, xi: dict) -> dict:
    """State trajectories from inputs and disturbances (coupling by actual values)."""
    X = {a.id: np.zeros((a.T + 1, a.nx)) for a in net.agents}
    for a in net.agents:
        X[a.id][0] = a.x_init
    order = topological_order(net) if committed == "next_state" else net.ids
    if order is None:
        raise ValueError("next-state coupling needs an acyclic network")
    for t in range(net.T):
        for i in order:
            a = net.agent(i)
            parts = []
            for j in ordered_neighbors(net, i):
                if committed == "input":
                    parts.append(U[j][t])
                elif committed == "next_state":
                    parts.append(X[j][t + 1])
                else:
                    parts.append(X[j][t])
            nxt = a.A[t] @ X[i][t] + a.offset(t)
            if parts:
                nxt = nxt + a.B[t] @ np.concatenate(parts)
            if a.nu:
                nxt = nxt + a.D[t] @ U[i][t]
            if a.nxi:
                nxt = nxt + a.E[t] @ xi[i][t]
            X[i][t + 1] = nxt
    return X


# -- worst-case certificate ----------------------------------------------------------

def certify_worst_case(res: DesignResult, cap: int = VERTEX_CAP) -> dict:
    """Exact worst-case cost per agent over the extreme points of its domain.

    Each agent's cost is convex in the uncertainty its trajectory depends
    on, so its maximum is attained at a vertex of the product of the
    blocks touched.  Raises :class:`CapExceeded` above ``cap`` vertices.
    """
    comp = res.compiled
    out = {}
    for a in res.net.agents:
        ids = comp.domain(a.id)
        coords, poly = comp.unc.domain(ids)
        V = vertices(poly, cap) if len(coords) else np.zeros((1, 0))
        if len(V) > cap:
            raise CapExceeded(f"agent {a.id}: more than {cap} vertices")
        xm = res.state_maps(a.id)
        um = res.input_maps(a.id)
        worst = -np.inf
        v = np.zeros(comp.unc.n)
        for row in V:
            v[coords - 1] = row
            X = np.array([c + G @ v for c, G in xm])
            U = np.array([c + G @ v for c, G in um]).reshape(a.T, a.nu)
            worst = max(worst, a.cost(X, U))
        out[a.id] = float(worst)
    return out


# -- rolling horizon ------------------------------------------------------------------

@dataclass
class RollResult:
    trajectory: Trajectory
    worst_case: float
    stage_costs: list
    objectives: list

    @property
    def realized(self) -> float:
        return self.trajectory.total

    @property
    def ratio(self) -> float:
        return self.realized / self.worst_case if self.worst_case else np.nan


class RollError(RuntimeError):
    def __init__(self, stage: int, cause: Exception):
        super().__init__(f"re-optimization failed at stage {stage}: {cause}")
        self.stage = stage


def roll(net: NetworkSpec, cfg: DesignConfig, seed=0, xi: dict | None = None,
         design=None) -> RollResult:
    """Re-optimize at every stage and apply only the first-stage inputs.

    ``design`` maps ``(net, cfg)`` to a solved :class:`DesignResult`
    (defaults to :func:`solve_design`).  The realized cost is evaluated on
    the full-horizon agents; the worst case is the full-horizon design
    objective.
    """
    design = design or solve_design
    xi = xi if xi is not None else sample_realization(net, seed)
    T = net.T
    X = {a.id: np.zeros((a.T + 1, a.nx)) for a in net.agents}
    U = {a.id: np.zeros((a.T, a.nu)) for a in net.agents}
    for a in net.agents:
        X[a.id][0] = a.x_init
    worst = None
    objectives = []
    for t in range(T):
        sub = net.truncated(t, {i: X[i][t] for i in net.ids}) if t else net
        try:
            res = design(sub, cfg)
        except Exception as exc:  # noqa: BLE001 - reported with the stage
            raise RollError(t, exc) from exc
        if worst is None:
            worst = res.objective
        objectives.append(res.objective)
        xi_sub = {i: xi[i][t:] for i in net.ids}
        step = closed_loop(res, xi_sub)
        for i in net.ids:
            U[i][t] = step.u[i][0]
        for i in net.ids:
            X[i][t + 1] = step.x[i][1]
    X_sim = simulate_dynamics(net, cfg.committed_variable, U, xi)
    resid = max(float(np.max(np.abs(X_sim[i] - X[i]), initial=0.0)) for i in X)
    cost = {a.id: a.cost(X_sim[a.id], U[a.id]) for a in net.agents}
    viol = {a.id: a.constraint_violation(X_sim[a.id], U[a.id]) for a in net.agents}
    stage_costs = [(a.id, t, float(c)) for a in net.agents
                   for t, c in enumerate(a.stage_costs(X_sim[a.id], U[a.id]))]
    traj = Trajectory(X_sim, U, xi, cost, viol, resid)
    return RollResult(traj, float(worst), stage_costs, objectives)
