"""Solving compiled designs and reading policies and forecast sets back."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from ..lp import Solution, SolverError, Status, solve
from ..model import DesignConfig, Mode, NetworkSpec
from ..policy import AffinePolicy, ForecastSetParam
from .build import Compiled, build

log = logging.getLogger(__name__)


class DesignInfeasible(SolverError):
    """The compiled design problem has no feasible point."""


@dataclass
class DesignResult:
    compiled: Compiled
    solution: Solution
    objective: float
    ell: dict
    policies: dict
    contracts: dict
    timing: dict = field(default_factory=dict)
    history: list = field(default_factory=list)

    @property
    def net(self) -> NetworkSpec:
        return self.compiled.net

    @property
    def cfg(self) -> DesignConfig:
        return self.compiled.cfg

    def numeric(self, expr):
        """``(c, G)`` with ``expr(v) = c + G @ v`` (``v`` indexed by uncertainty id - 1)."""
        return expr.substitute(self.solution.x, self.compiled.unc.n)

    def state_maps(self, i: int):
        return [self.numeric(e) for e in self.compiled.x[i]]

    def input_maps(self, i: int):
        return [self.numeric(e) for e in self.compiled.u[i]]

    def first_inputs(self) -> dict:
        """Stage-0 input maps per agent."""
        return {i: self.numeric(self.compiled.u[i][0]) for i in self.net.ids}

    def summary(self) -> dict:
        out = {
            "mode": Mode(self.cfg.mode).value,
            "objective": self.objective,
            "worst_case": {str(i): v for i, v in self.ell.items()},
            "columns": self.compiled.lp.n,
            "rows": int(self.compiled.lp.A_ub.shape[0] + self.compiled.lp.A_eq.shape[0]),
            "timing": self.timing,
        }
        if self.contracts:
            out["contracts"] = {str(j): c.to_dict() for j, c in self.contracts.items()}
        return out


def _policies(comp: Compiled, x: np.ndarray) -> dict:
    out = {}
    for i, L in comp.layouts.items():
        pol = AffinePolicy(L)
        for t, pv in enumerate(comp.policies[i]):
            off = L.constants[t]
            pol.theta[off:off + L.nu] = x[pv.gamma - 1]
            if pv.K.size:
                pol.theta[pv.theta_index.ravel()] = x[pv.K.ravel() - 1]
        out[i] = pol
    return out


def _contracts(comp: Compiled, x: np.ndarray) -> dict:
    out = {}
    for j, con in comp.contracts.items():
        T, n, m = con.T, con.n, con.m
        z = np.zeros((T, n))
        z[:, con.comps] = x[con.z - 1]
        if con.mode == "rect":
            y = np.zeros((T, n))
            y[:, con.comps] = np.maximum(x[con.y - 1], 0.0)
            rot = None
            if con.rotation is not None:
                rot = np.tile(np.eye(n), (T, 1, 1))
                for t in range(T):
                    rot[t][np.ix_(con.comps, con.comps)] = con.rotation[t]
            out[j] = ForecastSetParam("rect", z, y=y, rotation=rot)
        else:
            p = con.p
            Ym = flexible_Y(con, x)
            Y = np.zeros((T * n, T * p))
            rows = (np.arange(T)[:, None] * n + con.comps[None, :]).ravel()
            Y[rows] = Ym
            out[j] = ForecastSetParam("flexible", z, Y=Y, S=con.S)
    return out


def flexible_Y(con, x: np.ndarray) -> np.ndarray:
    """The ``(T*m, T*p)`` forecast map over the used coordinates."""
    if con.Y_value is not None:
        return con.Y_value.copy()
    Y = np.zeros(con.Y_ids.shape)
    nz = con.Y_ids > 0
    Y[nz] = x[con.Y_ids[nz] - 1]
    return Y


def certificates(comp: Compiled, x: np.ndarray) -> dict:
    """Membership certificates ``(const, G, unc ids)`` of a flexible design."""
    out = {}
    for j, con in comp.contracts.items():
        if con.cert_value is not None:
            const, G = con.cert_value
            out[j] = (const, G, con.cert_unc)
            continue
        vals = x[con.cert_ids - 1]
        out[j] = (vals[:, 0], sp.csr_matrix(vals[:, 1:]), con.cert_unc)
    return out


def solve_compiled(comp: Compiled, method: str = "highs", tol: float = 1e-9,
                   max_iters: int = 1_000_000) -> DesignResult:
    t0 = time.perf_counter()
    sol = solve(comp.lp, method=method, tol=tol, max_iters=max_iters)
    elapsed = time.perf_counter() - t0
    if sol.status == Status.INFEASIBLE:
        raise DesignInfeasible(f"{comp.lp.info.get('mode')} design is infeasible", sol)
    if not sol.ok:
        raise SolverError(f"LP solve ended with status {sol.status.value}", sol)
    x = sol.x
    ell = {i: float(x[d - 1]) for i, d in comp.ell.items()}
    return DesignResult(comp, sol, sol.objective, ell, _policies(comp, x), _contracts(comp, x),
                        timing={"solve_s": elapsed})


def solve_design(net: NetworkSpec, cfg: DesignConfig, fixed_Y: dict | None = None, *,
                 method: str = "highs", tol: float = 1e-9, max_iters: int = 1_000_000,
                 **bcd) -> DesignResult:
    """Compile and solve; the flexible mode without ``fixed_Y`` runs :func:`bcd_flexible`."""
    if Mode(cfg.mode) == Mode.LOCAL_FLEXIBLE and fixed_Y is None:
        return bcd_flexible(net, cfg, method=method, **bcd)[0]
    t0 = time.perf_counter()
    comp = build(net, cfg, fixed_Y)
    build_s = time.perf_counter() - t0
    res = solve_compiled(comp, method, tol, max_iters)
    res.timing["build_s"] = build_s
    return res


def tightest_contracts(res: DesignResult, slack: float = 1e-9, method: str = "highs") -> DesignResult:
    """Among the optimal rectangular designs, the one with the smallest total half-width.

    Optimal forecast sets are rarely unique; this second solve keeps the
    cost within ``slack`` (relative) of ``res.objective`` and minimizes
    the sum of all ``y`` so that reported intervals are reproducible.
    """
    comp = res.compiled
    lp = comp.lp
    ys = [con.y.ravel() - 1 for con in comp.contracts.values() if con.y is not None]
    if not ys:
        return res
    budget = res.objective - lp.c0 + slack * max(1.0, abs(res.objective))
    c = np.zeros(lp.n)
    c[np.concatenate(ys)] = 1.0
    tie = replace(lp, c=c, c0=0.0,
                  A_ub=sp.vstack([lp.A_ub, sp.csr_matrix(lp.c[None, :])], format="csr"),
                  b_ub=np.append(lp.b_ub, budget), ub_owner=np.append(lp.ub_owner, -1),
                  info=dict(lp.info))
    sol = solve(tie, method=method)
    if not sol.ok:
        raise SolverError(f"width tie-break ended with status {sol.status.value}", sol)
    x = sol.x
    return DesignResult(comp, sol, float(lp.c @ x + lp.c0),
                        {i: float(x[d - 1]) for i, d in comp.ell.items()},
                        _policies(comp, x), _contracts(comp, x), dict(res.timing), res.history)


def identity_Y(comp_or_net, cfg: DesignConfig, scale: float = 1.0) -> dict:
    """Forecast maps with an identity block on each stage's own primitive variables."""
    from .build import _used_components
    from ..policy import primitive_set

    net = comp_or_net
    used, _ = _used_components(net, cfg)
    out = {}
    for j, comps in used.items():
        if not len(comps):
            continue
        T, m, p = net.T, len(comps), primitive_set(net, cfg, j).dim
        Y = np.zeros((T * m, T * p))
        for t in range(T):
            Y[t * m:(t + 1) * m, t * p:(t + 1) * p] = scale * np.eye(m, p)
        out[j] = Y
    return out


def open_loop_Y(net: NetworkSpec, cfg: DesignConfig) -> dict:
    """Forecast maps equal to each agent's own disturbance response.

    The committed variable of ``j`` is rolled out with zero inputs and no
    neighbour coupling; the primitive variable of stage ``tau`` plays the
    role of the disturbance that first reaches the committed variable at
    ``tau``, rescaled from the disturbance's bounding box to ``[-1, 1]``.
    Agents with a custom primitive set fall back to :func:`identity_Y`.
    """
    from .build import _used_components

    used, _ = _used_components(net, cfg)
    fallback = identity_Y(net, cfg)
    comm = cfg.committed_variable
    shift = 0 if comm == "next_state" else 1
    out = {}
    for j, comps in used.items():
        if not len(comps):
            continue
        a = net.agent(j)
        if (cfg.primitive or {}).get(j) is not None or comm == "input" or not a.nxi:
            out[j] = fallback[j]
            continue
        T, m, p = net.T, len(comps), a.nxi
        lo, hi = a.Xi.bounds()
        half = 0.5 * (hi - lo).reshape(T, p)
        G = np.zeros((a.nx, T * p))  # response of x_t to xi
        maps = [G.copy()]
        for t in range(T):
            G = a.A[t] @ G
            G[:, t * p:(t + 1) * p] += a.E[t]
            maps.append(G.copy())
        Y = np.zeros((T * m, T * p))
        for t in range(T):
            Gt = maps[t + 1 - shift][comps]
            for tau in range(t + 1):
                src = tau - shift
                if src >= 0:
                    Y[t * m:(t + 1) * m, tau * p:(tau + 1) * p] = \
                        Gt[:, src * p:(src + 1) * p] * half[src]
        out[j] = Y
    return out


def bcd_flexible(net: NetworkSpec, cfg: DesignConfig, S_specs: dict | None = None,
                 Y_init: dict | None = None, max_iters: int = 30, tol: float = 1e-8,
                 method: str = "highs"):
    """Alternate between the forecast maps ``Y`` and the membership certificates.

    Phase (i) fixes ``Y`` and optimizes policies, centres and certificates;
    phase (ii) fixes the certificates and optimizes ``Y``, centres and
    policies.  The previous iterate stays feasible in each phase, so the
    objective never increases.  Returns ``(result, Y, z, log)``.
    """
    if S_specs:
        cfg = DesignConfig(**{**cfg.__dict__, "primitive": S_specs})
    Y = Y_init or open_loop_Y(net, cfg)
    log_rows = []
    best = None
    prev = np.inf
    for it in range(max_iters):
        try:
            r1 = solve_compiled(build(net, cfg, fixed_Y=Y), method)
        except SolverError as exc:
            raise type(exc)(f"flexible design, phase (i), sweep {it}: {exc}", exc.solution) from exc
        certs = certificates(r1.compiled, r1.solution.x)
        try:
            r2 = solve_compiled(build(net, cfg, certificates=certs), method)
        except SolverError as exc:
            raise type(exc)(f"flexible design, phase (ii), sweep {it}: {exc}", exc.solution) from exc
        Y = {j: flexible_Y(con, r2.solution.x) for j, con in r2.compiled.contracts.items()}
        log_rows.append({"sweep": it, "phase_i": r1.objective, "phase_ii": r2.objective})
        log.debug("bcd sweep %d: %.10g -> %.10g", it, r1.objective, r2.objective)
        best = r2
        if not r2.compiled.contracts or prev - r2.objective <= tol * max(1.0, abs(r2.objective)):
            break
        prev = r2.objective
    best.history = log_rows
    z = {j: c.z for j, c in best.contracts.items()}
    return best, Y, z, log_rows
