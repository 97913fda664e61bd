"""Convex QP ``min 0.5 x'Px + q'x  s.t.  l <= A x <= u``.

Two routes share one contract.  ``"clarabel"`` hands the problem to the
Clarabel interior-point solver; ``"split"`` is an operator-splitting
scheme on ``z = A x`` with diagonal equilibration, adaptive step size and
a final equality-constrained polish on the guessed active set.  The
splitting route is slow on long horizons and serves as a cross-check.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .program import LinearProgram

SIGMA = 1e-6
ALPHA = 1.6
RHO_EQ_SCALE = 1e3
RHO_MIN, RHO_MAX = 1e-6, 1e6


@dataclass
class QPResult:
    status: str
    x: np.ndarray
    y: np.ndarray
    objective: float
    iterations: int
    primal_residual: float
    dual_residual: float
    polished: bool


def _ruiz(P, A, q, iters=15):
    n, m = P.shape[0], A.shape[0]
    D = np.ones(n)
    E = np.ones(m)
    Ps, As = P.copy(), A.copy()
    for _ in range(iters):
        col_p = sp.linalg.norm(Ps, np.inf, axis=0) if Ps.nnz else np.zeros(n)
        col_a = sp.linalg.norm(As, np.inf, axis=0) if As.nnz else np.zeros(n)
        dn = np.maximum(col_p, col_a)
        dm = sp.linalg.norm(As, np.inf, axis=1) if As.nnz else np.zeros(m)
        dn = np.where(dn < 1e-4, 1.0, dn)
        dm = np.where(dm < 1e-4, 1.0, dm)
        dn, dm = 1.0 / np.sqrt(dn), 1.0 / np.sqrt(dm)
        Ps = sp.diags(dn) @ Ps @ sp.diags(dn)
        As = sp.diags(dm) @ As @ sp.diags(dn)
        D *= dn
        E *= dm
    qs = D * q
    cost = 1.0 / max(1.0, np.abs(qs).max(initial=0.0), sp.linalg.norm(Ps, np.inf) if Ps.nnz else 0.0)
    return Ps.tocsc(), As.tocsc(), D, E, cost


def _factor(P, A, rho):
    n, m = P.shape[0], A.shape[0]
    K = sp.bmat([[P + SIGMA * sp.eye(n), A.T], [A, -sp.diags(1.0 / rho)]], format="csc")
    return spla.splu(K, permc_spec="COLAMD", diag_pivot_thresh=0.0, options={"SymmetricMode": True})


def _polish(P, q, A, l, u, x, z, y, delta=1e-7, refine=10):
    """Solve the KKT system on the active set and refine iteratively."""
    n = P.shape[0]
    lower = (z - l < -y) | (l == u)
    upper = (u - z < y) & ~lower
    act = np.flatnonzero(lower | upper)
    bnd = np.where(lower[act], l[act], u[act])
    Aa = A[act]
    K = sp.bmat([[P, Aa.T], [Aa, None]], format="csc")
    Kreg = sp.bmat([[P + delta * sp.eye(n), Aa.T], [Aa, -delta * sp.eye(len(act))]], format="csc")
    try:
        lu = spla.splu(Kreg, permc_spec="COLAMD", diag_pivot_thresh=0.0)
    except RuntimeError:
        return None
    rhs = np.concatenate([-q, bnd])
    sol = lu.solve(rhs)
    for _ in range(refine):
        sol = sol + lu.solve(rhs - K @ sol)
    xp = sol[:n]
    yp = np.zeros(A.shape[0])
    yp[act] = sol[n:]
    return xp, yp


def _residuals(P, q, A, l, u, x, y):
    Ax = A @ x
    zp = np.clip(Ax, l, u)
    r_prim = np.max(np.abs(Ax - zp), initial=0.0)
    r_dual = np.max(np.abs(P @ x + q + A.T @ y), initial=0.0)
    # positive multipliers belong to upper bounds, negative ones to lower bounds
    yp, yn = np.maximum(y, 0.0), np.maximum(-y, 0.0)
    fu, fl = np.isfinite(u), np.isfinite(l)
    comp_u = np.where(fu, yp * np.abs(np.where(fu, u, 0.0) - Ax), yp)
    comp_l = np.where(fl, yn * np.abs(Ax - np.where(fl, l, 0.0)), yn)
    r_comp = max(np.max(comp_u, initial=0.0), np.max(comp_l, initial=0.0))
    return r_prim, max(r_dual, r_comp)


def solve_qp(P, q, A, l, u, eps=1e-8, max_iter=20000, rho=0.1, check_every=25,
             polish=True, method="clarabel") -> QPResult:
    """Minimize ``0.5 x'Px + q'x`` subject to ``l <= Ax <= u``.

    ``method`` is ``"clarabel"`` or ``"split"``; ``rho``, ``check_every``
    and ``polish`` only affect the splitting route.
    """
    if method == "clarabel":
        return _solve_clarabel(P, q, A, l, u, eps, max_iter)
    if method != "split":
        raise ValueError(f"unknown QP method {method!r}")
    P = sp.csc_matrix(P)
    A = sp.csc_matrix(A)
    q = np.asarray(q, dtype=float)
    l = np.asarray(l, dtype=float)
    u = np.asarray(u, dtype=float)
    n, m = P.shape[0], A.shape[0]
    Ps, As, D, E, cost = _ruiz(P, A, q)
    qs = cost * D * q
    Ps = cost * Ps
    ls = np.where(np.isfinite(l), E * l, -np.inf)
    us = np.where(np.isfinite(u), E * u, np.inf)
    eq = ls == us
    free = ~np.isfinite(ls) & ~np.isfinite(us)

    def rho_vec(r):
        v = np.full(m, r)
        v[eq] = r * RHO_EQ_SCALE
        v[free] = RHO_MIN
        return v

    rv = rho_vec(rho)
    lu = _factor(Ps, As, rv)
    x = np.zeros(n)
    z = np.zeros(m)
    y = np.zeros(m)
    status = "iter_limit"
    k = 0
    best = None
    for k in range(1, max_iter + 1):
        rhs = np.concatenate([SIGMA * x - qs, z - y / rv])
        sol = lu.solve(rhs)
        xt = sol[:n]
        zt = z + (sol[n:] - y) / rv
        x_new = ALPHA * xt + (1 - ALPHA) * x
        zr = ALPHA * zt + (1 - ALPHA) * z
        z_new = np.clip(zr + y / rv, ls, us)
        y = y + rv * (zr - z_new)
        x, z = x_new, z_new
        if k % check_every:
            continue
        # unscaled residuals
        xu = D * x
        yu = E * y / cost
        Ax = As @ x
        r_prim = np.max(np.abs((Ax - z) / E), initial=0.0)
        r_dual = np.max(np.abs((Ps @ x + qs + As.T @ y) / D), initial=0.0) / cost
        ax_n = max(np.max(np.abs(Ax / E), initial=0.0), np.max(np.abs(z / E), initial=0.0))
        d_n = max(np.max(np.abs(P @ xu), initial=0.0), np.max(np.abs(A.T @ yu), initial=0.0),
                  np.max(np.abs(q), initial=0.0))
        if polish and (r_prim <= 1e-4 * (1 + ax_n) and r_dual <= 1e-4 * (1 + d_n)):
            cand = _polish(P, q, A, l, u, xu, np.clip(A @ xu, l, u), yu)
            if cand is not None:
                rp, rd = _residuals(P, q, A, l, u, *cand)
                if best is None or max(rp, rd) < best[0]:
                    best = (max(rp, rd), cand, rp, rd)
                if max(rp, rd) <= eps:
                    status = "optimal"
                    break
        if r_prim <= eps * (1 + ax_n) and r_dual <= eps * (1 + d_n):
            status = "optimal"
            best = None
            break
        # adapt the step size from the balance of primal and dual residuals
        scale = np.sqrt((r_prim / max(ax_n, 1e-12)) / max(r_dual / max(d_n, 1e-12), 1e-30))
        new_rho = float(np.clip(rho * scale, RHO_MIN, RHO_MAX))
        if new_rho > 5 * rho or new_rho < rho / 5:
            rho = new_rho
            rv = rho_vec(rho)
            lu = _factor(Ps, As, rv)
    if best is not None and (status == "optimal" or best[0] <= eps):
        xu, yu = best[1]
        rp, rd, polished = best[2], best[3], True
        status = "optimal" if best[0] <= eps else status
    else:
        xu, yu = D * x, E * y / cost
        rp, rd = _residuals(P, q, A, l, u, xu, yu)
        polished = False
    obj = float(0.5 * xu @ (P @ xu) + q @ xu)
    return QPResult(status, xu, yu, obj, k, rp, rd, polished)


def _solve_clarabel(P, q, A, l, u, eps, max_iter) -> QPResult:
    import clarabel

    P = sp.csc_matrix(P)
    A = sp.csr_matrix(A)
    q = np.asarray(q, dtype=float)
    l = np.asarray(l, dtype=float)
    u = np.asarray(u, dtype=float)
    fu, fl = np.isfinite(u), np.isfinite(l)
    eq = fu & fl & (l == u)
    up = np.flatnonzero(fu & ~eq)
    lo = np.flatnonzero(fl & ~eq)
    eqi = np.flatnonzero(eq)
    Ac = sp.vstack([A[eqi], A[up], -A[lo]], format="csc")
    b = np.concatenate([u[eqi], u[up], -l[lo]])
    cones = []
    if len(eqi):
        cones.append(clarabel.ZeroConeT(len(eqi)))
    if len(up) + len(lo):
        cones.append(clarabel.NonnegativeConeT(len(up) + len(lo)))
    st = clarabel.DefaultSettings()
    st.verbose = False
    st.max_iter = min(int(max_iter), 1000)
    tol = max(float(eps), 1e-12)
    st.tol_gap_abs = st.tol_gap_rel = st.tol_feas = tol
    st.tol_ktratio = 1e-8
    res = clarabel.DefaultSolver(sp.triu(P, format="csc"), q, Ac, b, cones, st).solve()
    name = str(res.status)
    x = np.asarray(res.x, dtype=float)
    zc = np.asarray(res.z, dtype=float)
    y = np.zeros(A.shape[0])
    k = len(eqi)
    y[eqi] = zc[:k]
    y[up] += zc[k:k + len(up)]
    y[lo] -= zc[k + len(up):]
    rp, rd = _residuals(P, q, A, l, u, x, y)
    if name.endswith("AlmostSolved") or name.endswith("Solved"):
        status = "optimal" if max(rp, rd) <= max(1e3 * tol, 1e-7) * (1 + np.abs(x).max(initial=0)) \
            else "inaccurate"
    elif "Infeasible" in name:
        status = "primal_infeasible" if "Primal" in name else "dual_infeasible"
    else:
        status = "iter_limit"
    obj = float(0.5 * x @ (P @ x) + q @ x)
    return QPResult(status, x, y, obj, int(res.iterations), rp, rd, False)


def lp_as_qp(lp: LinearProgram):
    """Constraint data of ``lp`` in the ``l <= A x <= u`` form (bounds as rows)."""
    n = lp.n
    bounded = np.flatnonzero(np.isfinite(lp.lb) | np.isfinite(lp.ub))
    rows = [lp.A_ub, lp.A_eq, sp.eye(n, format="csr")[bounded]]
    A = sp.vstack(rows, format="csc")
    l = np.concatenate([np.full(len(lp.b_ub), -np.inf), lp.b_eq, lp.lb[bounded]])
    u = np.concatenate([lp.b_ub, lp.b_eq, lp.ub[bounded]])
    return A, l, u


def solve_lp_rows_qp(lp: LinearProgram, P, q_extra=None, **kw) -> QPResult:
    """Minimize ``lp.c@x + q_extra@x + 0.5 x'Px`` over the feasible set of ``lp``."""
    A, l, u = lp_as_qp(lp)
    q = lp.c if q_extra is None else lp.c + q_extra
    return solve_qp(P, q, A, l, u, **kw)
