"""Dense revised simplex with a two-phase start and Bland's anti-cycling rule."""

from __future__ import annotations

import numpy as np

OPTIMAL, INFEASIBLE, UNBOUNDED, ITER_LIMIT = "optimal", "infeasible", "unbounded", "iter_limit"


class _StandardForm:
    """``min c@z  s.t.  M@z == r, z >= 0`` with the map back to the original columns."""

    def __init__(self, c, A_ub, b_ub, A_eq, b_eq, lb, ub):
        n = len(c)
        cols = []  # (orig index, sign) per structural column
        offset = np.zeros(n)
        bound_rows = []  # (structural column, rhs)
        for j in range(n):
            lo, hi = lb[j], ub[j]
            if np.isfinite(lo):
                offset[j] = lo
                cols.append((j, 1.0))
                if np.isfinite(hi):
                    bound_rows.append((len(cols) - 1, hi - lo))
            elif np.isfinite(hi):
                offset[j] = hi
                cols.append((j, -1.0))
            else:
                cols.append((j, 1.0))
                cols.append((j, -1.0))
        self.n = n
        self.cols = cols
        self.offset = offset
        ns = len(cols)
        T = np.zeros((n, ns))
        for k, (j, s) in enumerate(cols):
            T[j, k] = s
        m_ub, m_eq, m_b = A_ub.shape[0], A_eq.shape[0], len(bound_rows)
        m = m_ub + m_eq + m_b
        n_slack = m_ub + m_b
        M = np.zeros((m, ns + n_slack))
        r = np.zeros(m)
        M[:m_ub, :ns] = A_ub @ T
        r[:m_ub] = b_ub - A_ub @ offset
        M[m_ub:m_ub + m_eq, :ns] = A_eq @ T
        r[m_ub:m_ub + m_eq] = b_eq - A_eq @ offset
        for k, (col, rhs) in enumerate(bound_rows):
            M[m_ub + m_eq + k, col] = 1.0
            r[m_ub + m_eq + k] = rhs
        slack_rows = list(range(m_ub)) + list(range(m_ub + m_eq, m))
        for k, row in enumerate(slack_rows):
            M[row, ns + k] = 1.0
        self.sign = np.where(r < 0, -1.0, 1.0)
        self.M = M * self.sign[:, None]
        self.r = r * self.sign
        self.c = np.concatenate([T.T @ c, np.zeros(n_slack)])
        self.T = T
        self.ns = ns
        self.m_ub, self.m_eq, self.m_b = m_ub, m_eq, m_b
        self.bound_rows = bound_rows
        self.slack_rows = slack_rows

    def original(self, z):
        return self.offset + self.T @ z[:self.ns]


def _pivot_loop(M, r, c, basis, Binv, xB, tol, max_iters, bland_after, iters):
    """Run simplex pivots in place.  Returns (status, iterations)."""
    m, ntot = M.shape
    degenerate = 0
    since_refactor = 0
    while True:
        if iters >= max_iters:
            return ITER_LIMIT, iters
        pi = c[basis] @ Binv
        d = c - pi @ M
        d[basis] = 0.0
        candidates = np.flatnonzero(d < -tol)
        if candidates.size == 0:
            return OPTIMAL, iters
        if degenerate >= bland_after:
            q = int(candidates[0])
        else:
            q = int(candidates[np.argmin(d[candidates])])
        a = Binv @ M[:, q]
        positive = a > tol
        if not positive.any():
            return UNBOUNDED, iters
        ratios = np.full(m, np.inf)
        ratios[positive] = xB[positive] / a[positive]
        theta = ratios.min()
        ties = np.flatnonzero(ratios <= theta + 1e-12 * max(1.0, abs(theta)))
        row = int(ties[np.argmin(basis[ties])])
        theta = max(ratios[row], 0.0)
        degenerate = degenerate + 1 if theta <= tol else 0
        xB -= theta * a
        xB[row] = theta
        piv = a[row]
        Binv[row] /= piv
        others = np.arange(m) != row
        Binv[others] -= np.outer(a[others], Binv[row])
        basis[row] = q
        iters += 1
        since_refactor += 1
        if since_refactor >= 50:
            Binv[:] = np.linalg.inv(M[:, basis])
            xB[:] = Binv @ r
            xB[np.abs(xB) < 1e-13] = 0.0
            since_refactor = 0


def revised_simplex(c, A_ub, b_ub, A_eq, b_eq, lb, ub, tol=1e-9, max_iters=10000,
                    bland_after=10):
    """Solve a small dense LP.

    Returns ``(status, x, duals, iterations)`` where ``duals`` is a dict with
    the sensitivities of the optimal value to ``b_ub``, ``b_eq``, ``lb`` and
    ``ub`` (zero for infinite bounds).
    """
    sf = _StandardForm(np.asarray(c, float), np.asarray(A_ub, float), np.asarray(b_ub, float),
                       np.asarray(A_eq, float), np.asarray(b_eq, float),
                       np.asarray(lb, float), np.asarray(ub, float))
    M, r = sf.M, sf.r
    m, nz = M.shape
    # a slack with coefficient +1 after the sign flip can start in the basis
    basis = np.full(m, -1)
    for k, row in enumerate(sf.slack_rows):
        if sf.sign[row] > 0:
            basis[row] = sf.ns + k
    art_rows = np.flatnonzero(basis < 0)
    n_art = len(art_rows)
    M1 = np.hstack([M, np.zeros((m, n_art))])
    for k, row in enumerate(art_rows):
        M1[row, nz + k] = 1.0
        basis[row] = nz + k
    c1 = np.concatenate([np.zeros(nz), np.ones(n_art)])
    Binv = np.eye(m)
    xB = r.copy()
    iters = 0
    if n_art:
        status, iters = _pivot_loop(M1, r, c1, basis, Binv, xB, tol, max_iters, bland_after, iters)
        if status == ITER_LIMIT:
            return ITER_LIMIT, None, None, iters
        if c1[basis] @ xB > tol * max(1.0, np.abs(r).max(initial=0.0)) * 10:
            return INFEASIBLE, None, None, iters
        # pivot remaining zero-level artificials out of the basis
        keep = np.ones(m, dtype=bool)
        for row in range(m):
            if basis[row] >= nz:
                a_row = Binv[row] @ M
                a_row[basis[basis < nz]] = 0.0
                cand = np.flatnonzero(np.abs(a_row) > 1e-9)
                if cand.size == 0:
                    keep[row] = False  # redundant equality
                    continue
                q = int(cand[0])
                a = Binv @ M[:, q]
                piv = a[row]
                Binv[row] /= piv
                others = np.arange(m) != row
                Binv[others] -= np.outer(a[others], Binv[row])
                xB[others] -= a[others] * xB[row] / piv
                xB[row] = xB[row] / piv
                basis[row] = q
        if not keep.all():
            M, r = M[keep], r[keep]
            basis = basis[keep]
            Binv = np.linalg.inv(M[:, basis])
            xB = Binv @ r
        else:
            Binv = np.linalg.inv(M[:, basis])
            xB = Binv @ r
        row_map = np.flatnonzero(keep)
    else:
        row_map = np.arange(m)
    status, iters = _pivot_loop(M, r, sf.c, basis, Binv, xB, tol, max_iters, bland_after, iters)
    if status != OPTIMAL:
        return status, None, None, iters
    z = np.zeros(nz)
    z[basis] = np.maximum(xB, 0.0)
    x = sf.original(z)
    pi_kept = sf.c[basis] @ Binv
    pi = np.zeros(sf.M.shape[0])
    pi[row_map] = pi_kept
    pi_orig = pi * sf.sign  # sensitivity w.r.t. the unsigned right-hand sides
    reduced = sf.c - pi @ sf.M
    m_ub, m_eq = sf.m_ub, sf.m_eq
    d_lb = np.zeros(sf.n)
    d_ub = np.zeros(sf.n)
    for k, (j, s) in enumerate(sf.cols):
        if np.isfinite(lb[j]) and s > 0:
            d_lb[j] = reduced[k]
        elif not np.isfinite(lb[j]) and np.isfinite(ub[j]):
            d_ub[j] = -reduced[k]
    for k, (col, _) in enumerate(sf.bound_rows):
        j = sf.cols[col][0]
        d_ub[j] = pi_orig[m_ub + m_eq + k]
    duals = {"ub": pi_orig[:m_ub], "eq": pi_orig[m_ub:m_ub + m_eq], "lb": d_lb, "ubnd": d_ub}
    return OPTIMAL, x, duals, iters
