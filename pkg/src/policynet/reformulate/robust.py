"""Deterministic counterparts of robust constraints over polyhedral blocks.

For a row ``a(x) + b(x) @ v <= 0`` that must hold for every ``v`` in a
product of blocks ``{v_b : W_b v_b >= w_b}``, LP duality gives the
equivalent system

    a(x) - sum_b w_b @ mu_b <= 0,   b_b(x) + W_b.T @ mu_b == 0,   mu_b >= 0

with one multiplier vector per touched block.  :func:`expand_vertices`
enumerates extreme points instead and serves as an independent check.
"""

from __future__ import annotations

import itertools

import numpy as np
import scipy.sparse as sp

from ..uncertainty import VERTEX_CAP, CapExceeded, vertices
from .expr import AffineExpr
from .registry import Decisions, Uncertainty


class Rows:
    """Accumulates sparse ``<=`` and ``==`` rows over decision ids."""

    def __init__(self):
        self._ub = ([], [], [])  # row, col(dec id), val
        self._eq = ([], [], [])
        self.b_ub: list[np.ndarray] = []
        self.b_eq: list[np.ndarray] = []
        self.ub_owner: list[np.ndarray] = []
        self.eq_owner: list[np.ndarray] = []
        self.m_ub = 0
        self.m_eq = 0
        self.tags: list[tuple[str, int, int]] = []  # (tag, first ub row, count)

    def add(self, kind: str, rows, cols, vals, rhs, owner):
        store = self._ub if kind == "ub" else self._eq
        offset = self.m_ub if kind == "ub" else self.m_eq
        store[0].append(np.asarray(rows, dtype=np.int64) + offset)
        store[1].append(np.asarray(cols, dtype=np.int64))
        store[2].append(np.asarray(vals, dtype=float))
        rhs = np.asarray(rhs, dtype=float)
        owner = np.broadcast_to(np.asarray(owner, dtype=int), rhs.shape)
        if kind == "ub":
            self.b_ub.append(rhs)
            self.ub_owner.append(owner)
            self.m_ub += len(rhs)
        else:
            self.b_eq.append(rhs)
            self.eq_owner.append(owner)
            self.m_eq += len(rhs)

    def matrices(self, n: int):
        def build(store, m):
            if not store[0]:
                return sp.csr_matrix((m, n))
            r = np.concatenate(store[0])
            c = np.concatenate(store[1]) - 1
            v = np.concatenate(store[2])
            A = sp.csr_matrix((v, (r, c)), shape=(m, n))
            A.sum_duplicates()
            return A

        cat = lambda xs, dt=float: np.concatenate(xs) if xs else np.zeros(0, dtype=dt)
        return (build(self._ub, self.m_ub), cat(self.b_ub), cat(self.ub_owner, int),
                build(self._eq, self.m_eq), cat(self.b_eq), cat(self.eq_owner, int))


def _entries(expr: AffineExpr):
    u, d = expr.split()
    coo = expr.mat.tocoo()
    return coo.row.astype(np.int64), u[coo.col], d[coo.col], coo.data


def deterministic(expr: AffineExpr, owners, out: Rows):
    """Rows ``expr <= 0`` for an expression without uncertainty."""
    r, u, d, v = _entries(expr)
    if np.any(u > 0):
        raise ValueError("expression depends on uncertainty")
    lin = d > 0
    rhs = np.zeros(expr.m)
    np.add.at(rhs, r[~lin], -v[~lin])
    out.add("ub", r[lin], d[lin], v[lin], rhs, owners)


def dualize(expr: AffineExpr, owners, unc: Uncertainty, decs: Decisions, out: Rows):
    """Robust rows ``expr <= 0`` over the blocks each row touches."""
    m = expr.m
    owners = np.broadcast_to(np.asarray(owners, dtype=int), (m,))
    r, u, d, v = _entries(expr)
    block_of = np.asarray(unc.block_of, dtype=np.int64)
    local_pos = np.asarray(unc.local_pos, dtype=np.int64)
    nb = max(len(unc.blocks), 1)

    unc_mask = u > 0
    ru, uu, du, vu = r[unc_mask], u[unc_mask], d[unc_mask], v[unc_mask]
    bu = block_of[uu]
    pair_key, inv = np.unique(ru * nb + bu, return_inverse=True)
    inv = inv.ravel()
    p_row = pair_key // nb
    p_blk = pair_key % nb
    sizes = np.array([len(b.ids) for b in unc.blocks], dtype=np.int64)
    nmus = np.array([len(b.w) for b in unc.blocks], dtype=np.int64)
    p_size = sizes[p_blk] if len(pair_key) else np.zeros(0, np.int64)
    p_nmu = nmus[p_blk] if len(pair_key) else np.zeros(0, np.int64)
    eq_off = np.concatenate([[0], np.cumsum(p_size)[:-1]]) if len(pair_key) else p_size
    mu_off = np.concatenate([[0], np.cumsum(p_nmu)[:-1]]) if len(pair_key) else p_nmu
    n_eq = int(p_size.sum())
    mu_owner = np.repeat(owners[p_row], p_nmu) if len(pair_key) else np.zeros(0, int)
    mu_ids = decs.add_anonymous("mu", mu_owner, lb=0.0)

    # equality rows: coefficient of each coordinate plus W.T mu
    e_rows = eq_off[inv] + local_pos[uu]
    lin = du > 0
    rhs_eq = np.zeros(n_eq)
    np.add.at(rhs_eq, e_rows[~lin], -vu[~lin])
    rows_list = [e_rows[lin]]
    cols_list = [du[lin]]
    vals_list = [vu[lin]]
    s_rows, s_cols, s_vals = [], [], []
    for b in np.unique(p_blk):
        sel = np.flatnonzero(p_blk == b)
        W = sp.coo_matrix(unc.blocks[b].W)
        w = unc.blocks[b].w
        # W.T entries: row = local coordinate W.col, column = mu index W.row
        rows_list.append((eq_off[sel][:, None] + W.col[None, :]).ravel())
        cols_list.append((mu_ids[0] + mu_off[sel][:, None] + W.row[None, :]).ravel() if len(mu_ids) else np.zeros(0, np.int64))
        vals_list.append(np.broadcast_to(W.data, (len(sel), W.nnz)).ravel())
        nz = np.flatnonzero(w)
        s_rows.append(np.repeat(p_row[sel], len(nz)))
        s_cols.append((mu_ids[0] + mu_off[sel][:, None] + nz[None, :]).ravel() if len(mu_ids) else np.zeros(0, np.int64))
        s_vals.append(np.broadcast_to(-w[nz], (len(sel), len(nz))).ravel())
    eq_owner = np.repeat(owners[p_row], p_size) if len(pair_key) else np.zeros(0, int)
    out.add("eq", np.concatenate(rows_list), np.concatenate(cols_list),
            np.concatenate(vals_list), rhs_eq, eq_owner)

    # scalar rows
    c_mask = ~unc_mask
    rc, dc, vc = r[c_mask], d[c_mask], v[c_mask]
    lin = dc > 0
    rhs = np.zeros(m)
    np.add.at(rhs, rc[~lin], -vc[~lin])
    rows = np.concatenate([rc[lin]] + s_rows)
    cols = np.concatenate([dc[lin]] + s_cols)
    vals = np.concatenate([vc[lin]] + s_vals)
    out.add("ub", rows, cols, vals, rhs, owners)


def expand_vertices(expr: AffineExpr, owners, unc: Uncertainty, out: Rows,
                    cap: int = VERTEX_CAP):
    """Robust rows ``expr <= 0`` enforced at every extreme point of their domain."""
    owners = np.broadcast_to(np.asarray(owners, dtype=int), (expr.m,))
    u_all, d_all = expr.split()
    block_vertices: dict[int, np.ndarray] = {}
    for row in range(expr.m):
        sl = slice(expr.mat.indptr[row], expr.mat.indptr[row + 1])
        cols = expr.mat.indices[sl]
        vals = expr.mat.data[sl]
        u, d = u_all[cols], d_all[cols]
        blocks = sorted({unc.block_of[k] for k in u[u > 0]})
        per_block = []
        for b in blocks:
            if b not in block_vertices:
                block_vertices[b] = vertices(unc.blocks[b].poly, cap)
            per_block.append(block_vertices[b])
        total = int(np.prod([len(vs) for vs in per_block])) if per_block else 1
        if total > cap:
            raise CapExceeded(f"row {row} has {total} scenarios")
        value_of = np.ones(unc.n + 1)
        out_rows, out_cols, out_vals, rhs = [], [], [], []
        for k, combo in enumerate(itertools.product(*per_block)):
            for b, vert in zip(blocks, combo):
                value_of[unc.blocks[b].ids] = vert
            coef = vals * value_of[u]
            lin = d > 0
            out_rows.append(np.full(lin.sum(), k))
            out_cols.append(d[lin])
            out_vals.append(coef[lin])
            rhs.append(-coef[~lin].sum())
        out.add("ub", np.concatenate(out_rows), np.concatenate(out_cols),
                np.concatenate(out_vals), np.array(rhs), owners[row])


def identically_zero(expr: AffineExpr, owners, out: Rows):
    """``expr == 0`` for every uncertainty value: one equality per present term group."""
    owners = np.broadcast_to(np.asarray(owners, dtype=int), (expr.m,))
    r, u, d, v = _entries(expr)
    keys, inv = np.unique(r * (int(u.max(initial=0)) + 1) + u, return_inverse=True)
    inv = inv.ravel()
    n_rows = len(keys)
    row_of = keys // (int(u.max(initial=0)) + 1)
    lin = d > 0
    rhs = np.zeros(n_rows)
    np.add.at(rhs, inv[~lin], -v[~lin])
    out.add("eq", inv[lin], d[lin], v[lin], rhs, owners[row_of])
