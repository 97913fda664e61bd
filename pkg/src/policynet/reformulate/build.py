"""Compilation of the design problems into linear programs.

Every agent's trajectory is rolled out symbolically as an
:class:`AffineExpr` in the policy parameters and the uncertainty the agent
is exposed to.  Constraints, forecast-set membership and the worst-case
cost then become robust rows, each robustified only over the blocks it
actually touches, so local designs never see the product of all agents'
uncertainty sets.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from ..lp import LinearProgram
from ..model import (ConfigError, DesignConfig, Mode, NetworkSpec, errors, ordered_neighbors,
                     out_neighbors, topological_order, validate)
from ..policy import PolicyLayout, layout, primitive_set
from ..uncertainty import Polyhedron, box
from .expr import AffineExpr, make_key
from .registry import Decisions, Uncertainty
from .robust import Rows, deterministic, dualize, expand_vertices, identically_zero

EXACT_SIGN_ENUM = 6


@dataclass
class Contract:
    """Compiled forecast set of one agent over its used committed coordinates."""

    agent: int
    mode: str
    comps: np.ndarray
    n: int
    T: int
    z: np.ndarray  # (T, m) decision ids
    s_ids: np.ndarray  # (T, p) uncertainty ids
    y: np.ndarray | None = None  # (T, m) decision ids
    rotation: np.ndarray | None = None  # (T, m, m)
    S: Polyhedron | None = None
    Y_value: np.ndarray | None = None  # (T*m, T*p) when fixed
    Y_ids: np.ndarray | None = None  # (T*m, T*p), 0 where structurally zero
    cert_unc: np.ndarray | None = None
    cert_ids: np.ndarray | None = None  # (T*p, 1 + len(cert_unc))
    cert_value: tuple | None = None  # (const (T*p,), G (T*p, len(cert_unc)))

    @property
    def m(self) -> int:
        return len(self.comps)

    @property
    def p(self) -> int:
        return self.s_ids.shape[1]


@dataclass
class PolicyVars:
    gamma: np.ndarray  # (nu,)
    unc: np.ndarray  # (nvis,)
    K: np.ndarray  # (nu, nvis)
    theta_index: np.ndarray  # (nu, nvis) positions in the layout's parameter vector


@dataclass
class Compiled:
    net: NetworkSpec
    cfg: DesignConfig
    lp: LinearProgram
    decs: Decisions
    unc: Uncertainty
    x: dict
    u: dict
    commit: dict
    policies: dict  # agent -> list[PolicyVars]
    layouts: dict  # agent -> PolicyLayout
    contracts: dict  # agent -> Contract
    ell: dict  # agent -> decision id
    used_by: dict = field(default_factory=dict)

    def domain(self, i: int) -> np.ndarray:
        """Uncertainty ids agent ``i``'s trajectory depends on."""
        ids = [e.unc_ids() for e in self.x[i] + self.u[i]]
        return np.unique(np.concatenate(ids)) if ids else np.zeros(0, np.int64)


# -- helpers ----------------------------------------------------------------

def _rule(decs: Decisions, name: str, rows: int, unc_ids: np.ndarray, owner: int,
          labels_unc=None):
    """Affine rule ``c + C v`` in the listed uncertainties with fresh decisions."""
    c = decs.add(f"{name}.c", rows, owner=owner)
    C = decs.add(f"{name}.K", (rows, len(unc_ids)), owner=owner) if len(unc_ids) else \
        np.zeros((rows, 0), dtype=np.int64)
    r = np.concatenate([np.arange(rows), np.repeat(np.arange(rows), len(unc_ids))])
    keys = np.concatenate([make_key(0, c), make_key(np.tile(unc_ids, rows), C.ravel())])
    expr = AffineExpr.from_triplets(rows, r, keys, np.ones(len(keys)))
    return expr, c, C


def _numeric(const, G, unc_ids) -> AffineExpr:
    """Expression ``const + G @ v[unc_ids]`` without decisions."""
    G = sp.coo_matrix(G)
    m = len(const)
    rows = np.concatenate([np.arange(m), G.row])
    keys = np.concatenate([np.zeros(m, np.int64), make_key(np.asarray(unc_ids)[G.col], 0)])
    vals = np.concatenate([const, G.data])
    return AffineExpr.from_triplets(m, rows, keys, vals).pruned()


def _used_components(net: NetworkSpec, cfg: DesignConfig):
    """Committed coordinates of ``j`` that enter the dynamics of each out-neighbour."""
    used_by: dict[tuple[int, int], np.ndarray] = {}
    for a in net.agents:
        off = 0
        for j in ordered_neighbors(net, a.id):
            nc = net.agent(j).committed_dim(cfg.committed_variable)
            cols = np.zeros(nc, dtype=bool)
            for t in range(a.T):
                cols |= np.any(a.B[t][:, off:off + nc] != 0, axis=0)
            used_by[(j, a.id)] = np.flatnonzero(cols)
            off += nc
    used = {}
    for a in net.agents:
        parts = [used_by[(a.id, i)] for i in sorted(out_neighbors(net, a.id))]
        used[a.id] = np.unique(np.concatenate(parts)) if parts else np.zeros(0, int)
    return used, used_by


def _rotation(cfg: DesignConfig, j: int, T: int, comps: np.ndarray, n: int):
    rot = (cfg.rotation or {}).get(j)
    if rot is None:
        return None
    rot = np.asarray(rot, dtype=float)
    if rot.ndim == 2:
        rot = np.broadcast_to(rot, (T,) + rot.shape)
    if rot.shape[1] == n and len(comps) != n:
        rot = rot[:, comps][:, :, comps]
    return np.array(rot)


# -- main entry ---------------------------------------------------------------

def build(net: NetworkSpec, cfg: DesignConfig, fixed_Y: dict | None = None, *,
          certificates: dict | None = None, check: bool = True) -> Compiled:
    """Compile the design problem of ``cfg.mode`` into a :class:`Compiled` LP.

    For ``LOCAL_FLEXIBLE`` either ``fixed_Y`` (agent -> ``(T*m, T*p)``
    matrix over the agent's used committed coordinates) or
    ``certificates`` (agent -> ``(const, G)`` of a fixed membership
    certificate, making ``Y`` a decision) must be supplied.
    """
    if check:
        diags = errors(validate(net, cfg))
        if diags:
            raise ConfigError("; ".join(map(str, diags)))
    mode = Mode(cfg.mode)
    if mode == Mode.LOCAL_FLEXIBLE and fixed_Y is None and certificates is None:
        raise ConfigError("the flexible local design needs fixed_Y or fixed certificates")

    decs = Decisions()
    unc = Uncertainty()
    ids = net.ids
    T = net.T
    for a in net.agents:
        coords = [("xi", a.id, t, k) for t in range(a.T) for k in range(a.nxi)]
        unc.add_set(coords, a.Xi)

    used, used_by = _used_components(net, cfg)
    contracts: dict[int, Contract] = {}
    if mode.is_local:
        for j in ids:
            comps = used[j]
            if not len(comps):
                continue
            aj = net.agent(j)
            n = aj.committed_dim(cfg.committed_variable)
            m = len(comps)
            if mode == Mode.LOCAL_RECT:
                s_ids = np.stack([unc.add_set([("s", j, t, int(k)) for k in comps],
                                              box(-np.ones(m), np.ones(m))) for t in range(T)]) \
                    if T else np.zeros((0, m), np.int64)
                y = decs.add(f"a{j}.y", (T, m), lb=0.0, owner=-1,
                             labels=[f"{t},{k}" for t in range(T) for k in comps])
                z = decs.add(f"a{j}.z", (T, m), owner=-1,
                             labels=[f"{t},{k}" for t in range(T) for k in comps])
                contracts[j] = Contract(j, "rect", comps, n, T, z, s_ids, y=y,
                                        rotation=_rotation(cfg, j, T, comps, n))
            else:
                S = primitive_set(net, cfg, j)
                p = S.dim
                s_ids = np.stack([unc.add_set([("s", j, t, k) for k in range(p)], S)
                                  for t in range(T)]) if T else np.zeros((0, p), np.int64)
                z = decs.add(f"a{j}.z", (T, m), owner=-1,
                             labels=[f"{t},{k}" for t in range(T) for k in comps])
                con = Contract(j, "flexible", comps, n, T, z, s_ids, S=S)
                if certificates is None:
                    Yv = np.asarray(fixed_Y[j], dtype=float)
                    if Yv.shape != (T * m, T * p):
                        raise ConfigError(f"fixed Y of agent {j} has shape {Yv.shape}, "
                                          f"expected {(T * m, T * p)}")
                    con.Y_value = _lower(Yv, T, m, p)
                else:
                    Y_ids = np.zeros((T * m, T * p), dtype=np.int64)
                    for t in range(T):
                        for tau in range(t + 1):
                            Y_ids[t * m:(t + 1) * m, tau * p:(tau + 1) * p] = decs.add(
                                f"a{j}.Y", (m, p), owner=-1,
                                labels=[f"{t},{tau},{a},{b}" for a in range(m) for b in range(p)])
                    con.Y_ids = Y_ids
                contracts[j] = con

    # policies
    layouts: dict[int, PolicyLayout] = {}
    policies: dict[int, list[PolicyVars]] = {}
    u_expr: dict[int, list[AffineExpr]] = {}
    for a in net.agents:
        L = layout(net, cfg, a.id)
        layouts[a.id] = L
        plist, ulist = [], []
        for t in range(a.T):
            vis, pos = [], []
            for src, tau, off in L.stage_blocks(t):
                s = L.sources[src]
                allowed = None
                if s.kind == "auxiliary" and mode == Mode.LOCAL_RECT:
                    allowed = set(used_by.get((s.agent, a.id), ()))
                for k in range(s.dim):
                    if allowed is not None and k not in allowed:
                        continue
                    key = (s.unc_kind, s.agent, tau, k)
                    if key in unc.index:
                        vis.append(unc.index[key])
                        pos.append(off + k)
            vis = np.asarray(vis, dtype=np.int64)
            pos = np.asarray(pos, dtype=np.int64)
            dims = {off: L.sources[src].dim for src, tau, off in L.stage_blocks(t)}
            expr, g, K = _rule(decs, f"a{a.id}.u{t}", a.nu, vis, a.id)
            # theta index of K[r, col]: block offset + r * dim + comp
            if len(vis):
                offs = np.array([max(o for o in dims if o <= p_) for p_ in pos])
                comp = pos - offs
                dim = np.array([dims[o] for o in offs])
                tidx = offs[None, :] + np.arange(a.nu)[:, None] * dim[None, :] + comp[None, :]
            else:
                tidx = np.zeros((a.nu, 0), dtype=np.int64)
            plist.append(PolicyVars(g, vis, K, tidx))
            ulist.append(expr)
        policies[a.id] = plist
        u_expr[a.id] = ulist

    # beliefs of local designs
    def belief(j: int, t: int, n: int) -> AffineExpr:
        con = contracts.get(j)
        if con is None:
            return AffineExpr.zeros(n)
        m, p = con.m, con.p
        if con.mode == "rect":
            F = np.eye(m) if con.rotation is None else con.rotation[t]
            inner = AffineExpr.from_triplets(
                m, np.concatenate([np.arange(m), np.arange(m)]),
                np.concatenate([make_key(con.s_ids[t], con.y[t]), make_key(0, con.z[t])]),
                np.ones(2 * m))
            zeta = F @ inner
        else:
            zeta = AffineExpr.decisions(con.z[t])
            rows_, keys_, vals_ = [], [], []
            for tau in range(t + 1):
                blk = slice(tau * p, (tau + 1) * p)
                rs = slice(t * m, (t + 1) * m)
                if con.Y_value is not None:
                    Yb = con.Y_value[rs, blk]
                    r_, c_ = np.nonzero(Yb)
                    rows_.append(r_)
                    keys_.append(make_key(con.s_ids[tau][c_], 0))
                    vals_.append(Yb[r_, c_])
                else:
                    Yb = con.Y_ids[rs, blk]
                    r_, c_ = np.nonzero(Yb)
                    rows_.append(r_)
                    keys_.append(make_key(con.s_ids[tau][c_], Yb[r_, c_]))
                    vals_.append(np.ones(len(r_)))
            if rows_:
                zeta = zeta + AffineExpr.from_triplets(m, np.concatenate(rows_),
                                                       np.concatenate(keys_),
                                                       np.concatenate(vals_))
        P = sp.csr_matrix((np.ones(len(con.comps)), (con.comps, np.arange(len(con.comps)))),
                          shape=(n, len(con.comps)))
        return zeta.lmul(P)

    # rollout
    comm = cfg.committed_variable
    x_expr: dict[int, list[AffineExpr]] = {a.id: [AffineExpr.constant(a.x_init)] for a in net.agents}
    order = ids
    if comm == "next_state" and not mode.is_local:
        order = topological_order(net) or ids

    def committed(j: int, t: int) -> AffineExpr:
        if comm == "input":
            return u_expr[j][t]
        return x_expr[j][t + 1] if comm == "next_state" else x_expr[j][t]

    for t in range(T):
        for i in order:
            a = net.agent(i)
            parts = []
            for j in ordered_neighbors(net, i):
                nc = net.agent(j).committed_dim(comm)
                parts.append(belief(j, t, nc) if mode.is_local else committed(j, t))
            xi = AffineExpr.uncertainties(unc.ids("xi", i, t, range(a.nxi))) if a.nxi else \
                AffineExpr.zeros(0)
            nxt = a.A[t] @ x_expr[i][t] + a.offset(t)
            if parts:
                nxt = nxt + a.B[t] @ AffineExpr.vstack(parts)
            if a.nu:
                nxt = nxt + a.D[t] @ u_expr[i][t]
            if a.nxi:
                nxt = nxt + a.E[t] @ xi
            x_expr[i].append(nxt.pruned())
    commit = {j: [committed(j, t) for t in range(T)] for j in ids}

    robust: list[tuple[AffineExpr, int]] = []
    zero: list[tuple[AffineExpr, int]] = []
    plain = Rows()

    # operational constraints
    for a in net.agents:
        if len(a.h):
            X = AffineExpr.vstack(x_expr[a.id])
            parts = [a.Hx @ X]
            if a.nu and a.T:
                parts.append(a.Hu @ AffineExpr.vstack(u_expr[a.id]))
            e = parts[0] if len(parts) == 1 else parts[0] + parts[1]
            robust.append((e - a.h, a.id))

    # forecast set membership
    for j, con in contracts.items():
        if con.mode == "rect":
            for t in range(T):
                c = commit[j][t][con.comps.tolist()]
                if con.rotation is not None:
                    c = con.rotation[t].T @ c
                r = c - AffineExpr.decisions(con.z[t])
                ydec = AffineExpr.decisions(con.y[t])
                robust.append((r - ydec, j))
                robust.append((-r - ydec, j))
                if cfg.nonnegative_forecast:
                    zero_ok = AffineExpr.decisions(con.y[t]) - AffineExpr.decisions(con.z[t])
                    deterministic(zero_ok, j, plain)
        else:
            _flexible_membership(con, commit[j], decs, unc, robust, zero, certificates, j)

    # worst-case cost per agent
    ell = {}
    for a in net.agents:
        ell[a.id] = int(decs.add(f"a{a.id}.ell", (), owner=a.id)[0])
        decs.set_cost(ell[a.id])
        row = _cost_row(a, x_expr[a.id], u_expr[a.id], decs, robust, cfg)
        robust.append((row - AffineExpr.decisions([ell[a.id]]), a.id))

    rows = Rows()
    if robust:
        R = AffineExpr.vstack([e for e, _ in robust])
        owners = np.concatenate([np.full(e.m, o) for e, o in robust])
        if cfg.robust == "vertex":
            expand_vertices(R, owners, unc, rows)
        else:
            dualize(R, owners, unc, decs, rows)
    if zero:
        Z = AffineExpr.vstack([e for e, _ in zero])
        owners = np.concatenate([np.full(e.m, o) for e, o in zero])
        identically_zero(Z, owners, rows)

    c, lb, ub, col_owner = decs.arrays()
    n = decs.n
    A1, b1, o1, E1, e1, p1 = rows.matrices(n)
    A2, b2, o2, _, _, _ = plain.matrices(n)
    lp = LinearProgram(c, sp.vstack([A1, A2], format="csr"), np.concatenate([b1, b2]), E1, e1,
                       lb, ub, list(decs.names), col_owner=col_owner,
                       ub_owner=np.concatenate([o1, o2]), eq_owner=p1,
                       info={"mode": mode.value})
    return Compiled(net, cfg, lp, decs, unc, x_expr, u_expr, commit, policies, layouts,
                    contracts, ell, used_by)


def _lower(Y: np.ndarray, T: int, m: int, p: int) -> np.ndarray:
    """Zero the blocks above the diagonal (the forecast map must be causal)."""
    out = np.array(Y, dtype=float)
    for t in range(T):
        out[t * m:(t + 1) * m, (t + 1) * p:] = 0.0
    return out


def _flexible_membership(con: Contract, commit_j, decs, unc, robust, zero, certificates, j):
    T, m, p = con.T, con.m, con.p
    if not T:
        return
    c = AffineExpr.vstack([commit_j[t][con.comps.tolist()] for t in range(T)])
    zeta_const = AffineExpr.decisions(con.z.ravel())
    if certificates is None:
        cert_unc = c.unc_ids()
        cert, c0, C = _rule(decs, f"a{j}.cert", T * p, cert_unc, j)
        con.cert_unc = cert_unc
        con.cert_ids = np.column_stack([c0, C]) if C.size else c0[:, None]
        Ys = cert.lmul(con.Y_value)
        zero.append((c - Ys - zeta_const, j))
        W, w = con.S.W, con.S.w
        for t in range(T):
            blk = cert[list(range(t * p, (t + 1) * p))]
            robust.append((-(W @ blk) + w, j))
    else:
        const, G, cert_unc = certificates[j]
        cert_unc = np.asarray(cert_unc, dtype=np.int64)
        con.cert_unc = cert_unc
        con.cert_value = (np.asarray(const, float), sp.csr_matrix(G))
        G = sp.csr_matrix(G)
        rows_, keys_, vals_ = [], [], []
        for r in range(T * m):
            cols = np.flatnonzero(con.Y_ids[r])
            for col in cols:
                yid = con.Y_ids[r, col]
                if const[col] != 0:
                    rows_.append([r]); keys_.append([make_key(0, yid)]); vals_.append([const[col]])
                sl = slice(G.indptr[col], G.indptr[col + 1])
                gi = G.indices[sl]
                if len(gi):
                    rows_.append(np.full(len(gi), r))
                    keys_.append(make_key(cert_unc[gi], yid))
                    vals_.append(G.data[sl])
        Ys = AffineExpr.from_triplets(T * m, np.concatenate(rows_) if rows_ else [],
                                      np.concatenate(keys_) if keys_ else [],
                                      np.concatenate(vals_) if vals_ else []) if rows_ else \
            AffineExpr.zeros(T * m)
        zero.append((c - Ys - zeta_const, j))


def _epigraph(e: AffineExpr, q, decs: Decisions, owner: int, name: str, robust, adaptive: bool):
    """Add rows bounding ``||e||_q`` by an affine rule; returns the rule."""
    support = e.unc_ids() if adaptive else np.zeros(0, np.int64)
    m = e.m
    if q == np.inf or m == 1:
        tau, _, _ = _rule(decs, name, 1, support, owner)
        tt = _tile(tau, m)
        robust.append((e - tt, owner))
        robust.append((-e - tt, owner))
        return tau
    if m <= EXACT_SIGN_ENUM:
        tau, _, _ = _rule(decs, name, 1, support, owner)
        signs = np.array(list(itertools.product((1.0, -1.0), repeat=m)))
        robust.append((signs @ e - _tile(tau, len(signs)), owner))
        return tau
    parts = []
    for k in range(m):
        ek = e[[k]]
        sup_k = ek.unc_ids() if adaptive else np.zeros(0, np.int64)
        tk, _, _ = _rule(decs, f"{name}.{k}", 1, sup_k, owner)
        robust.append((ek - tk, owner))
        robust.append((-ek - tk, owner))
        parts.append(tk)
    total = parts[0]
    for tk in parts[1:]:
        total = total + tk
    return total


def _tile(e: AffineExpr, m: int) -> AffineExpr:
    return e.lmul(np.ones((m, 1)))


def epigraph_norm(q, expr: AffineExpr, decs: Decisions, owner: int = 0, name: str = "tau",
                  adaptive: bool = True):
    """Robust rows whose feasibility means ``rule >= ||expr||_q``.

    Returns ``(rule, rows)`` where ``rule`` is the epigraph expression and
    ``rows`` the list of ``(expression, owner)`` rows to be robustified.
    """
    rows: list = []
    rule = _epigraph(expr, q, decs, owner, name, rows, adaptive)
    return rule, rows


def _cost_row(a, xs, us, decs, robust, cfg) -> AffineExpr:
    q = 1 if a.q_norm == 1 else np.inf
    total = AffineExpr.zeros(1)
    adaptive = cfg.adaptive_epigraph
    for t, Q in enumerate(a.Q):
        if Q is not None and np.any(Q):
            total = total + _epigraph(Q @ xs[t], q, decs, a.id, f"a{a.id}.tx{t}", robust, adaptive)
    for t, R in enumerate(a.R):
        if R is not None and np.any(R):
            total = total + _epigraph(R @ us[t], q, decs, a.id, f"a{a.id}.tu{t}", robust, adaptive)
    if a.cx is not None:
        for t in range(a.T + 1):
            if np.any(a.cx[t]):
                total = total + a.cx[t][None, :] @ xs[t]
    if a.cu is not None:
        for t in range(a.T):
            if np.any(a.cu[t]):
                total = total + a.cu[t][None, :] @ us[t]
    if a.hinge_pos is not None or a.hinge_neg is not None:
        hp = a.hinge_pos if a.hinge_pos is not None else np.zeros((a.T + 1, a.nx))
        hn = a.hinge_neg if a.hinge_neg is not None else np.zeros((a.T + 1, a.nx))
        for t in range(a.T + 1):
            for k in range(a.nx):
                if hp[t, k] == 0 and hn[t, k] == 0:
                    continue
                e = xs[t][[k]]
                sup = e.unc_ids() if adaptive else np.zeros(0, np.int64)
                tau, _, _ = _rule(decs, f"a{a.id}.h{t}.{k}", 1, sup, a.id)
                if hp[t, k]:
                    robust.append((e * hp[t, k] - tau, a.id))
                else:
                    robust.append((AffineExpr.zeros(1) - tau, a.id))
                if hn[t, k]:
                    robust.append((e * (-hn[t, k]) - tau, a.id))
                else:
                    robust.append((AffineExpr.zeros(1) - tau, a.id))
                total = total + tau
    return total
