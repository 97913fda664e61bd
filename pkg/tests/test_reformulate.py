import itertools
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog

from policynet import DesignConfig, Mode, NetworkSpec, box
from policynet.lp import LinearProgram, solve
from policynet.policy import ForecastSetParam
from policynet.reformulate import (AffineExpr, Decisions, Rows, Uncertainty, bcd_flexible,
                                   build, dualize, epigraph_norm, rollout, solve_design)
from policynet.reformulate.build import EXACT_SIGN_ENUM
from policynet.reformulate.expr import make_key
from policynet.scenarios import illustrative, random_bipartite, random_network
from policynet.uncertainty import vertices

from conftest import integrator


def robust_min(decs, unc, rows, objective):
    """Minimize the worst case of ``objective`` subject to robust ``rows <= 0``."""
    ell = decs.add("ell", (), owner=0)
    out = Rows()
    for expr, owner in rows + [(objective - AffineExpr.decisions(ell), 0)]:
        dualize(expr, owner, unc, decs, out)
    c, lb, ub, owner = decs.arrays()
    c[ell - 1] = 1.0
    A_ub, b_ub, _, A_eq, b_eq, _ = out.matrices(decs.n)
    lp = LinearProgram(c, A_ub, b_ub, A_eq, b_eq, lb, ub, decs.names)
    return solve(lp)


def feasible_at(decs, unc, expr, values):
    """Whether the dualized rows admit multipliers once decisions are fixed."""
    out = Rows()
    dualize(expr, 0, unc, decs, out)
    c, lb, ub, _ = decs.arrays()
    lb, ub = lb.copy(), ub.copy()
    for d, v in values.items():
        lb[d - 1] = ub[d - 1] = v
    A_ub, b_ub, _, A_eq, b_eq, _ = out.matrices(decs.n)
    sol = solve(LinearProgram(np.zeros(decs.n), A_ub, b_ub, A_eq, b_eq, lb, ub, decs.names))
    return sol.ok


# -- epigraphs ----------------------------------------------------------------

@pytest.mark.parametrize("q, want", [(np.inf, 4.0), (1, 7.0)])
def test_epigraph_of_constant(q, want):
    decs = Decisions()
    rule, rows = epigraph_norm(q, AffineExpr.constant([3.0, -4.0]), decs)
    sol = robust_min(decs, Uncertainty(), rows, rule)
    assert sol.objective == pytest.approx(want, abs=1e-9)


@pytest.mark.parametrize("m, adaptive", [(3, True), (3, False), (6, True)])
def test_one_norm_epigraph_over_box(m, adaptive, rng):
    unc = Uncertainty()
    ids = unc.add_set([("xi", 1, k, 0) for k in range(3)], box(-np.ones(3), np.ones(3)))
    M, b = rng.normal(size=(m, 3)), rng.normal(size=m)
    expr = AffineExpr.uncertainties(ids).lmul(M) + AffineExpr.constant(b)
    decs = Decisions()
    rule, rows = epigraph_norm(1, expr, decs, adaptive=adaptive)
    sol = robust_min(decs, unc, rows, rule)
    want = max(np.abs(M @ v + b).sum() for v in vertices(box(-np.ones(3), np.ones(3))))
    assert sol.objective == pytest.approx(want, rel=1e-8)


def test_long_one_norm_epigraph_is_an_upper_bound(rng):
    # past the sign-enumeration limit the bound is per component, hence conservative
    unc = Uncertainty()
    ids = unc.add_set([("xi", 1, k, 0) for k in range(3)], box(-np.ones(3), np.ones(3)))
    M, b = rng.normal(size=(EXACT_SIGN_ENUM + 1, 3)), rng.normal(size=EXACT_SIGN_ENUM + 1)
    expr = AffineExpr.uncertainties(ids).lmul(M) + AffineExpr.constant(b)
    decs = Decisions()
    rule, rows = epigraph_norm(1, expr, decs)
    sol = robust_min(decs, unc, rows, rule)
    want = max(np.abs(M @ v + b).sum() for v in vertices(box(-np.ones(3), np.ones(3))))
    assert sol.objective >= want - 1e-8


# -- dualization --------------------------------------------------------------

def scalar_row():
    decs, unc = Decisions(), Uncertainty()
    a, b = int(decs.add("a", ())[0]), int(decs.add("b", ())[0])
    xi = unc.add_set([("xi", 1, 0, 0)], box([-1.0], [1.0]))[0]
    expr = AffineExpr.from_triplets(1, [0, 0], [make_key(0, a), make_key(xi, b)], [1.0, 1.0])
    return decs, unc, expr, a, b


def test_dualize_interval_row():
    rng = np.random.default_rng(0)
    for va, vb in rng.uniform(-2, 2, (40, 2)):
        decs, unc, expr, a, b = scalar_row()
        assert feasible_at(decs, unc, expr, {a: va, b: vb}) == (va + abs(vb) <= 0)


def test_dualize_without_uncertainty():
    for va in (-1.0, 0.5):
        decs, unc = Decisions(), Uncertainty()
        a = int(decs.add("a", ())[0])
        assert feasible_at(decs, unc, AffineExpr.decisions([a]), {a: va}) == (va <= 0)


def random_row(rng, unc, decs, ids, nd=3):
    d = decs.add("d", nd)
    keys, vals = [make_key(0, 0)], [rng.normal()]
    keys += list(make_key(0, d)); vals += list(rng.normal(size=nd))
    for u in ids:
        keys.append(make_key(u, 0)); vals.append(rng.normal())
        keys += list(make_key(u, d)); vals += list(rng.normal(size=nd))
    return AffineExpr.from_triplets(1, np.zeros(len(keys), int), keys, vals), d


def test_dualize_matches_vertices_on_box():
    rng = np.random.default_rng(5)
    P = box(-np.ones(3), rng.uniform(0.5, 2, 3))
    V = vertices(P)
    agree = 0
    for _ in range(50):
        decs, unc = Decisions(), Uncertainty()
        ids = unc.add_set([("xi", 1, k, 0) for k in range(3)], P)
        expr, d = random_row(rng, unc, decs, ids)
        x = rng.normal(size=3)
        c, G = expr.substitute(np.r_[x], unc.n)
        oracle = bool(np.all(c + G @ V.T <= 1e-9))
        agree += feasible_at(decs, unc, expr, dict(zip(d, x))) == oracle
    assert agree == 50


def test_dualize_splits_rows_by_block():
    # two independent intervals: worst case adds up blockwise
    decs, unc = Decisions(), Uncertainty()
    a = decs.add("a", ())
    i1 = unc.add_set([("xi", 1, 0, 0)], box([-1.0], [1.0]))
    i2 = unc.add_set([("xi", 2, 0, 0)], box([0.0], [3.0]))
    expr = AffineExpr.uncertainties(np.r_[i1, i2]).lmul([[2.0, -1.0]]) - AffineExpr.decisions(a)
    sol = robust_min(decs, unc, [(expr, 0)], AffineExpr.decisions(a))
    assert sol.objective == pytest.approx(2.0)


# -- compiled designs ---------------------------------------------------------

MODES = [Mode.CENTRALIZED, Mode.PARTIALLY_NESTED, Mode.LOCAL_RECT]


@pytest.mark.parametrize("seed", range(4))
def test_ordering_and_dualization_exactness(seed):
    net = random_network(seed, M=3, T=2)
    vals = {}
    for m in MODES:
        cfg = DesignConfig(mode=m)
        vals[m] = solve_design(net, cfg).objective
        vertex = solve_design(net, replace(cfg, robust="vertex")).objective
        assert vals[m] == pytest.approx(vertex, rel=1e-6, abs=1e-6)
    assert vals[Mode.LOCAL_RECT] >= vals[Mode.PARTIALLY_NESTED] - 1e-6
    assert vals[Mode.PARTIALLY_NESTED] >= vals[Mode.CENTRALIZED] - 1e-6


def test_illustrative_centralized_matches_vertex_oracle():
    net, cfg = illustrative()
    dual = solve_design(net, cfg.with_mode("centralized")).objective
    vert = solve_design(net, replace(cfg.with_mode("centralized"), robust="vertex")).objective
    assert dual == pytest.approx(vert, abs=1e-6)


def nominal_pair(T=2, x0=(1.0, -0.5), w=(0.5, -0.25)):
    """Two coupled integrators solved as a plain LP with |.| epigraphs."""
    # variables: x1[0..T], x2[0..T], u1[0..T-1], u2[0..T-1], then |.| bounds for each
    nX, nU = T + 1, T
    n = 2 * nX + 2 * nU
    X1, X2, U1, U2 = (np.arange(nX), nX + np.arange(nX), 2 * nX + np.arange(nU),
                      2 * nX + nU + np.arange(nU))
    A_eq, b_eq = [], []
    def row(entries, rhs):
        r = np.zeros(2 * n); [r.__setitem__(k, v) for k, v in entries]; A_eq.append(r); b_eq.append(rhs)
    row([(X1[0], 1)], x0[0]); row([(X2[0], 1)], x0[1])
    for t in range(T):
        row([(X1[t + 1], 1), (X1[t], -1), (U1[t], -1)], w[0])
        row([(X2[t + 1], 1), (X2[t], -1), (X1[t], -1), (U2[t], -1)], w[1])
    A_ub = []
    for k in range(n):
        for s in (1, -1):
            r = np.zeros(2 * n); r[k] = s; r[n + k] = -1; A_ub.append(r)
    c = np.r_[np.zeros(n), np.ones(n)]
    res = linprog(c, A_ub=A_ub, b_ub=np.zeros(len(A_ub)), A_eq=A_eq, b_eq=b_eq,
                  bounds=[(None, None)] * n + [(0, None)] * n)
    return res.fun


@pytest.mark.parametrize("mode", MODES)
def test_singleton_sets_give_nominal_problem(mode):
    T, x0, w = 2, (1.0, -0.5), (0.5, -0.25)
    agents = [integrator(i, T, n_in=i - 1, x0=[x0[i - 1]],
                         Xi=box(np.full(T, w[i - 1]), np.full(T, w[i - 1]))) for i in (1, 2)]
    net = NetworkSpec(agents, [(1, 2)])
    got = solve_design(net, DesignConfig(mode=mode)).objective
    assert got == pytest.approx(nominal_pair(T, x0, w), abs=1e-7)


def test_rollout_first_stage():
    a = integrator(1, T=1, x0=[0.7])
    net = NetworkSpec([replace(a, D=[np.zeros((1, 1))])], [])
    comp = build(net, DesignConfig(mode=Mode.CENTRALIZED), check=False)
    x = rollout(net, DesignConfig(mode=Mode.CENTRALIZED), 1)
    for xi in (-1.0, 0.3):
        v = np.zeros(comp.unc.n)
        v[comp.unc.id("xi", 1, 0, 0) - 1] = xi
        assert x[1].evaluate(np.zeros(comp.lp.n), v)[0] == pytest.approx(0.7 + xi)


def test_illustrative_first_agent_state():
    net, cfg = illustrative()
    comp = build(net, cfg.with_mode("centralized"))
    a = net.agent(1)
    rng = np.random.default_rng(2)
    theta = rng.normal(size=comp.lp.n)
    for _ in range(5):
        v = rng.uniform(-1, 1, comp.unc.n)
        xi = np.array([v[comp.unc.id("xi", 1, 0, k) - 1] for k in range(2)])
        u = comp.u[1][0].evaluate(theta, v)
        assert np.allclose(comp.x[1][1].evaluate(theta, v), a.D[0] @ u + a.E[0] @ xi, atol=1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_rollout_matches_simulation(seed):
    net = random_network(seed, M=3, T=2, arcs=[(1, 2), (2, 3), (1, 3)])
    comp = build(net, DesignConfig(mode=Mode.CENTRALIZED))
    rng = np.random.default_rng(seed)
    theta = rng.normal(size=comp.lp.n)
    v = rng.uniform(-1, 1, comp.unc.n)
    X = {i: [a.x_init] for i, a in ((a.id, a) for a in net.agents)}
    for t in range(net.T):
        for a in net.agents:
            i = a.id
            c = [X[j][t] for j, k in net.arcs if k == i]
            xi = np.array([v[comp.unc.id("xi", i, t, k) - 1] for k in range(a.nxi)])
            u = comp.u[i][t].evaluate(theta, v)
            nxt = a.A[t] @ X[i][t] + a.D[t] @ u + a.E[t] @ xi
            if c:
                nxt = nxt + a.B[t] @ np.concatenate(c)
            X[i].append(nxt)
    for i in net.ids:
        for t in range(net.T + 1):
            assert np.allclose(comp.x[i][t].evaluate(theta, v), X[i][t], atol=1e-10)


def test_flexible_requires_fixed_shape():
    from policynet import ConfigError
    net = random_bipartite(0)
    with pytest.raises(ConfigError):
        build(net, DesignConfig(mode=Mode.LOCAL_FLEXIBLE))


@pytest.mark.parametrize("seed", range(3))
def test_bcd_sweeps_never_increase(seed):
    net = random_bipartite(seed, T=2)
    res, Y, z, log = bcd_flexible(net, DesignConfig(mode=Mode.LOCAL_FLEXIBLE))
    obj = [row["phase_i"] for row in log]
    assert all(b <= a + 1e-7 for a, b in zip(obj, obj[1:]))
    pn = solve_design(net, DesignConfig(mode=Mode.PARTIALLY_NESTED)).objective
    assert res.objective >= pn - 1e-6


def test_rect_membership_both_directions(rng):
    par = ForecastSetParam("rect", rng.normal(size=(3, 2)), y=rng.uniform(0.1, 1, (3, 2)))
    lo, hi = par.bounds()
    for _ in range(100):
        s = rng.uniform(-1, 1, (3, 2))
        x = par.image(s)
        assert np.all(lo - 1e-12 <= x) and np.all(x <= hi + 1e-12)
        x = rng.uniform(lo, hi)
        back = np.stack([(x[t] - par.z[t]) / par.y[t] for t in range(3)])
        assert np.all(np.abs(back) <= 1 + 1e-12) and np.allclose(par.image(back), x)


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 500), st.floats(0.1, 1.0), st.sampled_from(MODES))
def test_shrinking_uncertainty_never_hurts(seed, scale, mode):
    net = random_network(seed, M=2, T=2)
    small = NetworkSpec([replace(a, Xi=box(-scale * np.ones(a.Xi.dim), scale * np.ones(a.Xi.dim)))
                         for a in net.agents], net.arcs)
    cfg = DesignConfig(mode=mode)
    assert solve_design(small, cfg).objective <= solve_design(net, cfg).objective + 1e-6
