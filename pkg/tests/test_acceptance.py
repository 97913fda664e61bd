"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line."""

import itertools
from dataclasses import replace

import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from policynet import DesignConfig, Mode, box, simplex
from policynet import admm
from policynet.lp import LinearProgram, solve
from policynet.policy import AffinePolicy, ForecastSetParam, InfoSource, make_layout, translate_gamma_to_psi
from policynet.reformulate import (AffineExpr, Decisions, Rows, Uncertainty, bcd_flexible, build,
                                   dualize, solve_design, tightest_contracts)
from policynet.reformulate.expr import make_key
from policynet.scenarios import (EnergyHubParams, SupplyChainParams, energy_hub, illustrative,
                                 qf_bounds, random_bipartite, random_network, rotation,
                                 suboptimality, supply_chain)
from policynet.simulate import roll


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
        assert ok, detail
    return emit


MODES = [Mode.CENTRALIZED, Mode.PARTIALLY_NESTED, Mode.LOCAL_RECT]


def test_ordering_chain(report):
    worst = 0.0
    for seed in range(20):
        net = random_network(seed)
        assert len(net.agents) <= 5 and net.T <= 4
        c, pn, loc = (solve_design(net, DesignConfig(mode=m)).objective for m in MODES)
        worst = max(worst, pn - loc, c - pn)
    report(1, worst <= 1e-6, f"20 networks, largest ordering violation {max(worst, 0):.2e}")


def _set_and_vertices(rng, d):
    if rng.random() < 0.5:
        lo = rng.uniform(-2, 0, d)
        hi = lo + rng.uniform(0.1, 2, d)
        V = np.array(list(itertools.product(*zip(lo, hi))))
        return box(lo, hi), V
    return simplex(d), np.vstack([np.zeros(d), np.eye(d)])


def test_dualization_exactness(report):
    rng = np.random.default_rng(2024)
    mismatches = feasible = 0
    for _ in range(50):
        d, nd = int(rng.integers(1, 5)), int(rng.integers(1, 4))
        P, V = _set_and_vertices(rng, d)
        base = rng.normal(size=(d + 1, nd + 1))  # rows: constant, then each coordinate
        for _ in range(50):
            x = rng.normal(size=nd)
            shift = rng.normal() * 2
            decs, unc = Decisions(), Uncertainty()
            dec = decs.add("d", nd)
            ids = unc.add_set([("xi", 1, k, 0) for k in range(d)], P)
            keys, vals = [], []
            for r, u in enumerate(np.r_[0, ids]):
                keys += [make_key(u, 0)] + list(make_key(u, dec))
                vals += [base[r, 0] + (shift if r == 0 else 0.0)] + list(base[r, 1:])
            expr = AffineExpr.from_triplets(1, np.zeros(len(keys), int), keys, vals)
            coef = base[:, 0] + base[:, 1:] @ x
            coef[0] += shift
            oracle = bool(np.all(coef[0] + V @ coef[1:] <= 1e-9))
            out = Rows()
            dualize(expr, 0, unc, decs, out)
            _, lb, ub, _ = decs.arrays()
            lb, ub = lb.copy(), ub.copy()
            lb[dec - 1] = ub[dec - 1] = x
            A_ub, b_ub, _, A_eq, b_eq, _ = out.matrices(decs.n)
            got = solve(LinearProgram(np.zeros(decs.n), A_ub, b_ub, A_eq, b_eq, lb, ub,
                                      decs.names)).ok
            mismatches += got != oracle
            feasible += oracle
    report(2, mismatches == 0,
           f"2500 decision points ({feasible} robustly feasible), {mismatches} mismatches")


def test_flexible_recovers_partially_nested_on_bipartite(report):
    worst = 0.0
    for seed in range(10):
        net = random_bipartite(seed)
        pn = solve_design(net, DesignConfig(mode=Mode.PARTIALLY_NESTED)).objective
        res, *_ = bcd_flexible(net, DesignConfig(mode=Mode.LOCAL_FLEXIBLE))
        worst = max(worst, abs(res.objective - pn) / max(1.0, abs(pn)))
    report(3, worst <= 1e-4, f"10 bipartite DAGs, largest relative gap {worst:.2e}")


def test_illustrative_flexible_and_rotations(report):
    net, cfg = illustrative()
    pn_res = solve_design(net, cfg.with_mode("partially_nested"))
    pn = pn_res.objective
    flex, *_ = bcd_flexible(net, cfg.with_mode("local_flexible"))
    rect = solve_design(net, cfg.with_mode("local_rect")).objective
    # principal axis of agent 1's next state under its own disturbance
    G = pn_res.state_maps(1)[1][1].toarray()[:, :2]
    U = np.linalg.svd(G)[0]
    aligned = np.degrees(np.arctan2(U[1, 0], U[0, 0])) % 180
    rot = lambda a: solve_design(net, replace(cfg.with_mode("local_rect"),
                                              rotation={1: rotation(a)})).objective
    sweep = {float(a): rot(a) for a in np.arange(0, 181, 1)}
    # the curve's minimum: refine around the best grid angle
    best = min(sweep, key=sweep.get)
    fine = minimize_scalar(rot, bounds=(best - 1, best + 1), method="bounded",
                           options={"xatol": 1e-6})
    curve_min = min(min(sweep.values()), fine.fun)
    at_aligned = rot(aligned)
    ok = (abs(flex.objective - pn) <= 1e-5 and rect >= pn - 1e-9
          and min(sweep.values()) >= pn - 1e-9 and fine.fun >= pn - 1e-9
          and abs(curve_min - at_aligned) <= 1e-3)
    report(4, ok, f"flexible {flex.objective:.6f} vs partially nested {pn:.6f}, rectangle "
                  f"{rect:.4f}, curve min {curve_min:.5f} at {fine.x:.2f} deg vs aligned "
                  f"({aligned:.2f} deg) {at_aligned:.5f}")


def test_energy_hub(report):
    gaps, bad = [], []
    for M in (2, 3, 4):
        for seed in range(10):
            net, cfg = energy_hub(EnergyHubParams(M=M), seed=seed)
            dn, dc = energy_hub(EnergyHubParams(M=M, decoupled=True), seed=seed)
            cn, cc = energy_hub(EnergyHubParams(M=M, topology="complete"), seed=seed)
            loc = solve_design(net, cfg).objective
            cen = solve_design(net, cfg.with_mode("centralized")).objective
            dec = solve_design(dn, dc).objective
            com = solve_design(cn, cc).objective
            if not (dec >= loc - 1e-6 and loc >= cen - 1e-6 and com <= loc + 1e-6):
                bad.append((M, seed))
            gaps.append(suboptimality(loc, cen))
    cols_loc, cols_cen = [], []
    for M in (2, 3, 4, 5, 6):
        net, cfg = energy_hub(EnergyHubParams(M=M), seed=0)
        cols_loc.append(build(net, cfg).lp.n)
        cols_cen.append(build(net, cfg.with_mode("centralized")).lp.n)
    step = np.diff(cols_loc)
    linear = np.all(np.abs(np.diff(step)) <= 0.01 * step[:-1])
    superlinear = np.all(np.diff(cols_cen, 2) > 0)
    ok = not bad and np.mean(gaps) <= 10.0 and linear and superlinear
    report(5, ok, f"30 instances, ordering/topology failures {bad}, mean gap {np.mean(gaps):.2f}%, "
                  f"local columns {cols_loc}, centralized columns {cols_cen}")


def test_supply_chain_suboptimality(report):
    worst = 0.0
    for seed in range(1, 11):
        net, cfg = supply_chain(SupplyChainParams.random(seed))
        loc = solve_design(net, cfg).objective
        cen = solve_design(net, cfg.with_mode("centralized")).objective
        worst = max(worst, abs(loc - cen) / abs(cen))
    trend, negative = [], 0
    for T in range(3, 9):
        vals = []
        for seed in range(1, 6):
            net, cfg = supply_chain(SupplyChainParams.random(seed, T=T, delay=True))
            loc = solve_design(net, cfg).objective
            cen = solve_design(net, cfg.with_mode("centralized")).objective
            vals.append(suboptimality(loc, cen))
        negative += sum(v < -1e-6 for v in vals)
        trend.append(float(np.mean(vals)))
    inc = np.diff(trend)
    saturating = bool(np.all(np.diff(inc) <= 1e-9))
    shape = "nonincreasing" if np.all(inc <= 1e-9) else "increasing"
    ok = worst <= 1e-5 and negative == 0 and saturating
    report(6, ok, f"no delay: largest relative gap {worst:.1e}; delay, mean suboptimality over "
                  f"T=3..8: {np.round(trend, 1).tolist()} ({shape}, increments shrinking: "
                  f"{saturating})")


def test_admm_matches_monolithic(report):
    net, cfg = supply_chain(SupplyChainParams.fixed(1.0, T=20))
    mono = solve_design(net, cfg).objective
    res = admm.run(net, cfg, rho=0.1, tol=1e-6, max_iters=50)
    gap = abs(res.objective - mono)
    consensus = max(res.state.primal[-1], res.state.dual[-1])
    ok = res.converged and gap <= 1e-6 and consensus <= 1e-6
    report(7, ok, f"{res.state.k} iterations, objective {res.objective:.9f} vs {mono:.9f} "
                  f"(gap {gap:.1e}), final residual {consensus:.1e}")


def test_policy_translation(report):
    rng = np.random.default_rng(77)
    worst = 0.0
    T, n = 4, 2
    for k in range(10):
        lay = make_layout(1, T, 2, [InfoSource("own_xi", 1, 1, 1), InfoSource("auxiliary", 2, n, k % 2)])
        pol = AffinePolicy(lay, rng.normal(size=lay.count))
        Q = np.stack([np.linalg.qr(rng.normal(size=(n, n)))[0] for _ in range(T)])
        par = ForecastSetParam("rect", rng.normal(size=(T, n)), y=rng.uniform(0.1, 3, (T, n)),
                               rotation=Q if k % 3 == 0 else None)
        psi = translate_gamma_to_psi(pol, {2: par})
        for _ in range(100):
            xi = rng.uniform(-1, 1, (T, 1))
            s = rng.uniform(-1, 1, (T, n))
            a = pol.evaluate({"xi1": xi, "s2": s})
            b = psi.evaluate({"xi1": xi, "zeta2": par.image(s)})
            worst = max(worst, float(np.max(np.abs(a - b))))
    report(8, worst <= 1e-10, f"1000 points over 10 parameterizations, largest error {worst:.1e}")


def test_rolling_horizon(report):
    ratios, over = [], []
    for seed in range(10):
        net, cfg = energy_hub(EnergyHubParams(M=3), seed=seed)
        r = roll(net, cfg, seed=seed)
        if r.realized > r.worst_case + 1e-7:
            over.append(seed)
        ratios.append(r.ratio)
    mean = float(np.mean(ratios))
    report(9, not over and 0.3 <= mean <= 0.8,
           f"seeds above the certificate {over}, mean realized/worst-case ratio {mean:.3f} "
           f"(range {min(ratios):.2f}..{max(ratios):.2f})")


def test_contract_widths(report):
    widths = {}
    for theta in (0.25, 0.5, 1.0):
        net, cfg = supply_chain(SupplyChainParams.fixed(theta, T=24))
        res = tightest_contracts(solve_design(net, cfg))
        widths[theta] = {j: (hi - lo).ravel() for j, (lo, hi) in qf_bounds(res).items()}
    monotone = all(np.all(widths[a][j] <= widths[b][j] + 1e-7)
                   for a, b in ((0.25, 0.5), (0.5, 1.0)) for j in widths[a])
    bullwhip = all(widths[t][2].mean() >= widths[t][3].mean() - 1e-9 for t in widths)
    means = {t: (round(float(w[2].mean()), 3), round(float(w[3].mean()), 3)) for t, w in widths.items()}
    report(10, monotone and bullwhip,
           f"widths nondecreasing in theta: {monotone}; mean widths (supplier link, retailer "
           f"link) per theta {means}")
