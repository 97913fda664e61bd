import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from policynet import DesignConfig, Mode, NetworkSpec, Polyhedron, box, simplex
from policynet.reformulate import DesignInfeasible, solve_design
from policynet.scenarios import graph_network, illustrative, random_network
from policynet.simulate import (RollError, certify_worst_case, closed_loop, roll, sample,
                                sample_realization, simulate_dynamics)
from policynet.uncertainty import EmptySetError

from conftest import integrator

MODES = [Mode.CENTRALIZED, Mode.PARTIALLY_NESTED, Mode.LOCAL_RECT]


def frozen_pair(T=3):
    """Two coupled integrators whose disturbances are known constants."""
    w = (0.5, -0.25)
    agents = [integrator(i, T, n_in=i - 1, x0=[1.0 - 1.5 * (i - 1)],
                         Xi=box(np.full(T, w[i - 1]), np.full(T, w[i - 1]))) for i in (1, 2)]
    return NetworkSpec(agents, [(1, 2)])


def test_sample_singleton_and_determinism():
    assert np.array_equal(sample(box([2.0, -1.0], [2.0, -1.0]), seed=3), [2.0, -1.0])
    p = box(-np.ones(4), np.ones(4))
    assert np.array_equal(sample(p, seed=7, n=5), sample(p, seed=7, n=5))
    assert not np.array_equal(sample(p, seed=7), sample(p, seed=8))


def test_hit_and_run_stays_inside():
    p = simplex(3)
    S = sample(p, seed=1, n=300)
    assert all(p.contains(s) for s in S)
    assert np.array_equal(S, sample(p, seed=1, n=300))


def test_sample_empty_set():
    with pytest.raises(EmptySetError):
        sample(Polyhedron([[1.0], [-1.0]], [1.0, 0.0]), seed=0)


@pytest.mark.parametrize("mode", MODES)
@pytest.mark.parametrize("seed", range(3))
def test_closed_loop_dynamics_residual(mode, seed):
    net = random_network(seed, M=3, T=3)
    res = solve_design(net, DesignConfig(mode=mode))
    for s in range(5):
        traj = closed_loop(res, sample_realization(net, s))
        assert traj.dynamics_residual <= 1e-9
        assert max(traj.violation.values()) <= 1e-7


@pytest.mark.parametrize("mode", MODES)
def test_certificate_dominates_samples(mode):
    net = random_network(11, M=3, T=2)
    res = solve_design(net, DesignConfig(mode=mode))
    cert = certify_worst_case(res)
    assert sum(cert.values()) <= res.objective + 1e-6
    for s in range(50):
        traj = closed_loop(res, sample_realization(net, s))
        for i in net.ids:
            assert traj.cost[i] <= cert[i] + 1e-7


def test_illustrative_certificate_equals_objective():
    net, cfg = illustrative()
    res = solve_design(net, cfg.with_mode("centralized"))
    assert sum(certify_worst_case(res).values()) == pytest.approx(res.objective, abs=1e-6)


@pytest.mark.parametrize("mode", MODES)
def test_frozen_uncertainty_gives_nominal_cost(mode):
    net = frozen_pair()
    cfg = DesignConfig(mode=mode)
    res = solve_design(net, cfg)
    xi = sample_realization(net, 0)
    assert closed_loop(res, xi).total == pytest.approx(res.objective, abs=1e-7)
    assert sum(certify_worst_case(res).values()) == pytest.approx(res.objective, abs=1e-7)
    runs = [roll(net, cfg, seed=s) for s in range(3)]
    for r in runs:
        assert r.realized == pytest.approx(res.objective, abs=1e-7)
        assert r.trajectory.dynamics_residual <= 1e-9
    assert all(np.array_equal(r.trajectory.x[1], runs[0].trajectory.x[1]) for r in runs)


def test_roll_never_exceeds_the_day_ahead_certificate():
    net = random_network(4, M=3, T=3)
    cfg = DesignConfig(mode=Mode.LOCAL_RECT)
    for s in range(3):
        r = roll(net, cfg, seed=s)
        assert r.realized <= r.worst_case + 1e-7
        assert len(r.objectives) == net.T
        assert len(r.stage_costs) == sum(a.T + 1 for a in net.agents)


def test_roll_reports_failing_stage():
    calls = []

    def flaky(sub, cfg):
        calls.append(sub.T)
        if len(calls) == 2:
            raise DesignInfeasible("no policy")
        return solve_design(sub, cfg)

    with pytest.raises(RollError) as err:
        roll(frozen_pair(), DesignConfig(), design=flaky)
    assert err.value.stage == 1 and calls == [3, 2]


def test_next_state_coupling_needs_acyclic_graph():
    net = graph_network([(1, 2), (2, 1)])
    U = {i: np.zeros((net.T, net.agent(i).nu)) for i in net.ids}
    xi = {i: np.zeros((net.T, net.agent(i).nxi)) for i in net.ids}
    with pytest.raises(ValueError):
        simulate_dynamics(net, "next_state", U, xi)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_simulate_dynamics_recursion(seed):
    net = random_network(seed % 50, M=3, T=3)
    rng = np.random.default_rng(seed)
    U = {a.id: rng.normal(size=(a.T, a.nu)) for a in net.agents}
    xi = sample_realization(net, seed)
    X = simulate_dynamics(net, "state", U, xi)
    for a in net.agents:
        for t in range(a.T):
            c = [X[j][t] for j, k in net.arcs if k == a.id]
            nxt = a.A[t] @ X[a.id][t] + a.D[t] @ U[a.id][t] + a.E[t] @ xi[a.id][t]
            if c:
                nxt = nxt + a.B[t] @ np.concatenate(c)
            assert np.allclose(X[a.id][t + 1], nxt, atol=1e-12)
