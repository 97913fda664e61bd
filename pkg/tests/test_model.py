import json
import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from policynet import (AgentSpec, ConfigError, DesignConfig, Mode, NetworkSpec, Topology,
                       box, classify_topology, load_config, precedent_set, validate)
from policynet.model import errors, neighbors, topological_order
from policynet.scenarios import bipartite_example, graph_network, working_example

from conftest import chain, integrator


def test_neighbors_working_example():
    net = working_example()
    assert neighbors(net, 3) == {2, 5}
    assert neighbors(net, 1) == set()


def test_neighbors_arcless():
    net = NetworkSpec([integrator(i) for i in (1, 2, 3)], [])
    assert neighbors(net, 2) == set()
    assert all(precedent_set(net, i) == {i} for i in (1, 2, 3))


def test_unknown_agent_raises():
    with pytest.raises(KeyError):
        neighbors(working_example(), 9)
    with pytest.raises(KeyError):
        precedent_set(working_example(), 0)


def test_precedent_sets_from_graph_captions():
    assert precedent_set(working_example(), 4) == {1, 2, 3, 4, 5}
    assert precedent_set(bipartite_example(), 5) == {1, 2, 3, 5}


def test_topology_classes():
    assert classify_topology(bipartite_example()) == Topology.BIPARTITE_DAG
    assert classify_topology(graph_network([(1, 2), (2, 3)])) == Topology.ARBORESCENCE
    assert classify_topology(working_example()) == Topology.GENERAL
    # a star is both a tree and depth one; the tree wins
    assert classify_topology(graph_network([(1, 2), (1, 3)])) == Topology.ARBORESCENCE
    assert classify_topology(graph_network([(1, 2), (2, 1)])) == Topology.GENERAL


def test_topological_order():
    assert topological_order(working_example()) == [1, 2, 5, 3, 4]
    assert topological_order(graph_network([(1, 2), (2, 1)])) is None


def test_validate_consistent_example():
    assert validate(working_example()) == []


def test_validate_wrong_B_columns():
    net = working_example()
    agents = list(net.agents)
    a3 = net.agent(3)
    agents[2] = AgentSpec.create(3, a3.T, a3.A, np.ones((1, 3)), a3.D, a3.E, a3.x_init, a3.Xi)
    diags = validate(NetworkSpec(agents, net.arcs))
    assert len(diags) == a3.T  # one per stage
    assert all(d.agent == 3 and d.field.startswith("B") for d in diags)


def test_validate_rank_deficient_E():
    a = AgentSpec.create(1, 1, np.eye(1), None, np.ones((1, 1)), np.zeros((1, 1)),
                         np.zeros(1), box([-1], [1]))
    diags = validate(NetworkSpec([a], []))
    assert [d.field for d in diags] == ["E[0]"]
    assert "rank" in diags[0].message
    assert errors(diags) == []


def test_validate_graph_errors():
    net = NetworkSpec([integrator(1), integrator(2, n_in=1)], [(1, 2), (3, 2), (1, 1)])
    fields = [d.field for d in validate(net)]
    assert fields.count("arcs") == 2


def test_validate_lags_and_empty_set():
    net = chain(2)
    assert any(d.field == "belief_lag" for d in validate(net, DesignConfig(belief_lag=5)))
    empty = box([1.0, 1.0], [2.0, 2.0])
    bad = NetworkSpec([integrator(1, Xi=type(empty)(np.vstack([empty.W, [[-1, 0]]]),
                                                      np.append(empty.w, -0.5)))], [])
    assert [d.message for d in validate(bad)] == ["uncertainty set is empty"]


def test_stage_costs_sum_to_cost():
    a = integrator(1, T=2, cx=[1.0], hinge_pos=[2.0], hinge_neg=[3.0])
    x = np.array([[1.0], [-2.0], [0.5]])
    u = np.array([[1.0], [-1.0]])
    sc = a.stage_costs(x, u)
    # |x| + |u| + x + 2 max(x,0) + 3 max(-x,0)
    assert np.allclose(sc, [1 + 1 + 1 + 2, 2 + 1 - 2 + 6, 0.5 + 0.5 + 1.0])
    assert a.cost(x, u) == pytest.approx(sc.sum())


def test_truncated_drops_past_rows():
    T = 3
    Hx = np.kron(np.eye(T + 1), [[1.0], [-1.0]])
    a = integrator(1, T=T, Hx=Hx, h=np.full(2 * (T + 1), 5.0), Xi=box(-np.ones(T), np.ones(T)))
    b = a.truncated(1, np.array([0.3]))
    assert b.T == 2 and b.x_init[0] == 0.3
    assert b.Hx.shape == (2 * 2, 3)  # rows of x_2, x_3 only
    assert b.Xi.dim == 2


def test_load_config_round_trip(tmp_path):
    raw = {"horizon": 2, "mode": "partially_nested", "lags": {"xi": 1, "belief": 0},
           "committed_variable": "state", "arcs": [[1, 2]],
           "agents": [
               {"id": 1, "A": [[1.0]], "D": [[1.0]], "E": [[1.0]], "x_init": [0.0],
                "Xi": {"lb": -1, "ub": 1}, "Q": [[1.0]]},
               {"id": 2, "A": [[0.5]], "B": [[1.0]], "D": [[1.0]], "E": [[1.0]], "x_init": [1.0],
                "Xi": {"W": [[1, 0], [0, 1], [-1, 0], [0, -1]], "w": [-1, -1, -1, -1]},
                "q_norm": 1, "Q": [[1.0]]}]}
    path = tmp_path / "net.json"
    path.write_text(json.dumps(raw))
    net, cfg = load_config(path)
    assert cfg.mode == Mode.PARTIALLY_NESTED
    assert net.arcs == ((1, 2),)
    assert net.agent(2).q_norm == 1 and net.agent(1).q_norm == np.inf
    assert validate(net, cfg) == []


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"agents": []}))
    with pytest.raises(ConfigError):
        load_config(bad)


# -- properties ---------------------------------------------------------------

arc_sets = st.sets(st.tuples(st.integers(1, 6), st.integers(1, 6)).filter(lambda a: a[0] != a[1]),
                   max_size=12)


@given(arc_sets)
def test_precedent_contains_neighbours_and_is_transitive(arcs):
    net = graph_network(sorted(arcs) or [(1, 2)])
    for i in net.ids:
        P = precedent_set(net, i)
        assert neighbors(net, i) | {i} <= P
        for j in P:
            assert precedent_set(net, j) <= P


@given(arc_sets, st.tuples(st.integers(1, 6), st.integers(1, 6)).filter(lambda a: a[0] != a[1]))
def test_precedent_monotone_under_arc_addition(arcs, extra):
    base = sorted(arcs) or [(1, 2)]
    small = graph_network(base)
    ids = set(small.ids)
    if not set(extra) <= ids:
        return
    big = graph_network(sorted(set(base) | {extra}))
    for i in small.ids:
        assert precedent_set(small, i) <= precedent_set(big, i)


@settings(max_examples=50)
@given(arc_sets, st.permutations(range(1, 7)))
def test_topology_invariant_under_relabeling(arcs, perm):
    base = sorted(arcs) or [(1, 2)]
    relabel = {k + 1: perm[k] for k in range(6)}
    a = graph_network(base)
    b = graph_network([(relabel[j], relabel[i]) for j, i in base])
    assert classify_topology(a) == classify_topology(b)
