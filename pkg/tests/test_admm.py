import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from policynet import admm
from policynet.admm import ConsensusLayout, LocalProblem, global_update, local_update
from policynet.lp import LinearProgram
from policynet.reformulate import solve_design
from policynet.scenarios import SupplyChainParams, supply_chain


def abs_problem(center=1.0):
    """``J(beta) = |beta - center|`` via an epigraph column owned by agent 1."""
    lp = LinearProgram(np.array([1.0, 0.0]), sp.csr_matrix([[-1.0, 1.0], [-1.0, -1.0]]),
                       np.array([center, -center]), sp.csr_matrix((0, 2)), np.zeros(0),
                       np.array([-np.inf, -np.inf]), np.array([np.inf, np.inf]), ["t", "beta"],
                       col_owner=np.array([1, -1]), ub_owner=np.array([1, 1]))
    return LocalProblem(1, lp, np.array([0]), np.array([1]))


def free_problem(dim=3):
    lp = LinearProgram(np.zeros(dim), sp.csr_matrix((0, dim)), np.zeros(0), sp.csr_matrix((0, dim)),
                       np.zeros(0), np.full(dim, -np.inf), np.full(dim, np.inf),
                       [f"b{k}" for k in range(dim)], col_owner=np.full(dim, -1))
    return LocalProblem(1, lp, np.zeros(0, int), np.arange(dim))


def test_prox_of_zero_function_is_target():
    target = np.array([0.5, -2.0, 3.0])
    beta, J = local_update(free_problem(), np.zeros(3), target, 0.7)
    assert np.allclose(beta, target, atol=1e-8) and J == 0.0


@pytest.mark.parametrize("rho", [0.25, 0.5, 1.0, 2.0, 4.0])
def test_prox_of_absolute_value(rho):
    # argmin |b - 1| + rho/2 b^2 is min(1, 1/rho); at rho = 1 it sits on the kink,
    # where the minimizer is only weakly determined, so the value is the sharp check
    prox = lambda b: abs(b - 1.0) + rho / 2 * b ** 2
    want = min(1.0, 1.0 / rho)
    beta, J = local_update(abs_problem(), np.zeros(1), np.zeros(1), rho)
    assert beta[0] == pytest.approx(want, abs=1e-5)
    assert prox(beta[0]) == pytest.approx(prox(want), abs=1e-9)
    assert J == pytest.approx(abs(beta[0] - 1.0), abs=1e-9)


def test_layout_invariants():
    with pytest.raises(ValueError):
        ConsensusLayout(["a", "b"], {1: np.array([0])})
    with pytest.raises(ValueError):
        ConsensusLayout(["a"], {1: np.array([0, 3])})


def test_global_update_simple_cases():
    lay = ConsensusLayout(["a", "b"], {1: np.array([0, 1]), 2: np.array([1])}, rho=0.5)
    alpha = global_update({1: np.array([1.0, 2.0]), 2: np.array([4.0])},
                          {1: np.array([0.5, 0.0]), 2: np.array([0.0])}, lay)
    assert alpha[0] == pytest.approx(1.0 + 0.5 / 0.5)
    assert alpha[1] == pytest.approx(3.0)


@settings(max_examples=30)
@given(st.integers(0, 10_000))
def test_global_update_solves_normal_equations(seed):
    rng = np.random.default_rng(seed)
    n, rho = 6, float(rng.uniform(0.05, 2.0))
    chunks = {i: np.sort(rng.choice(n, size=int(rng.integers(1, n + 1)), replace=False))
              for i in range(1, 4)}
    chunks[4] = np.arange(n)
    lay = ConsensusLayout([str(k) for k in range(n)], chunks, rho)
    betas = {i: rng.normal(size=len(idx)) for i, idx in chunks.items()}
    gammas = {i: rng.normal(size=len(idx)) for i, idx in chunks.items()}
    # argmin_a sum_i gamma_i @ (beta_i - a_i) + rho/2 ||beta_i - a_i||^2 as least squares
    S = np.vstack([np.eye(n)[idx] for idx in chunks.values()])
    rhs = np.concatenate([betas[i] + gammas[i] / rho for i in chunks])
    want = np.linalg.lstsq(S, rhs, rcond=None)[0]
    assert np.allclose(global_update(betas, gammas, lay), want, atol=1e-10)


def test_two_quadratics_reach_consensus():
    # J_i(b) = (b - c_i)^2 has the closed-form prox (2 c_i - gamma + rho a) / (2 + rho)
    c = {1: 1.0, 2: 3.0}
    rho = 0.5
    lay = ConsensusLayout(["a"], {1: np.array([0]), 2: np.array([0])}, rho)
    alpha = np.zeros(1)
    gamma = {i: np.zeros(1) for i in c}
    for _ in range(200):
        betas = {i: (2 * c[i] - gamma[i] + rho * alpha) / (2 + rho) for i in c}
        alpha = global_update(betas, gamma, lay)
        for i in c:
            gamma[i] = gamma[i] + rho * (betas[i] - alpha)
    assert alpha[0] == pytest.approx(2.0, abs=1e-9)


@pytest.fixture(scope="module")
def small_chain():
    return supply_chain(SupplyChainParams.fixed(1.0, 6))


def test_decompose_respects_privacy(small_chain):
    net, cfg = small_chain
    comp, problems, lay = admm.decompose(net, cfg)
    lp = comp.lp
    for i, p in problems.items():
        # an agent's problem holds its own columns plus the shared ones it touches
        assert np.all(lp.col_owner[p._own] == i)
        assert set(lay.chunks[i]) <= set(range(lay.n))
    assert np.all(lay.counts() >= 1)


def test_kkt_residual_of_middle_agent():
    net, cfg = supply_chain(SupplyChainParams.fixed(1.0, 20))
    _, problems, _ = admm.decompose(net, cfg)
    p = problems[2]
    rng = np.random.default_rng(0)
    gamma, target = 0.1 * rng.normal(size=p.dim), rng.normal(size=p.dim)
    beta, _ = p.prox(gamma, target, 0.1)
    assert p.kkt_residual(gamma, target, 0.1, beta) <= 1e-8


@pytest.mark.parametrize("rho", [0.01, 0.1, 1.0])
def test_fixed_point_is_rho_independent(small_chain, rho):
    net, cfg = small_chain
    mono = solve_design(net, cfg).objective
    res = admm.run(net, cfg, rho=rho, tol=1e-7, max_iters=500)
    assert res.converged
    assert res.objective == pytest.approx(mono, abs=1e-5)
    for i, idx in res.layout.chunks.items():
        assert np.max(np.abs(res.state.beta[i] - res.alpha[idx]), initial=0.0) <= 1e-7
    s = res.state
    assert len(s.primal) == len(s.dual) == s.k and min(s.primal + s.dual) >= 0


def test_log_and_failure(small_chain, tmp_path):
    net, cfg = small_chain
    res = admm.run(net, cfg, max_iters=1)
    assert not res.converged
    lines = admm.write_log(res, tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == "iter,objective,primal_res,dual_res" and len(lines) == 2
    with pytest.raises(admm.AdmmNotConverged) as err:
        admm.run(net, cfg, max_iters=1, raise_on_failure=True)
    assert len(err.value.history) == 1


def test_non_rect_modes_are_rejected(small_chain):
    net, cfg = small_chain
    with pytest.raises(ValueError):
        admm.decompose(net, cfg.with_mode("centralized"))
