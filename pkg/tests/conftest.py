import numpy as np
import pytest

from policynet import AgentSpec, NetworkSpec, box


def integrator(i, T=2, nx=1, n_in=0, Xi=None, x0=None, **kw):
    """Agent with x+ = x + B c + u + xi and unit norm costs."""
    Xi = Xi if Xi is not None else box(-np.ones(T), np.ones(T))
    B = np.ones((nx, nx * n_in)) if n_in else None
    kw.setdefault("Q", np.eye(nx))
    kw.setdefault("R", np.eye(1))
    return AgentSpec.create(i, T, np.eye(nx), B, np.ones((nx, 1)), np.ones((nx, 1)),
                            np.zeros(nx) if x0 is None else x0, Xi, **kw)


def chain(M=3, T=2):
    arcs = [(i, i + 1) for i in range(1, M)]
    return NetworkSpec([integrator(i, T, n_in=int(i > 1)) for i in range(1, M + 1)], arcs)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
