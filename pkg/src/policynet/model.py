"""Agent data, network structure and design configuration.

Stages are indexed from 0.  An agent with horizon ``T`` has inputs
``u_0 .. u_{T-1}``, disturbances ``xi_0 .. xi_{T-1}`` and states
``x_0 .. x_T`` where ``x_0`` is the known initial state and

    x_{t+1} = A_t x_t + B_t c_t + D_t u_t + E_t xi_t + f_t

with ``c_t`` the stacked committed variables of the in-neighbours
(ordered by increasing agent id).
"""

from __future__ import annotations

import enum
import json
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .uncertainty import Polyhedron, box

RANK_TOL = 1e-8


class Mode(str, enum.Enum):
    CENTRALIZED = "centralized"
    PARTIALLY_NESTED = "partially_nested"
    LOCAL_RECT = "local_rect"
    LOCAL_FLEXIBLE = "local_flexible"

    @property
    def is_local(self) -> bool:
        return self in (Mode.LOCAL_RECT, Mode.LOCAL_FLEXIBLE)


class Topology(str, enum.Enum):
    ARBORESCENCE = "arborescence"
    BIPARTITE_DAG = "bipartite_dag"
    GENERAL = "general"


COMMITTED = ("state", "next_state", "input")


def _as_stages(value, T: int, name: str) -> list:
    """Broadcast a single matrix to ``T`` stages or check a per-stage list."""
    if value is None:
        return [None] * T
    if isinstance(value, np.ndarray) or (
        isinstance(value, (list, tuple)) and len(value) and np.isscalar(value[0])
    ):
        return [np.atleast_2d(np.asarray(value, dtype=float))] * T
    if isinstance(value, (list, tuple)) and len(value) == T and all(
        v is None or np.ndim(v) == 2 for v in value
    ):
        return [None if v is None else np.asarray(v, dtype=float) for v in value]
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 2:
        return [arr] * T
    raise ValueError(f"{name}: expected a matrix or a list of {T} matrices")


def _as_vectors(value, T: int, n: int) -> np.ndarray | None:
    if value is None:
        return None
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 1:
        arr = np.tile(arr, (T, 1))
    if arr.shape != (T, n):
        raise ValueError(f"expected shape {(T, n)}, got {arr.shape}")
    return arr


@dataclass(frozen=True, eq=False)
class AgentSpec:
    """Per-agent dynamics, constraints, cost and uncertainty set.

    Constraints are ``Hx @ vec(x_0..x_T) + Hu @ vec(u_0..u_{T-1}) <= h``.
    The cost is the sum over stages of ``||Q_t x_t||_q`` (t = 0..T),
    ``||R_t u_t||_q`` (t = 0..T-1), linear terms ``cx[t] @ x_t`` and
    ``cu[t] @ u_t``, and hinge terms ``hinge_pos[t] * [x_t]_+ +
    hinge_neg[t] * [-x_t]_+`` applied componentwise.
    """

    id: int
    T: int
    A: list
    B: list
    D: list
    E: list
    x_init: np.ndarray
    Xi: Polyhedron
    f: np.ndarray | None = None
    Hx: np.ndarray | None = None
    Hu: np.ndarray | None = None
    h: np.ndarray | None = None
    Q: list = field(default_factory=list)
    R: list = field(default_factory=list)
    q_norm: float = np.inf
    cx: np.ndarray | None = None
    cu: np.ndarray | None = None
    hinge_pos: np.ndarray | None = None
    hinge_neg: np.ndarray | None = None

    @classmethod
    def create(cls, id, T, A, B, D, E, x_init, Xi, *, f=None, Hx=None, Hu=None,
               h=None, Q=None, R=None, q_norm=np.inf, cx=None, cu=None,
               hinge_pos=None, hinge_neg=None) -> "AgentSpec":
        """Build an agent, broadcasting stage-invariant data over the horizon."""
        A = _as_stages(A, T, "A")
        D = _as_stages(D, T, "D")
        E = _as_stages(E, T, "E")
        nx = A[0].shape[0] if T else len(np.atleast_1d(x_init))
        B = _as_stages(B, T, "B") if B is not None else [np.zeros((nx, 0))] * T
        nu = D[0].shape[1] if T else 0
        x_init = np.atleast_1d(np.asarray(x_init, dtype=float))
        f = _as_vectors(f, T, nx)
        if Hx is None and Hu is None:
            Hx = np.zeros((0, (T + 1) * nx))
            Hu = np.zeros((0, T * nu))
            h = np.zeros(0)
        else:
            m = len(np.atleast_1d(h))
            Hx = np.zeros((m, (T + 1) * nx)) if Hx is None else np.atleast_2d(np.asarray(Hx, float))
            Hu = np.zeros((m, T * nu)) if Hu is None else np.atleast_2d(np.asarray(Hu, float))
            h = np.atleast_1d(np.asarray(h, dtype=float))
        Q = _as_stages(Q, T + 1, "Q")
        R = _as_stages(R, T, "R")
        return cls(
            id=id, T=T, A=A, B=B, D=D, E=E, x_init=x_init, Xi=Xi, f=f,
            Hx=Hx, Hu=Hu, h=h, Q=Q, R=R, q_norm=q_norm,
            cx=_as_vectors(cx, T + 1, nx), cu=_as_vectors(cu, T, nu),
            hinge_pos=_as_vectors(hinge_pos, T + 1, nx),
            hinge_neg=_as_vectors(hinge_neg, T + 1, nx),
        )

    @property
    def nx(self) -> int:
        return len(self.x_init)

    @property
    def nu(self) -> int:
        return self.D[0].shape[1] if self.T else 0

    @property
    def nxi(self) -> int:
        return self.E[0].shape[1] if self.T else 0

    def offset(self, t: int) -> np.ndarray:
        return np.zeros(self.nx) if self.f is None else self.f[t]

    def committed_dim(self, committed: str) -> int:
        return self.nu if committed == "input" else self.nx

    def stage_costs(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Cost terms per stage ``t = 0..T`` (stage ``t`` holds the ``x_t`` and ``u_t`` terms)."""
        x = np.asarray(x, dtype=float).reshape(self.T + 1, self.nx)
        u = np.asarray(u, dtype=float).reshape(self.T, self.nu)
        q = 1 if self.q_norm == 1 else np.inf
        out = np.zeros(self.T + 1)
        for t, Q in enumerate(self.Q):
            if Q is not None:
                out[t] += np.linalg.norm(Q @ x[t], q)
        for t, R in enumerate(self.R):
            if R is not None:
                out[t] += np.linalg.norm(R @ u[t], q)
        if self.cx is not None:
            out += np.sum(self.cx * x, axis=1)
        if self.cu is not None:
            out[:-1] += np.sum(self.cu * u, axis=1)
        if self.hinge_pos is not None:
            out += np.sum(self.hinge_pos * np.maximum(x, 0.0), axis=1)
        if self.hinge_neg is not None:
            out += np.sum(self.hinge_neg * np.maximum(-x, 0.0), axis=1)
        return out

    def cost(self, x: np.ndarray, u: np.ndarray) -> float:
        """Cost of a state trajectory ``(T+1, nx)`` and input trajectory ``(T, nu)``."""
        return float(self.stage_costs(x, u).sum())

    def constraint_violation(self, x: np.ndarray, u: np.ndarray) -> float:
        """Largest violation of the operational constraints (0 when feasible)."""
        if not len(self.h):
            return 0.0
        lhs = self.Hx @ np.ravel(x) + self.Hu @ np.ravel(u)
        return float(max(np.max(lhs - self.h), 0.0))

    def truncated(self, start: int, x_start: np.ndarray) -> "AgentSpec":
        """The same agent restricted to stages ``start..T-1`` from state ``x_start``.

        Constraint rows are kept when they involve neither a dropped stage
        nor only the known starting state; the uncertainty set is sliced
        when it factors by stage.
        """
        T, nx, nu = self.T, self.nx, self.nu
        keep_x = np.arange(start * nx, (T + 1) * nx)
        keep_u = np.arange(start * nu, T * nu)
        drop_x = np.setdiff1d(np.arange((T + 1) * nx), keep_x)
        drop_u = np.setdiff1d(np.arange(T * nu), keep_u)
        rows = ~(np.any(self.Hx[:, drop_x] != 0, axis=1) | np.any(self.Hu[:, drop_u] != 0, axis=1))
        # rows on the (known) starting state alone are data, not constraints
        later = np.any(self.Hx[:, keep_x[nx:]] != 0, axis=1) | np.any(self.Hu[:, keep_u] != 0, axis=1)
        rows &= later
        xi_keep = np.arange(start * self.nxi, T * self.nxi)
        return replace(
            self,
            T=T - start,
            A=self.A[start:], B=self.B[start:], D=self.D[start:], E=self.E[start:],
            f=None if self.f is None else self.f[start:],
            x_init=np.asarray(x_start, dtype=float),
            Hx=self.Hx[rows][:, keep_x], Hu=self.Hu[rows][:, keep_u], h=self.h[rows],
            Q=self.Q[start:], R=self.R[start:],
            cx=None if self.cx is None else self.cx[start:],
            cu=None if self.cu is None else self.cu[start:],
            hinge_pos=None if self.hinge_pos is None else self.hinge_pos[start:],
            hinge_neg=None if self.hinge_neg is None else self.hinge_neg[start:],
            Xi=self.Xi.restrict(xi_keep),
        )


@dataclass(frozen=True, eq=False)
class NetworkSpec:
    agents: tuple
    arcs: tuple  # (j, i): j in N_i

    def __init__(self, agents: Sequence[AgentSpec], arcs: Sequence[tuple[int, int]]):
        object.__setattr__(self, "agents", tuple(agents))
        object.__setattr__(self, "arcs", tuple(sorted({(int(j), int(i)) for j, i in arcs})))

    @property
    def ids(self) -> list[int]:
        return [a.id for a in self.agents]

    def agent(self, i: int) -> AgentSpec:
        for a in self.agents:
            if a.id == i:
                return a
        raise KeyError(f"unknown agent id {i}")

    @property
    def T(self) -> int:
        return max((a.T for a in self.agents), default=0)

    def truncated(self, start: int, states: dict) -> "NetworkSpec":
        return NetworkSpec([a.truncated(start, states[a.id]) for a in self.agents], self.arcs)


@dataclass(frozen=True)
class DesignConfig:
    """Information structure and compilation options.

    ``rotation`` maps an agent id to an orthogonal matrix per stage applied
    to its committed vector (rotated rectangles).  ``primitive`` maps an
    agent id to the per-stage primitive polyhedron of the flexible mode.
    """

    mode: Mode = Mode.CENTRALIZED
    xi_lag: int = 1
    belief_lag: int = 0
    committed_variable: str = "state"
    rotation: dict | None = None
    primitive: dict | None = None
    nonnegative_forecast: bool = False
    adaptive_epigraph: bool = True
    robust: str = "dual"

    def with_mode(self, mode) -> "DesignConfig":
        return replace(self, mode=Mode(mode))


@dataclass(frozen=True)
class Diagnostic:
    agent: int | None
    field: str
    message: str
    severity: str = "error"

    def __str__(self) -> str:
        who = "network" if self.agent is None else f"agent {self.agent}"
        return f"[{self.severity}] {who}.{self.field}: {self.message}"


def neighbors(net: NetworkSpec, i: int) -> set[int]:
    """Sources of the arcs entering ``i``."""
    net.agent(i)
    return {j for j, k in net.arcs if k == i}


def ordered_neighbors(net: NetworkSpec, i: int) -> list[int]:
    return sorted(neighbors(net, i))


def out_neighbors(net: NetworkSpec, j: int) -> set[int]:
    net.agent(j)
    return {i for k, i in net.arcs if k == j}


def precedent_set(net: NetworkSpec, i: int) -> set[int]:
    """Agent ``i`` together with all of its ancestors."""
    net.agent(i)
    parents: dict[int, list[int]] = {}
    for j, k in net.arcs:
        parents.setdefault(k, []).append(j)
    seen = {i}
    queue = deque([i])
    while queue:
        k = queue.popleft()
        for j in parents.get(k, ()):
            if j not in seen:
                seen.add(j)
                queue.append(j)
    return seen


def _is_dag(ids, arcs) -> bool:
    indeg = {i: 0 for i in ids}
    children: dict[int, list[int]] = {i: [] for i in ids}
    for j, i in arcs:
        indeg[i] += 1
        children[j].append(i)
    queue = deque(i for i in ids if indeg[i] == 0)
    count = 0
    while queue:
        j = queue.popleft()
        count += 1
        for i in children[j]:
            indeg[i] -= 1
            if indeg[i] == 0:
                queue.append(i)
    return count == len(ids)


def classify_topology(net: NetworkSpec) -> Topology:
    ids = net.ids
    arcs = net.arcs
    if not ids:
        return Topology.GENERAL
    indeg = {i: 0 for i in ids}
    for _, i in arcs:
        indeg[i] += 1
    roots = [i for i in ids if indeg[i] == 0]
    if len(roots) == 1 and all(d <= 1 for i, d in indeg.items() if i != roots[0]) \
            and _is_dag(ids, arcs):
        # one root, every other node has a single parent, no cycles: a tree
        return Topology.ARBORESCENCE
    if _is_dag(ids, arcs):
        targets = {i for _, i in arcs}
        if not any(j in targets for j, _ in arcs):
            return Topology.BIPARTITE_DAG
    return Topology.GENERAL


def topological_order(net: NetworkSpec) -> list[int] | None:
    """Agent ids in an order compatible with the arcs, or None on a cycle."""
    indeg = {i: 0 for i in net.ids}
    children: dict[int, list[int]] = {i: [] for i in net.ids}
    for j, i in net.arcs:
        indeg[i] += 1
        children[j].append(i)
    ready = sorted(i for i in net.ids if indeg[i] == 0)
    order = []
    while ready:
        j = ready.pop(0)
        order.append(j)
        for i in sorted(children[j]):
            indeg[i] -= 1
            if indeg[i] == 0:
                ready.append(i)
        ready.sort()
    return order if len(order) == len(net.ids) else None


def _full_column_rank(M: np.ndarray) -> bool:
    if M.shape[1] == 0:
        return True
    s = np.linalg.svd(M, compute_uv=False)
    if len(s) < M.shape[1] or s[0] == 0:
        return False
    return bool(s[-1] > RANK_TOL * s[0])


def validate(net: NetworkSpec, cfg: DesignConfig | None = None) -> list[Diagnostic]:
    """Check dimensions, graph references, rank and set assumptions.

    Rank deficiencies of ``D_t``/``E_t`` and an unbounded uncertainty set are
    reported with severity ``"warning"``: compilation in uncertainty space
    does not rely on them.  Everything else is an ``"error"``.
    """
    cfg = cfg or DesignConfig()
    out: list[Diagnostic] = []
    ids = net.ids
    if len(set(ids)) != len(ids):
        out.append(Diagnostic(None, "agents", "duplicate agent ids"))
    known = set(ids)
    for j, i in net.arcs:
        if j == i:
            out.append(Diagnostic(i, "arcs", f"self-arc {j}->{i}"))
        if j not in known or i not in known:
            out.append(Diagnostic(None, "arcs", f"arc {j}->{i} references an unknown agent"))
    if out:
        return out
    if cfg.committed_variable not in COMMITTED:
        out.append(Diagnostic(None, "committed_variable", f"unknown value {cfg.committed_variable!r}"))
        return out
    for name in ("xi_lag", "belief_lag"):
        lag = getattr(cfg, name)
        if not isinstance(lag, (int, np.integer)) or lag < 0 or lag > max(net.T, 1):
            out.append(Diagnostic(None, name, f"lag {lag} outside 0..T"))
    horizons = {a.T for a in net.agents}
    if len(horizons) > 1:
        out.append(Diagnostic(None, "T", f"agents disagree on the horizon: {sorted(horizons)}"))
    if cfg.committed_variable == "next_state" and net.arcs and topological_order(net) is None:
        out.append(Diagnostic(None, "arcs", "next-state coupling needs an acyclic graph"))
    for a in net.agents:
        nx, nu, nxi, T = a.nx, a.nu, a.nxi, a.T
        ncomm = sum(net.agent(j).committed_dim(cfg.committed_variable)
                    for j in ordered_neighbors(net, a.id))
        for t in range(T):
            checks = (("A", a.A[t], (nx, nx)), ("B", a.B[t], (nx, ncomm)),
                      ("D", a.D[t], (nx, nu)), ("E", a.E[t], (nx, nxi)))
            for name, M, shape in checks:
                if M is None or M.shape != shape:
                    got = None if M is None else M.shape
                    out.append(Diagnostic(a.id, f"{name}[{t}]", f"shape {got}, expected {shape}"))
            if a.D[t] is not None and a.D[t].shape == (nx, nu) and not _full_column_rank(a.D[t]):
                out.append(Diagnostic(a.id, f"D[{t}]", "not of full column rank", "warning"))
            if a.E[t] is not None and a.E[t].shape == (nx, nxi) and not _full_column_rank(a.E[t]):
                out.append(Diagnostic(a.id, f"E[{t}]", "not of full column rank", "warning"))
        if a.Hx.shape[1] != (T + 1) * nx or a.Hu.shape[1] != T * nu \
                or not (a.Hx.shape[0] == a.Hu.shape[0] == len(a.h)):
            out.append(Diagnostic(a.id, "H", "constraint data dimensions are inconsistent"))
        if a.Xi.dim != T * nxi:
            out.append(Diagnostic(a.id, "Xi", f"dimension {a.Xi.dim}, expected {T * nxi}"))
        else:
            status = a.Xi.status()
            if status == "empty":
                out.append(Diagnostic(a.id, "Xi", "uncertainty set is empty"))
            elif status == "unbounded":
                out.append(Diagnostic(a.id, "Xi", "uncertainty set is unbounded"))
        if a.q_norm not in (1, np.inf):
            out.append(Diagnostic(a.id, "q_norm", f"unsupported norm {a.q_norm}"))
        for name, mats, n in (("Q", a.Q, nx), ("R", a.R, nu)):
            for t, M in enumerate(mats):
                if M is not None and M.shape[1] != n:
                    out.append(Diagnostic(a.id, f"{name}[{t}]", f"needs {n} columns"))
    return out


def errors(diags: list[Diagnostic]) -> list[Diagnostic]:
    return [d for d in diags if d.severity == "error"]


class ConfigError(ValueError):
    """Invalid network or design configuration."""


# -- config files ---------------------------------------------------------

def _polyhedron_from(obj, dim: int) -> Polyhedron:
    if obj is None:
        return box(np.zeros(dim), np.zeros(dim))
    if "lb" in obj:
        lb = np.asarray(obj["lb"], dtype=float)
        ub = np.asarray(obj["ub"], dtype=float)
        if lb.size == 1 and dim > 1:
            lb, ub = np.full(dim, lb.item()), np.full(dim, ub.item())
        return box(lb, ub)
    return Polyhedron(np.asarray(obj["W"], dtype=float), np.asarray(obj["w"], dtype=float))


def load_config(path: str | Path) -> tuple[NetworkSpec, DesignConfig]:
    """Load a network and design configuration from a JSON file.

    Keys: ``horizon``, ``mode``, ``lags`` (``xi``/``belief``),
    ``committed_variable``, ``arcs`` (list of ``[j, i]``) and ``agents``
    (list of objects with ``id``, ``A``, ``B``, ``D``, ``E``, ``x_init``,
    optional ``f``, ``Hx``, ``Hu``, ``h``, ``Q``, ``R``, ``q_norm``, ``cx``,
    ``cu``, ``hinge_pos``, ``hinge_neg`` and ``Xi`` given either as
    ``{"lb": .., "ub": ..}`` or ``{"W": .., "w": ..}``).  Matrices are
    row-major nested arrays and are repeated over the horizon unless a
    list of per-stage matrices is given.
    """
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        T = int(raw["horizon"])
        agents = []
        for spec in raw["agents"]:
            E = np.asarray(spec["E"], dtype=float)
            nxi = E.shape[-1]
            q = spec.get("q_norm", "inf")
            agents.append(AgentSpec.create(
                int(spec["id"]), T, spec["A"], spec.get("B"), spec["D"], spec["E"],
                spec["x_init"], _polyhedron_from(spec.get("Xi"), T * nxi),
                f=spec.get("f"), Hx=spec.get("Hx"), Hu=spec.get("Hu"), h=spec.get("h"),
                Q=spec.get("Q"), R=spec.get("R"),
                q_norm=np.inf if str(q) in ("inf", "Infinity") else float(q),
                cx=spec.get("cx"), cu=spec.get("cu"),
                hinge_pos=spec.get("hinge_pos"), hinge_neg=spec.get("hinge_neg"),
            ))
        net = NetworkSpec(agents, [tuple(a) for a in raw.get("arcs", [])])
        lags = raw.get("lags", {})
        cfg = DesignConfig(
            mode=Mode(raw.get("mode", "centralized")),
            xi_lag=int(lags.get("xi", 1)),
            belief_lag=int(lags.get("belief", 0)),
            committed_variable=raw.get("committed_variable", "state"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    return net, cfg
