"""Built-in networks: toy graphs, an illustrative two-agent problem, an
energy hub of prosumers and a serial supply chain with flexible contracts."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import AgentSpec, ConfigError, DesignConfig, Mode, NetworkSpec
from .uncertainty import box

SCENARIOS = ("illustrative", "energy-hub", "supply-chain", "working-example", "bipartite")


def _unit_agent(i: int, T: int, nx: int, n_in: int, nu: int = 1) -> AgentSpec:
    """Placeholder integrator-like agent with unit gains (graph examples)."""
    Xi = box(-np.ones(T), np.ones(T))
    return AgentSpec.create(i, T, np.eye(nx), np.ones((nx, nx * n_in)) if n_in else None,
                            np.ones((nx, nu)), np.ones((nx, 1)), np.zeros(nx), Xi,
                            Q=np.eye(nx), R=np.eye(nu))


def graph_network(arcs, T: int = 2, nx: int = 1) -> NetworkSpec:
    ids = sorted({a for arc in arcs for a in arc})
    agents = [_unit_agent(i, T, nx, sum(1 for _, k in arcs if k == i)) for i in ids]
    return NetworkSpec(agents, arcs)


def working_example(T: int = 2) -> NetworkSpec:
    """Five agents with arcs 1->2, 2->3, 5->3, 3->4."""
    return graph_network([(1, 2), (2, 3), (5, 3), (3, 4)], T)


def bipartite_example(T: int = 2) -> NetworkSpec:
    """Sources 1, 2, 3 feeding sinks 4 and 5."""
    return graph_network([(1, 4), (1, 5), (2, 5), (3, 5)], T)


# -- random instances ---------------------------------------------------------

def random_network(seed: int, M: int | None = None, T: int | None = None, *, nx: int = 2,
                   nu: int = 1, nxi: int = 1, arcs=None, bound: float = 10.0,
                   simplex_sets: bool = False) -> NetworkSpec:
    """Random stable-ish agents with box state/input limits and norm costs."""
    rng = np.random.default_rng(seed)
    M = M or int(rng.integers(2, 6))
    T = T or int(rng.integers(1, 5))
    if arcs is None:
        arcs = [(j, i) for i in range(1, M + 1) for j in range(1, M + 1)
                if j != i and rng.random() < 0.35]
    agents = []
    for i in range(1, M + 1):
        n_in = sum(1 for _, k in arcs if k == i)
        A = rng.uniform(-1, 1, (nx, nx))
        A *= 0.8 / max(1e-9, np.abs(np.linalg.eigvals(A)).max())
        B = rng.uniform(-0.5, 0.5, (nx, nx * n_in)) if n_in else None
        D = rng.uniform(-1, 1, (nx, nu))
        E = rng.uniform(-0.5, 0.5, (nx, nxi))
        if simplex_sets and rng.random() < 0.5:
            Xi = _scaled_simplex(T * nxi)
        else:
            Xi = box(-np.ones(T * nxi), np.ones(T * nxi))
        Hx = np.kron(np.eye(T + 1), np.vstack([np.eye(nx), -np.eye(nx)]))
        Hu = np.kron(np.eye(T), np.vstack([np.eye(nu), -np.eye(nu)]))
        Hx_full = np.vstack([Hx, np.zeros((Hu.shape[0], (T + 1) * nx))])
        Hu_full = np.vstack([np.zeros((Hx.shape[0], T * nu)), Hu])
        h = np.full(Hx_full.shape[0], bound)
        agents.append(AgentSpec.create(
            i, T, A, B, D, E, rng.uniform(-1, 1, nx), Xi, Hx=Hx_full, Hu=Hu_full, h=h,
            Q=np.eye(nx), R=0.1 * np.eye(nu), q_norm=1 if rng.random() < 0.5 else np.inf))
    return NetworkSpec(agents, arcs)


def _scaled_simplex(d: int):
    from .uncertainty import Polyhedron
    # {v >= -1, sum(v) <= 1}: a simplex containing the origin in its interior
    W = np.vstack([np.eye(d), -np.ones((1, d))])
    w = np.concatenate([-np.ones(d), [-1.0]])
    return Polyhedron(W, w)


def random_bipartite(seed: int, n_src: int | None = None, n_snk: int | None = None,
                     T: int = 2) -> NetworkSpec:
    """Random depth-one DAG: every arc goes from a source to a sink."""
    rng = np.random.default_rng(seed)
    n_src = n_src or int(rng.integers(1, 4))
    n_snk = n_snk or int(rng.integers(1, 3))
    arcs = []
    for k in range(n_snk):
        i = n_src + 1 + k
        srcs = [j for j in range(1, n_src + 1) if rng.random() < 0.6] or [int(rng.integers(1, n_src + 1))]
        arcs += [(j, i) for j in srcs]
    return random_network(seed + 10_000, n_src + n_snk, T, arcs=arcs)


# -- illustrative two-agent problem --------------------------------------------

ILLUSTRATIVE_C = np.array([1.0, -1.0])
ILLUSTRATIVE_B = np.diag([1.0, -2.0])
ILLUSTRATIVE_D = np.array([[1.0], [0.8]])
ILLUSTRATIVE_E = np.array([[1.0, -1.0], [-1.0, 1.0]])


def illustrative(bound: float = 4.0) -> tuple[NetworkSpec, DesignConfig]:
    """Single-stage pair: agent 1 feeds its next state into agent 2.

    Agent 1 pays ``c @ x_1`` and keeps ``||x_1||_inf <= bound``; agent 2
    pays ``||x_2||_1``.
    """
    Xi = box(-np.ones(2), np.ones(2))
    box_rows = np.vstack([np.eye(2), -np.eye(2)])
    Hx1 = np.hstack([np.zeros((4, 2)), box_rows])
    a1 = AgentSpec.create(1, 1, np.zeros((2, 2)), None, ILLUSTRATIVE_D, ILLUSTRATIVE_E,
                          np.zeros(2), Xi, Hx=Hx1, h=np.full(4, bound),
                          cx=np.vstack([np.zeros(2), ILLUSTRATIVE_C]))
    Q2 = [np.zeros((2, 2)), np.eye(2)]
    a2 = AgentSpec.create(2, 1, np.zeros((2, 2)), ILLUSTRATIVE_B, ILLUSTRATIVE_D, ILLUSTRATIVE_E,
                          np.zeros(2), Xi, Q=Q2, q_norm=1)
    cfg = DesignConfig(mode=Mode.CENTRALIZED, xi_lag=0, committed_variable="next_state")
    return NetworkSpec([a1, a2], [(1, 2)]), cfg


def rotation(angle_deg: float) -> np.ndarray:
    a = math.radians(angle_deg)
    return np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])


# -- energy hub ---------------------------------------------------------------

def hourly_price(t) -> np.ndarray:
    """Average electricity price at hour ``t`` (1-based)."""
    t = np.asarray(t, dtype=float)
    return (18 - np.tanh(t) + np.tanh(t - 4) - 2 * np.tanh(t - 6)
            + 4 * np.tanh(t - 17) - 4 * np.tanh(t - 24))


@dataclass
class ProsumerRecord:
    timestamp: str
    load_kw: float
    pv_kw: float


@dataclass
class ProsumerProfile:
    """Bi-hourly mean energies and one-standard-deviation half-widths (kWh)."""

    load: np.ndarray
    pv: np.ndarray
    load_dev: np.ndarray
    pv_dev: np.ndarray
    capacity: float


@dataclass
class EnergyHubParams:
    M: int = 3
    topology: str = "serial"
    T: int = 12
    epsilon: float = 0.1
    sell_ratio: float = 0.5
    share_ratio: float = 0.2
    decoupled: bool = False
    zero_epsilon: bool = False
    profiles: list = field(default_factory=list)


def read_prosumer_csv(path: str | Path) -> tuple[list[ProsumerRecord], float]:
    """Read ``timestamp,load_kw,pv_kw`` rows and the battery capacity sidecar.

    The capacity is read from a file named ``capacity`` next to the CSV
    (or ``<stem>.capacity``) holding one number in kWh.
    """
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or not {"timestamp", "load_kw", "pv_kw"} <= set(reader.fieldnames):
                raise ConfigError(f"{path}: expected header timestamp,load_kw,pv_kw")
            rows = [ProsumerRecord(r["timestamp"], float(r["load_kw"]), float(r["pv_kw"]))
                    for r in reader]
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not rows:
        raise ConfigError(f"{path}: no data rows")
    if any(r.load_kw < 0 or r.pv_kw < 0 for r in rows):
        raise ConfigError(f"{path}: negative power")
    stamps = [np.datetime64(r.timestamp) for r in rows]
    if any(b <= a for a, b in zip(stamps, stamps[1:])):
        raise ConfigError(f"{path}: timestamps are not increasing")
    for cand in (path.with_suffix(".capacity"), path.parent / "capacity"):
        if cand.exists():
            try:
                cap = float(cand.read_text().split()[0])
            except (ValueError, IndexError) as exc:
                raise ConfigError(f"{cand}: {exc}") from exc
            break
    else:
        raise ConfigError(f"{path}: missing capacity sidecar")
    if cap <= 0:
        raise ConfigError(f"{path}: capacity must be positive")
    return rows, cap


def profile_from_records(rows: list[ProsumerRecord], capacity: float,
                         step_hours: int = 2) -> ProsumerProfile:
    """Per-hour-of-day statistics aggregated to ``step_hours`` blocks.

    Hourly energies are means of the power samples in that hour; the mean
    and standard deviation are then taken over days, and each block sums
    its hours (deviations add, which keeps the interval conservative).
    """
    stamps = np.array([np.datetime64(r.timestamp, "m") for r in rows])
    hour_stamp = stamps.astype("datetime64[h]")
    load = np.array([r.load_kw for r in rows])
    pv = np.array([r.pv_kw for r in rows])
    uniq, inv = np.unique(hour_stamp, return_inverse=True)
    cnt = np.bincount(inv)
    h_load = np.bincount(inv, load) / cnt
    h_pv = np.bincount(inv, pv) / cnt
    hod = (uniq - uniq.astype("datetime64[D]")).astype(int)
    stats = np.zeros((4, 24))
    for h in range(24):
        sel = hod == h
        if not sel.any():
            raise ConfigError(f"no data for hour {h}")
        stats[:, h] = [h_load[sel].mean(), h_pv[sel].mean(), h_load[sel].std(), h_pv[sel].std()]
    blocks = stats.reshape(4, 24 // step_hours, step_hours).sum(axis=2)
    return ProsumerProfile(*blocks, capacity=capacity)


def synthetic_profile(seed: int, unit: int) -> ProsumerProfile:
    """Sinusoidal daily load and PV with seed-dependent scale, bi-hourly."""
    rng = np.random.default_rng([seed, unit])
    hours = np.arange(24) + 0.5
    base = rng.uniform(0.4, 0.9)
    load = base * (1.0 + 0.35 * np.sin(2 * np.pi * (hours - 13) / 24)
                   + 0.25 * np.exp(-0.5 * ((hours - 19.5) / 1.5) ** 2))
    peak = rng.uniform(1.0, 2.5)
    pv = peak * np.clip(np.sin(np.pi * (hours - 6.5) / 13), 0, None)
    load_sd = rng.uniform(0.15, 0.3) * load
    pv_sd = rng.uniform(0.2, 0.4) * pv
    blocks = np.vstack([load, pv, load_sd, pv_sd]).reshape(4, 12, 2).sum(axis=2)
    return ProsumerProfile(*blocks, capacity=float(rng.uniform(5.0, 13.0)))


def energy_hub_arcs(M: int, topology: str) -> list[tuple[int, int]]:
    if topology == "serial":
        pairs = [(i, i + 1) for i in range(1, M)]
    elif topology == "complete":
        pairs = [(i, j) for i in range(1, M + 1) for j in range(i + 1, M + 1)]
    else:
        raise ConfigError(f"unknown energy-hub topology {topology!r}")
    return [a for i, j in pairs for a in ((i, j), (j, i))]


def energy_hub(params: EnergyHubParams | None = None, seed: int = 0,
               data: list[str | Path] | None = None) -> tuple[NetworkSpec, DesignConfig]:
    """Prosumers with batteries that buy, sell and share electricity.

    Agent ``i`` has the battery level as state and inputs ``G+``, ``G-``
    and one draw ``U_ij`` per neighbour ``j`` (sorted).  The committed
    variable is the input vector, so the forecast set of ``j`` seen by
    ``i`` is an interval for ``U_ji``, the energy ``j`` takes from ``i``.
    """
    p = params or EnergyHubParams()
    if p.M < 2:
        raise ConfigError("the energy hub needs at least two prosumers")
    if p.T < 1 or p.T > 12:
        raise ConfigError("the energy hub horizon must lie in 1..12 bi-hourly stages")
    if data:
        if len(data) < p.M:
            raise ConfigError(f"{p.M} prosumers requested but {len(data)} data files given")
        profiles = [profile_from_records(*read_prosumer_csv(d)) for d in data[:p.M]]
    elif p.profiles:
        if len(p.profiles) < p.M:
            raise ConfigError("not enough prosumer profiles")
        profiles = p.profiles[:p.M]
    else:
        profiles = [synthetic_profile(seed, i) for i in range(p.M)]
    rng = np.random.default_rng([seed, 7919])
    eps = np.zeros(12) if p.zero_epsilon else rng.uniform(-p.epsilon, p.epsilon, 12)
    price = hourly_price(np.arange(1, 25)).reshape(12, 2).mean(axis=1)
    c_plus = ((1 + eps) * price)[:p.T]
    arcs = [] if p.decoupled else energy_hub_arcs(p.M, p.topology)
    T = p.T
    agents = []
    for i in range(1, p.M + 1):
        prof = profiles[i - 1]
        nbrs = sorted(j for j, k in arcs if k == i)
        nu = 2 + len(nbrs)
        D = np.zeros((1, nu))
        D[0, 0], D[0, 1] = 1.0, -1.0
        D[0, 2:] = 1.0
        # B block for neighbour j: j's input vector, -1 on U_{j,i}
        B = np.zeros((1, sum(2 + len([k for k, m in arcs if m == j]) for j in nbrs)))
        off = 0
        for j in nbrs:
            jn = sorted(k for k, m in arcs if m == j)
            B[0, off + 2 + jn.index(i)] = -1.0
            off += 2 + len(jn)
        load, pv = prof.load[:T], prof.pv[:T]
        with np.errstate(divide="ignore", invalid="ignore"):
            r_load = np.where(load > 0, prof.load_dev[:T] / load, 0.0)
            r_pv = np.where(pv > 0, prof.pv_dev[:T] / pv, 0.0)
        lo = np.column_stack([-r_load, -r_pv]).ravel()
        Xi = box(lo, -lo)
        E = [np.array([[-load[t], pv[t]]]) for t in range(T)]
        f = (pv - load)[:, None]
        # 0 <= I_t <= capacity for t = 0..T, all inputs nonnegative
        Hx = np.vstack([np.eye(T + 1), -np.eye(T + 1)])
        h_x = np.concatenate([np.full(T + 1, prof.capacity), np.zeros(T + 1)])
        Hu = -np.eye(T * nu)
        Hx_full = np.vstack([Hx, np.zeros((T * nu, T + 1))])
        Hu_full = np.vstack([np.zeros((2 * (T + 1), T * nu)), Hu])
        h = np.concatenate([h_x, np.zeros(T * nu)])
        cu = np.zeros((T, nu))
        cu[:, 0] = c_plus
        cu[:, 1] = p.sell_ratio * c_plus
        cu[:, 2:] = p.share_ratio * c_plus[:, None]
        agents.append(AgentSpec.create(
            i, T, np.eye(1), [B] * T if nbrs else None, [D] * T, E, np.zeros(1), Xi, f=f,
            Hx=Hx_full, Hu=Hu_full, h=h, cu=cu))
    cfg = DesignConfig(mode=Mode.LOCAL_RECT, committed_variable="input", xi_lag=1, belief_lag=0)
    return NetworkSpec(agents, arcs), cfg


# -- supply chain -------------------------------------------------------------

@dataclass
class SupplyChainParams:
    N: int = 1
    P: int = 1
    T: int = 24
    theta: float = 1.0
    K: int = 4
    F: np.ndarray | None = None  # (P, K)
    c_B: float | None = None
    c_H: float | None = None
    blending: np.ndarray | None = None  # (M, P)
    delay: bool = False
    production_loss: float = 0.1
    seed: int | None = None

    @classmethod
    def fixed(cls, theta: float = 1.0, T: int = 24) -> "SupplyChainParams":
        """Single product, ``F_k = (-1)^k / 2`` and unit costs and blending."""
        K = 4
        F = np.array([[(-1.0) ** k / 2 for k in range(1, K + 1)]])
        return cls(N=1, P=1, T=T, theta=theta, K=K, F=F, c_B=1.0, c_H=1.0,
                   blending=np.ones((3, 1)))

    @classmethod
    def random(cls, seed: int, N: int = 1, P: int = 2, T: int = 5, theta: float = 1.0,
               delay: bool = False) -> "SupplyChainParams":
        rng = np.random.default_rng(seed)
        K = 4
        return cls(N=N, P=P, T=T, theta=theta, K=K, F=rng.uniform(-1, 1, (P, K)),
                   c_B=float(rng.uniform(0, 1)), c_H=float(rng.uniform(0, 1)),
                   blending=rng.uniform(0.5, 1.0, (N + 2, P)), delay=delay, seed=seed)


def market_demand(T: int, P: int) -> np.ndarray:
    """Nominal demand ``(T, P)``: sine for even products, cosine for odd (1-based)."""
    if T < 2:
        raise ConfigError("the supply chain demand model needs a horizon of at least 2")
    t = np.arange(1, T + 1)
    out = np.empty((T, P))
    for p in range(1, P + 1):
        trig = np.sin if p % 2 == 0 else np.cos
        out[:, p - 1] = 2 + trig(2 * np.pi * t / (T - 1))
    return out


def supply_chain(params: SupplyChainParams | None = None) -> tuple[NetworkSpec, DesignConfig]:
    """Supplier 1, manufacturers 2..N+1 and retailer N+2 in series.

    Agent ``i`` holds inventories of ``P`` products and orders ``U_i`` from
    ``i - 1``; it serves the orders of ``i + 1`` (the retailer serves the
    market).  Inventory levels start at zero and cost ``c_H`` when positive
    and ``c_B`` when negative.
    """
    p = params or SupplyChainParams.fixed()
    if p.N < 1:
        raise ConfigError("the supply chain needs at least one manufacturer")
    if p.theta < 0:
        raise ConfigError("theta must be nonnegative")
    M, P, T, K = p.N + 2, p.P, p.T, p.K
    demand = market_demand(T, P)
    F = np.asarray(p.F, dtype=float) if p.F is not None else \
        np.array([[(-1.0) ** k / 2 for k in range(1, K + 1)]] * P)
    blend = np.asarray(p.blending, dtype=float) if p.blending is not None else np.ones((M, P))
    c_B = 1.0 if p.c_B is None else p.c_B
    c_H = 1.0 if p.c_H is None else p.c_H
    arcs = [(i + 1, i) for i in range(1, M)]
    agents = []
    for i in range(1, M + 1):
        retailer = i == M
        nxi = P + (K if retailer else 0)
        lo = np.concatenate([np.full(P, -p.production_loss), np.full(K, -p.theta)]) if retailer \
            else np.full(P, -p.production_loss)
        hi = np.concatenate([np.zeros(P), np.full(K, p.theta)]) if retailer else np.zeros(P)
        Xi = box(np.tile(lo, T), np.tile(hi, T))
        E = np.hstack([np.eye(P), -F / K]) if retailer else np.eye(P)
        f = -demand if retailer else None
        B = None if retailer else -np.eye(P)
        agents.append(AgentSpec.create(
            i, T, np.eye(P), B, np.diag(blend[i - 1]), E, np.zeros(P), Xi, f=f,
            hinge_pos=np.full(P, c_H), hinge_neg=np.full(P, c_B)))
    cfg = DesignConfig(mode=Mode.LOCAL_RECT, committed_variable="input", xi_lag=1,
                       belief_lag=1 if p.delay else 0)
    return NetworkSpec(agents, arcs), cfg


def qf_bounds(result) -> dict:
    """Contract intervals ``(lower, upper)`` per ordering agent, each ``(T, P)``."""
    out = {}
    for j, con in result.contracts.items():
        out[j] = (con.z - con.y, con.z + con.y)
    return out


def suboptimality(obj_local: float, obj_central: float) -> float:
    """Percentage gap ``100 (local - central) / central``."""
    return 100.0 * (obj_local - obj_central) / obj_central


def build_scenario(name: str, *, seed: int = 0, theta: float | None = None, M: int = 3,
                   topology: str = "serial", T: int | None = None, delay: bool = False,
                   decoupled: bool = False, data=None, zero_epsilon: bool = False):
    """Scenario by name, as used by the command line."""
    if name == "illustrative":
        return illustrative()
    if name == "energy-hub":
        prm = EnergyHubParams(M=M, topology=topology, T=T or 12, decoupled=decoupled,
                              zero_epsilon=zero_epsilon)
        return energy_hub(prm, seed=seed, data=data)
    if name == "supply-chain":
        if seed:
            prm = SupplyChainParams.random(seed, T=T or 5, theta=1.0 if theta is None else theta,
                                           delay=delay)
        else:
            prm = SupplyChainParams.fixed(1.0 if theta is None else theta, T=T or 24)
            prm.delay = delay
        return supply_chain(prm)
    if name == "working-example":
        return working_example(T or 2), DesignConfig()
    if name == "bipartite":
        return random_bipartite(seed, T=T or 2), DesignConfig()
    raise ConfigError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}")
