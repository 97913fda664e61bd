"""Affine decision rules with structural causality masks.

A policy for agent ``i`` maps observed histories to inputs,

    u_t = gamma_t + sum over blocks (t, source, tau) of K[t, source, tau] @ v[source, tau]

where a block exists only when ``0 <= tau <= t - source.lag``.  Sources are
the agent's own disturbances, disturbances of other agents, the primitive
(auxiliary) variables of neighbour forecast sets, or the neighbour beliefs
themselves.  Parameters are stored in one flat vector ordered by stage;
within a stage the constant comes first, then the blocks in source order
and increasing ``tau``; each block is an ``nu x dim`` row-major matrix.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import DesignConfig, Mode, NetworkSpec, ordered_neighbors, precedent_set
from .uncertainty import Polyhedron, box

KINDS = ("own_xi", "foreign_xi", "belief", "auxiliary")


@dataclass(frozen=True)
class InfoSource:
    kind: str
    agent: int
    dim: int
    lag: int

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown source kind {self.kind!r}")
        if self.lag < 0:
            raise ValueError("lag must be nonnegative")

    @property
    def key(self) -> str:
        prefix = {"own_xi": "xi", "foreign_xi": "xi", "belief": "zeta", "auxiliary": "s"}[self.kind]
        return f"{prefix}{self.agent}"

    @property
    def unc_kind(self) -> str:
        """Registry kind of the coordinates this source reads."""
        return "xi" if self.kind in ("own_xi", "foreign_xi") else "s"


@dataclass(frozen=True)
class PolicyLayout:
    agent: int
    T: int
    nu: int
    sources: tuple
    blocks: tuple  # (t, source index, tau, offset)
    constants: tuple  # offset of gamma_t
    count: int

    def block_offset(self, t: int, src: int, tau: int) -> int | None:
        return self._index().get((t, src, tau))

    def _index(self):
        idx = getattr(self, "_idx", None)
        if idx is None:
            idx = {(t, s, tau): off for t, s, tau, off in self.blocks}
            object.__setattr__(self, "_idx", idx)
        return idx

    def source_index(self, key: str) -> int:
        for k, s in enumerate(self.sources):
            if s.key == key:
                return k
        raise KeyError(key)

    def stage_blocks(self, t: int):
        return [(s, tau, off) for tt, s, tau, off in self.blocks if tt == t]

    def with_sources(self, sources) -> "PolicyLayout":
        return make_layout(self.agent, self.T, self.nu, sources)


def make_layout(agent: int, T: int, nu: int, sources) -> PolicyLayout:
    sources = tuple(sources)
    blocks, constants = [], []
    off = 0
    for t in range(T):
        constants.append(off)
        off += nu
        for k, src in enumerate(sources):
            for tau in range(0, t - src.lag + 1):
                blocks.append((t, k, tau, off))
                off += nu * src.dim
    return PolicyLayout(agent, T, nu, sources, tuple(blocks), tuple(constants), off)


def primitive_dim(net: NetworkSpec, cfg: DesignConfig, j: int) -> int:
    """Per-stage dimension of agent ``j``'s auxiliary variables."""
    if cfg.mode == Mode.LOCAL_FLEXIBLE:
        prim = (cfg.primitive or {}).get(j)
        return prim.dim if prim is not None else net.agent(j).nxi
    return net.agent(j).committed_dim(cfg.committed_variable)


def primitive_set(net: NetworkSpec, cfg: DesignConfig, j: int) -> Polyhedron:
    prim = (cfg.primitive or {}).get(j)
    if prim is not None:
        return prim
    d = net.agent(j).nxi
    return box(-np.ones(d), np.ones(d))


def sources_for(net: NetworkSpec, cfg: DesignConfig, i: int) -> list[InfoSource]:
    a = net.agent(i)
    own = InfoSource("own_xi", i, a.nxi, cfg.xi_lag)
    if cfg.mode == Mode.CENTRALIZED:
        others = [j for j in net.ids if j != i]
    elif cfg.mode == Mode.PARTIALLY_NESTED:
        others = sorted(precedent_set(net, i) - {i})
    else:
        return [own] + [InfoSource("auxiliary", j, primitive_dim(net, cfg, j), cfg.belief_lag)
                        for j in ordered_neighbors(net, i)]
    return [own] + [InfoSource("foreign_xi", j, net.agent(j).nxi, cfg.xi_lag) for j in others]


def layout(net: NetworkSpec, cfg: DesignConfig, i: int) -> PolicyLayout:
    """Parameter layout of agent ``i``'s policy under ``cfg``."""
    a = net.agent(i)
    return make_layout(i, a.T, a.nu, sources_for(net, cfg, i))


@dataclass
class AffinePolicy:
    layout: PolicyLayout
    theta: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.theta is None:
            self.theta = np.zeros(self.layout.count)
        self.theta = np.asarray(self.theta, dtype=float)
        if self.theta.shape != (self.layout.count,):
            raise ValueError("parameter vector does not match the layout")

    def constant(self, t: int) -> np.ndarray:
        off = self.layout.constants[t]
        return self.theta[off:off + self.layout.nu]

    def block(self, t: int, source: int | str, tau: int) -> np.ndarray | None:
        src = source if isinstance(source, int) else self.layout.source_index(source)
        off = self.layout.block_offset(t, src, tau)
        if off is None:
            return None
        dim = self.layout.sources[src].dim
        return self.theta[off:off + self.layout.nu * dim].reshape(self.layout.nu, dim)

    def set_constant(self, t, value):
        off = self.layout.constants[t]
        self.theta[off:off + self.layout.nu] = value

    def set_block(self, t, source, tau, value):
        src = source if isinstance(source, int) else self.layout.source_index(source)
        off = self.layout.block_offset(t, src, tau)
        if off is None:
            raise KeyError(f"no block for stage {t}, source {source}, tau {tau}")
        dim = self.layout.sources[src].dim
        self.theta[off:off + self.layout.nu * dim] = np.asarray(value, float).ravel()

    def evaluate(self, realization: dict) -> np.ndarray:
        """Inputs ``(T, nu)`` given ``{source key: array (stages, dim)}``."""
        L = self.layout
        out = np.zeros((L.T, L.nu))
        for t in range(L.T):
            u = self.constant(t).copy()
            for src, tau, off in L.stage_blocks(t):
                s = L.sources[src]
                if s.key not in realization:
                    raise KeyError(f"realization lacks source {s.key}")
                hist = np.asarray(realization[s.key], dtype=float)
                if hist.ndim == 1:
                    hist = hist.reshape(-1, s.dim)
                if tau >= len(hist):
                    raise KeyError(f"realization of {s.key} lacks stage {tau}")
                K = self.theta[off:off + L.nu * s.dim].reshape(L.nu, s.dim)
                u += K @ hist[tau]
            out[t] = u
        return out

    # -- persistence ---------------------------------------------------
    def to_dict(self) -> dict:
        L = self.layout
        return {
            "agent": L.agent, "T": L.T, "nu": L.nu,
            "sources": [{"kind": s.kind, "agent": s.agent, "dim": s.dim, "lag": s.lag}
                        for s in L.sources],
            "blocks": [[t, s, tau, off] for t, s, tau, off in L.blocks],
            "theta": self.theta.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AffinePolicy":
        lay = make_layout(d["agent"], d["T"], d["nu"],
                          [InfoSource(**s) for s in d["sources"]])
        if [list(b) for b in lay.blocks] != d.get("blocks", [list(b) for b in lay.blocks]):
            raise ValueError("stored block map disagrees with the sources")
        return cls(lay, np.asarray(d["theta"], dtype=float))


def save_policies(policies: dict, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(json.dumps({str(i): p.to_dict() for i, p in policies.items()}, indent=1))
    return path


def load_policies(path: str | Path) -> dict:
    raw = json.loads(Path(path).read_text())
    return {int(i): AffinePolicy.from_dict(d) for i, d in raw.items()}


@dataclass
class ForecastSetParam:
    """Forecast set of one agent over its committed trajectory.

    ``rect``: stage-wise boxes ``F_t (y_t * s_t + z_t)`` with ``s_t`` in
    ``[-1, 1]^n`` (``y``, ``z`` of shape ``(T, n)``; ``rotation`` of shape
    ``(T, n, n)`` or None for the identity).  ``flexible``: ``Y s + z``
    over the stacked trajectory with ``Y`` block lower triangular of shape
    ``(T*n, T*p)`` and ``s_t`` in the primitive set ``S``.
    """

    mode: str
    z: np.ndarray
    y: np.ndarray | None = None
    rotation: np.ndarray | None = None
    Y: np.ndarray | None = None
    S: Polyhedron | None = None

    def __post_init__(self):
        self.z = np.atleast_2d(np.asarray(self.z, dtype=float))
        if self.mode == "rect":
            self.y = np.atleast_2d(np.asarray(self.y, dtype=float))
            if np.any(self.y < 0):
                raise ValueError("scalings must be nonnegative")
        elif self.mode == "flexible":
            self.Y = np.asarray(self.Y, dtype=float)
            T, n = self.z.shape
            if self.Y.shape[0] != T * n:
                raise ValueError("Y rows must match the stacked trajectory")
            if self.S is not None and self.Y.shape[1] != T * self.S.dim:
                raise ValueError("Y columns must match the primitive dimension")
        else:
            raise ValueError(f"unknown forecast set mode {self.mode!r}")

    @property
    def T(self) -> int:
        return self.z.shape[0]

    @property
    def n(self) -> int:
        return self.z.shape[1]

    @property
    def p(self) -> int:
        return self.n if self.mode == "rect" else self.Y.shape[1] // self.T

    def F(self, t: int) -> np.ndarray:
        return np.eye(self.n) if self.rotation is None else self.rotation[t]

    def image(self, s: np.ndarray) -> np.ndarray:
        """Belief trajectory ``(T, n)`` for a primitive trajectory ``s`` ``(T, p)``."""
        s = np.asarray(s, dtype=float).reshape(self.T, self.p)
        if self.mode == "rect":
            return np.stack([self.F(t) @ (self.y[t] * s[t] + self.z[t]) for t in range(self.T)])
        return (self.Y @ s.ravel()).reshape(self.T, self.n) + self.z

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Interval ``[z - y, z + y]`` of a rectangle without rotation."""
        if self.mode != "rect":
            raise ValueError("bounds are defined for rectangles")
        return self.z - self.y, self.z + self.y

    def preimage_map(self, t: int):
        """``(P, q)`` with ``s^t = P @ zeta^t + q`` on the first ``t+1`` stages."""
        n, p = self.n, self.p
        if self.mode == "rect":
            P = np.zeros(((t + 1) * p, (t + 1) * n))
            q = np.zeros((t + 1) * p)
            for tau in range(t + 1):
                y = self.y[tau]
                inv = np.where(y > 0, 1.0 / np.where(y > 0, y, 1.0), 0.0)
                Ft = self.F(tau)
                P[tau * p:(tau + 1) * p, tau * n:(tau + 1) * n] = inv[:, None] * Ft.T
                q[tau * p:(tau + 1) * p] = -inv * self.z[tau]
            return P, q
        Yt = self.Y[:(t + 1) * n, :(t + 1) * p]
        P = np.linalg.pinv(Yt)
        return P, -P @ self.z[:t + 1].ravel()

    def to_dict(self) -> dict:
        d = {"mode": self.mode, "z": self.z.tolist()}
        if self.mode == "rect":
            d["y"] = self.y.tolist()
            if self.rotation is not None:
                d["rotation"] = np.asarray(self.rotation).tolist()
        else:
            d["Y"] = self.Y.tolist()
            if self.S is not None:
                d["S"] = {"W": self.S.W.tolist(), "w": self.S.w.tolist()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ForecastSetParam":
        S = Polyhedron(d["S"]["W"], d["S"]["w"]) if "S" in d else None
        rot = np.asarray(d["rotation"]) if d.get("rotation") is not None else None
        return cls(d["mode"], d["z"], y=d.get("y"), rotation=rot, Y=d.get("Y"), S=S)


def translate_gamma_to_psi(pol: AffinePolicy, params: dict) -> AffinePolicy:
    """Rewrite a policy over auxiliary variables as a policy over beliefs.

    ``params`` maps a neighbour id to its :class:`ForecastSetParam`.  The
    auxiliary history up to stage ``t' = t - lag`` is recovered as
    ``s^{t'} = P (zeta^{t'}) + q`` (the pseudo-inverse of the stage prefix of
    the forecast map), which keeps the rewritten policy causal.  Scalings
    equal to zero make the matching coordinate uninformative; its
    contribution is dropped with a warning.
    """
    L = pol.layout
    new_sources = []
    for s in L.sources:
        if s.kind == "auxiliary":
            par = params[s.agent]
            new_sources.append(InfoSource("belief", s.agent, par.n, s.lag))
        else:
            new_sources.append(s)
    out = AffinePolicy(L.with_sources(new_sources))
    warned = False
    for t in range(L.T):
        gamma = pol.constant(t).copy()
        for k, s in enumerate(L.sources):
            last = t - s.lag
            if last < 0:
                continue
            if s.kind != "auxiliary":
                for tau in range(last + 1):
                    out.set_block(t, k, tau, pol.block(t, k, tau))
                continue
            par = params[s.agent]
            if par.mode == "rect" and not warned:
                dead = par.y[:last + 1] <= 0
                coefs = np.stack([pol.block(t, k, tau) for tau in range(last + 1)], axis=1)
                if np.any(dead[None, :, :] & (coefs != 0)):
                    warnings.warn("zero scaling: belief coordinate carries no information",
                                  RuntimeWarning, stacklevel=2)
                    warned = True
            C = np.hstack([pol.block(t, k, tau) for tau in range(last + 1)])
            P, q = par.preimage_map(last)
            CP = C @ P
            gamma += C @ q
            n = par.n
            for tau in range(last + 1):
                out.set_block(t, k, tau, CP[:, tau * n:(tau + 1) * n])
        out.set_constant(t, gamma)
    return out
