"""Registries of decision columns and uncertainty coordinates."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..uncertainty import Polyhedron


class Decisions:
    """Decision columns, numbered from 1 (id 0 is the constant)."""

    def __init__(self):
        self.names: list[str] = []
        self.lb: list[np.ndarray] = []
        self.ub: list[np.ndarray] = []
        self.owner: list[np.ndarray] = []
        self.cost: dict[int, float] = {}
        self.n = 0
        self.groups: dict[str, np.ndarray] = {}

    def add(self, name: str, shape, lb=-np.inf, ub=np.inf, owner: int = -1,
            labels=None) -> np.ndarray:
        """Allocate ``prod(shape)`` columns; returns their ids in ``shape``."""
        shape = (shape,) if np.isscalar(shape) else tuple(shape)
        count = int(np.prod(shape)) if shape else 1
        ids = np.arange(self.n + 1, self.n + 1 + count, dtype=np.int64)
        if labels is None:
            if count == 1 and not shape:
                labels = [name]
            else:
                labels = [f"{name}[{','.join(map(str, idx))}]" for idx in np.ndindex(*shape)]
        else:
            labels = [f"{name}[{lab}]" for lab in labels]
        self.names.extend(labels)
        self.lb.append(np.broadcast_to(np.asarray(lb, dtype=float), (count,)).ravel())
        self.ub.append(np.broadcast_to(np.asarray(ub, dtype=float), (count,)).ravel())
        self.owner.append(np.broadcast_to(np.asarray(owner, dtype=int), (count,)).ravel())
        self.n += count
        self.groups[name] = ids if name not in self.groups else np.concatenate([self.groups[name], ids])
        return ids.reshape(shape) if shape else ids

    def add_anonymous(self, prefix: str, owners: np.ndarray, lb=0.0, ub=np.inf) -> np.ndarray:
        """Bulk allocation with cheap names ``prefix<k>``."""
        count = len(owners)
        start = self.n
        ids = np.arange(start + 1, start + 1 + count, dtype=np.int64)
        self.names.extend(f"{prefix}{k}" for k in range(start, start + count))
        self.lb.append(np.full(count, lb, dtype=float))
        self.ub.append(np.full(count, ub, dtype=float))
        self.owner.append(np.asarray(owners, dtype=int))
        self.n += count
        return ids

    def set_cost(self, ids, value=1.0):
        for d in np.atleast_1d(ids):
            self.cost[int(d)] = self.cost.get(int(d), 0.0) + float(value)

    def arrays(self):
        lb = np.concatenate(self.lb) if self.lb else np.zeros(0)
        ub = np.concatenate(self.ub) if self.ub else np.zeros(0)
        owner = np.concatenate(self.owner) if self.owner else np.zeros(0, dtype=int)
        c = np.zeros(self.n)
        for d, v in self.cost.items():
            c[d - 1] += v
        return c, lb, ub, owner


@dataclass(frozen=True)
class Block:
    """A factor of an uncertainty set over the coordinates ``ids``."""

    W: np.ndarray
    w: np.ndarray
    ids: np.ndarray

    @property
    def poly(self) -> Polyhedron:
        return Polyhedron(self.W, self.w)


class Uncertainty:
    """Uncertainty coordinates ``(kind, agent, stage, comp)`` numbered from 1.

    ``kind`` is ``"xi"`` for exogenous disturbances and ``"s"`` for the
    primitive variables that parameterize forecast sets.  Coordinates are
    grouped into blocks, the connected factors of the sets they come from.
    """

    def __init__(self):
        self.coords: list[tuple] = []
        self.index: dict[tuple, int] = {}
        self.block_of: list[int] = [-1]
        self.local_pos: list[int] = [-1]
        self.blocks: list[Block] = []

    @property
    def n(self) -> int:
        return len(self.coords)

    def add_set(self, coords: list[tuple], poly: Polyhedron) -> np.ndarray:
        if len(coords) != poly.dim:
            raise ValueError("coordinate list does not match the set dimension")
        start = self.n + 1
        for c in coords:
            if c in self.index:
                raise ValueError(f"coordinate {c} registered twice")
            self.index[c] = len(self.coords) + 1
            self.coords.append(c)
            self.block_of.append(-1)
            self.local_pos.append(-1)
        ids = np.arange(start, start + len(coords), dtype=np.int64)
        for g in poly.factors:
            sub = poly.factor(g)
            b = len(self.blocks)
            self.blocks.append(Block(sub.W, sub.w, ids[g]))
            for pos, k in enumerate(ids[g]):
                self.block_of[k] = b
                self.local_pos[k] = pos
        return ids

    def id(self, kind: str, agent: int, stage: int, comp: int) -> int:
        return self.index[(kind, agent, stage, comp)]

    def ids(self, kind: str, agent: int, stage: int, comps) -> np.ndarray:
        return np.array([self.index[(kind, agent, stage, k)] for k in comps], dtype=np.int64)

    def has(self, kind, agent, stage, comp) -> bool:
        return (kind, agent, stage, comp) in self.index

    def select(self, pred) -> np.ndarray:
        return np.array([k + 1 for k, c in enumerate(self.coords) if pred(c)], dtype=np.int64)

    def domain(self, ids) -> tuple[np.ndarray, Polyhedron]:
        """The coordinates and set of all blocks touched by ``ids``."""
        blocks = sorted({self.block_of[int(k)] for k in ids})
        coords = np.concatenate([self.blocks[b].ids for b in blocks]) if blocks else np.zeros(0, int)
        from ..uncertainty import product
        return coords, product([self.blocks[b].poly for b in blocks])
