"""Polyhedral sets ``{v : W v >= w}``."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

VERTEX_CAP = 4096
DUP_TOL = 1e-9


class EmptySetError(ValueError):
    pass


class UnboundedSetError(ValueError):
    pass


class CapExceeded(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class Polyhedron:
    W: np.ndarray
    w: np.ndarray

    def __init__(self, W, w, dim: int | None = None):
        W = np.asarray(W, dtype=float)
        w = np.atleast_1d(np.asarray(w, dtype=float))
        if W.ndim != 2:
            W = W.reshape(len(w), -1) if W.size else np.zeros((len(w), dim or 0))
        if dim is not None and W.shape[1] != dim:
            raise ValueError(f"W has {W.shape[1]} columns, expected {dim}")
        if W.shape[0] != len(w):
            raise ValueError("W and w disagree on the row count")
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "w", w)

    @property
    def dim(self) -> int:
        return self.W.shape[1]

    def contains(self, v, tol: float = 1e-9) -> bool:
        return bool(np.all(self.W @ np.asarray(v, float) >= self.w - tol))

    @cached_property
    def factors(self) -> list[np.ndarray]:
        """Coordinate groups that no row couples, sorted by first coordinate."""
        d = self.dim
        if d == 0:
            return []
        parent = list(range(d))

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        for row in self.W:
            nz = np.flatnonzero(row)
            for k in nz[1:]:
                ra, rb = find(nz[0]), find(k)
                if ra != rb:
                    parent[max(ra, rb)] = min(ra, rb)
        groups: dict[int, list[int]] = {}
        for k in range(d):
            groups.setdefault(find(k), []).append(k)
        return [np.array(g) for g in sorted(groups.values(), key=lambda g: g[0])]

    def factor(self, coords) -> "Polyhedron":
        """The set of rows acting only on ``coords`` (which must be a union of factors)."""
        coords = np.asarray(coords, dtype=int)
        mask = np.zeros(self.dim, dtype=bool)
        mask[coords] = True
        rows = np.flatnonzero(np.any(self.W[:, mask] != 0, axis=1))
        if np.any(self.W[np.ix_(rows, np.flatnonzero(~mask))] != 0):
            raise ValueError("coordinates are coupled with the rest of the set")
        return Polyhedron(self.W[np.ix_(rows, coords)], self.w[rows])

    def restrict(self, keep) -> "Polyhedron":
        """Keep the coordinates ``keep``; the dropped ones must form whole factors."""
        keep = np.asarray(keep, dtype=int)
        if len(keep) == self.dim:
            return self
        if len(keep) == 0:
            return Polyhedron(np.zeros((0, 0)), np.zeros(0))
        return self.factor(keep)

    @cached_property
    def interval(self) -> tuple[float, float] | None:
        """Bounds of a one-dimensional set, or None for higher dimension."""
        if self.dim != 1:
            return None
        col = self.W[:, 0]
        lo = max((self.w[k] / col[k] for k in range(len(col)) if col[k] > 0), default=-np.inf)
        hi = min((self.w[k] / col[k] for k in range(len(col)) if col[k] < 0), default=np.inf)
        for k in np.flatnonzero(col == 0):
            if self.w[k] > 0:
                return (1.0, 0.0)  # empty
        return (lo, hi)

    def support(self, h) -> float:
        return support(self, h)

    def vertices(self, cap: int = VERTEX_CAP) -> np.ndarray:
        return vertices(self, cap)

    def status(self) -> str:
        """``"ok"``, ``"empty"`` or ``"unbounded"``."""
        try:
            for k in range(self.dim):
                e = np.zeros(self.dim)
                e[k] = 1.0
                support(self, e)
                support(self, -e)
            if self.dim == 0 and np.any(self.w > 0):
                return "empty"
        except EmptySetError:
            return "empty"
        except UnboundedSetError:
            return "unbounded"
        return "ok"

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Coordinate-wise bounding box."""
        lo = np.empty(self.dim)
        hi = np.empty(self.dim)
        for k in range(self.dim):
            e = np.zeros(self.dim)
            e[k] = 1.0
            hi[k] = support(self, e)
            lo[k] = -support(self, -e)
        return lo, hi

    def is_box(self) -> bool:
        return all(len(g) == 1 for g in self.factors)


def box(lb, ub) -> Polyhedron:
    lb = np.atleast_1d(np.asarray(lb, dtype=float))
    ub = np.atleast_1d(np.asarray(ub, dtype=float))
    if lb.shape != ub.shape:
        raise ValueError("lb and ub differ in dimension")
    if np.any(lb > ub):
        raise ValueError("lb exceeds ub")
    d = len(lb)
    eye = np.eye(d)
    W = np.empty((2 * d, d))
    W[0::2] = eye
    W[1::2] = -eye
    w = np.empty(2 * d)
    w[0::2] = lb
    w[1::2] = -ub
    return Polyhedron(W, w, dim=d)


def simplex(dim: int) -> Polyhedron:
    """``{s >= 0, sum(s) <= 1}``."""
    W = np.vstack([np.eye(dim), -np.ones((1, dim))])
    w = np.concatenate([np.zeros(dim), [-1.0]])
    return Polyhedron(W, w, dim=dim)


def product(ps) -> Polyhedron:
    ps = list(ps)
    if not ps:
        return Polyhedron(np.zeros((0, 0)), np.zeros(0))
    W = sp.block_diag([p.W for p in ps]).toarray() if any(p.W.size for p in ps) else \
        np.zeros((sum(p.W.shape[0] for p in ps), sum(p.dim for p in ps)))
    return Polyhedron(W, np.concatenate([p.w for p in ps]), dim=sum(p.dim for p in ps))


def support(p: Polyhedron, h) -> float:
    """``max h@v`` over ``p`` by LP."""
    from .lp import LinearProgram, Status, solve

    h = np.asarray(h, dtype=float)
    if p.dim == 0:
        if np.any(p.w > 1e-12):
            raise EmptySetError("empty set")
        return 0.0
    if p.dim == 1 and p.interval is not None:
        lo, hi = p.interval
        if lo > hi + DUP_TOL:
            raise EmptySetError("empty set")
        if h[0] == 0:
            return 0.0
        val = h[0] * (hi if h[0] > 0 else lo)
        if not np.isfinite(val):
            raise UnboundedSetError("unbounded set")
        return float(val)
    lp = LinearProgram.dense(-h, A_ub=-p.W, b_ub=-p.w, lb=-np.inf, ub=np.inf)
    sol = solve(lp)
    if sol.status == Status.INFEASIBLE:
        raise EmptySetError("empty set")
    if sol.status == Status.UNBOUNDED:
        raise UnboundedSetError("unbounded set")
    if not sol.ok:
        raise RuntimeError(f"support LP failed: {sol.status}")
    return float(-sol.objective)


def _basis_vertices(p: Polyhedron, cap: int) -> np.ndarray:
    d = p.dim
    if d == 0:
        return np.zeros((1, 0))
    if d == 1:
        lo, hi = p.interval
        if lo > hi + DUP_TOL:
            raise EmptySetError("empty set")
        if not (np.isfinite(lo) and np.isfinite(hi)):
            raise UnboundedSetError("unbounded set")
        return np.array([[lo]]) if hi - lo <= DUP_TOL else np.array([[lo], [hi]])
    if p.status() != "ok":
        raise EmptySetError("empty set") if p.status() == "empty" else UnboundedSetError("unbounded")
    W, w = p.W, p.w
    found: list[np.ndarray] = []
    for rows in itertools.combinations(range(W.shape[0]), d):
        sub = W[list(rows)]
        if abs(np.linalg.det(sub)) < 1e-12:
            if np.linalg.matrix_rank(sub) < d:
                continue
        v = np.linalg.solve(sub, w[list(rows)])
        if np.all(W @ v >= w - 1e-9 * (1 + np.abs(w))):
            if not any(np.max(np.abs(v - u)) <= DUP_TOL for u in found):
                found.append(v)
                if len(found) > cap:
                    raise CapExceeded(f"more than {cap} vertices")
    return np.array(found)


def vertices(p: Polyhedron, cap: int = VERTEX_CAP) -> np.ndarray:
    """Extreme points, one per row, via per-factor basis enumeration."""
    if p.dim == 0:
        if np.any(p.w > 1e-12):
            raise EmptySetError("empty set")
        return np.zeros((1, 0))
    parts = []
    total = 1
    for g in p.factors:
        vs = _basis_vertices(p.factor(g), cap)
        total *= len(vs)
        if total > cap:
            raise CapExceeded(f"more than {cap} vertices")
        parts.append((g, vs))
    out = np.empty((total, p.dim))
    for idx, combo in enumerate(itertools.product(*[range(len(vs)) for _, vs in parts])):
        for (g, vs), k in zip(parts, combo):
            out[idx, g] = vs[k]
    return out


def vertex_count(p: Polyhedron, cap: int = VERTEX_CAP) -> int:
    total = 1
    for g in p.factors:
        total *= len(_basis_vertices(p.factor(g), cap))
        if total > cap:
            raise CapExceeded(f"more than {cap} vertices")
    return total
