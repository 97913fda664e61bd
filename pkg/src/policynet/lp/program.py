"""Deterministic linear program in inequality/equality form."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


@dataclass
class LinearProgram:
    """``min c@x + c0`` s.t. ``A_ub@x <= b_ub``, ``A_eq@x == b_eq``, ``lb <= x <= ub``.

    ``names`` labels every column; ``col_owner`` and the ``*_owner`` row
    arrays record the agent that owns a column or row (``-1`` marks
    columns shared between agents).  ``info`` carries compiler metadata.
    """

    c: np.ndarray
    A_ub: sp.csr_matrix
    b_ub: np.ndarray
    A_eq: sp.csr_matrix
    b_eq: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    names: list[str]
    c0: float = 0.0
    col_owner: np.ndarray | None = None
    ub_owner: np.ndarray | None = None
    eq_owner: np.ndarray | None = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.c)
        self.A_ub = sp.csr_matrix(self.A_ub, shape=(len(self.b_ub), n))
        self.A_eq = sp.csr_matrix(self.A_eq, shape=(len(self.b_eq), n))
        if not (len(self.lb) == len(self.ub) == len(self.names) == n):
            raise ValueError("column data of inconsistent length")
        if self.col_owner is None:
            self.col_owner = np.zeros(n, dtype=int)
        if self.ub_owner is None:
            self.ub_owner = np.zeros(len(self.b_ub), dtype=int)
        if self.eq_owner is None:
            self.eq_owner = np.zeros(len(self.b_eq), dtype=int)

    @property
    def n(self) -> int:
        return len(self.c)

    @property
    def shape(self) -> tuple[int, int, int]:
        """(columns, inequality rows, equality rows)."""
        return self.n, len(self.b_ub), len(self.b_eq)

    def column(self, name: str) -> int:
        index = self.info.setdefault("_name_index", {})
        if not index:
            index.update({s: k for k, s in enumerate(self.names)})
        return index[name]

    @classmethod
    def dense(cls, c, A_ub=None, b_ub=None, A_eq=None, b_eq=None, lb=None, ub=None,
              names=None) -> "LinearProgram":
        """Convenience constructor from dense data; default bounds are ``x >= 0``."""
        c = np.asarray(c, dtype=float)
        n = len(c)
        A_ub = np.zeros((0, n)) if A_ub is None else np.atleast_2d(np.asarray(A_ub, float))
        A_eq = np.zeros((0, n)) if A_eq is None else np.atleast_2d(np.asarray(A_eq, float))
        b_ub = np.zeros(0) if b_ub is None else np.atleast_1d(np.asarray(b_ub, float))
        b_eq = np.zeros(0) if b_eq is None else np.atleast_1d(np.asarray(b_eq, float))
        lb = np.zeros(n) if lb is None else np.broadcast_to(np.asarray(lb, float), (n,)).copy()
        ub = np.full(n, np.inf) if ub is None else np.broadcast_to(np.asarray(ub, float), (n,)).copy()
        names = names or [f"x{k}" for k in range(n)]
        return cls(c, sp.csr_matrix(A_ub), b_ub, sp.csr_matrix(A_eq), b_eq, lb, ub, list(names))
