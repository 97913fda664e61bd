"""Vector expressions affine in decisions and in uncertainty.

Every entry of an :class:`AffineExpr` is a sum of terms ``coef * d * v``
where ``d`` is a decision column or the constant 1 and ``v`` an
uncertainty coordinate or the constant 1.  A term is addressed by the
integer key ``unc * STRIDE + dec`` (id 0 stands for the constant on either
side), so products of two decisions or of two uncertainties cannot be
represented at all.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

STRIDE = 1 << 31


def make_key(unc, dec):
    return np.asarray(unc, dtype=np.int64) * STRIDE + np.asarray(dec, dtype=np.int64)


def split_key(keys):
    keys = np.asarray(keys, dtype=np.int64)
    return keys // STRIDE, keys % STRIDE


class AffineExpr:
    """``m`` rows over sorted unique term ``keys`` stored as a CSR matrix."""

    __slots__ = ("mat", "keys")
    __array_ufunc__ = None  # let numpy defer ``ndarray @ expr`` to __rmatmul__

    def __init__(self, mat, keys):
        self.mat = sp.csr_matrix(mat)
        self.keys = np.asarray(keys, dtype=np.int64)
        if self.mat.shape[1] != len(self.keys):
            raise ValueError("coefficient matrix does not match the key list")

    # -- construction --------------------------------------------------
    @classmethod
    def zeros(cls, m: int) -> "AffineExpr":
        return cls(sp.csr_matrix((m, 0)), np.zeros(0, dtype=np.int64))

    @classmethod
    def constant(cls, vec) -> "AffineExpr":
        vec = np.atleast_1d(np.asarray(vec, dtype=float))
        return cls(sp.csr_matrix(vec.reshape(-1, 1)), np.zeros(1, dtype=np.int64))

    @classmethod
    def from_triplets(cls, m: int, rows, keys, vals) -> "AffineExpr":
        rows = np.asarray(rows, dtype=np.int64)
        vals = np.asarray(vals, dtype=float)
        uniq, inv = np.unique(np.asarray(keys, dtype=np.int64), return_inverse=True)
        mat = sp.csr_matrix((vals, (rows, inv.ravel())), shape=(m, len(uniq)))
        mat.sum_duplicates()
        return cls(mat, uniq)

    @classmethod
    def decisions(cls, dec_ids, unc: int = 0) -> "AffineExpr":
        """Row ``k`` is decision ``dec_ids[k]`` (times uncertainty ``unc``)."""
        dec_ids = np.asarray(dec_ids, dtype=np.int64)
        m = len(dec_ids)
        return cls.from_triplets(m, np.arange(m), make_key(unc, dec_ids), np.ones(m))

    @classmethod
    def uncertainties(cls, unc_ids, scale=None) -> "AffineExpr":
        unc_ids = np.asarray(unc_ids, dtype=np.int64)
        m = len(unc_ids)
        vals = np.ones(m) if scale is None else np.asarray(scale, dtype=float)
        return cls.from_triplets(m, np.arange(m), make_key(unc_ids, 0), vals)

    # -- shape ---------------------------------------------------------
    @property
    def m(self) -> int:
        return self.mat.shape[0]

    def __len__(self) -> int:
        return self.m

    def __repr__(self) -> str:
        return f"AffineExpr(m={self.m}, terms={len(self.keys)}, nnz={self.mat.nnz})"

    # -- algebra -------------------------------------------------------
    def _aligned(self, other: "AffineExpr"):
        if self.m != other.m:
            raise ValueError(f"row mismatch {self.m} vs {other.m}")
        if np.array_equal(self.keys, other.keys):
            return self.mat, other.mat, self.keys
        keys = np.union1d(self.keys, other.keys)
        return (self._spread(keys), other._spread(keys), keys)

    def _spread(self, keys) -> sp.csr_matrix:
        pos = np.searchsorted(keys, self.keys)
        coo = self.mat.tocoo()
        return sp.csr_matrix((coo.data, (coo.row, pos[coo.col])), shape=(self.m, len(keys)))

    def __add__(self, other):
        if not isinstance(other, AffineExpr):
            other = AffineExpr.constant(np.broadcast_to(np.asarray(other, float), (self.m,)))
        a, b, keys = self._aligned(other)
        return AffineExpr(a + b, keys)

    __radd__ = __add__

    def __neg__(self):
        return AffineExpr(-self.mat, self.keys)

    def __sub__(self, other):
        return self + (-other if isinstance(other, AffineExpr) else -np.asarray(other, float))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, scalar):
        return AffineExpr(self.mat * float(scalar), self.keys)

    __rmul__ = __mul__

    def __rmatmul__(self, M):
        return self.lmul(M)

    def lmul(self, M) -> "AffineExpr":
        """``M @ expr`` for a dense or sparse matrix ``M``."""
        M = sp.csr_matrix(np.atleast_2d(M)) if not sp.issparse(M) else sp.csr_matrix(M)
        if M.shape[1] != self.m:
            raise ValueError(f"cannot apply a {M.shape} matrix to {self.m} rows")
        return AffineExpr(M @ self.mat, self.keys).pruned()

    def __getitem__(self, idx):
        if isinstance(idx, (int, np.integer)):
            idx = [idx]
        return AffineExpr(self.mat[idx], self.keys)

    def scale_rows(self, s) -> "AffineExpr":
        return AffineExpr(sp.diags(np.asarray(s, dtype=float)) @ self.mat, self.keys)

    def pruned(self) -> "AffineExpr":
        mat = self.mat.copy()
        mat.eliminate_zeros()
        used = np.unique(mat.indices)
        if len(used) == len(self.keys):
            return AffineExpr(mat, self.keys)
        return AffineExpr(mat[:, used], self.keys[used])

    @staticmethod
    def vstack(items) -> "AffineExpr":
        items = [e for e in items if e is not None]
        if not items:
            return AffineExpr.zeros(0)
        keys = items[0].keys
        for e in items[1:]:
            if not np.array_equal(e.keys, keys):
                keys = np.union1d(keys, e.keys)
        mats = [e.mat if np.array_equal(e.keys, keys) else e._spread(keys) for e in items]
        return AffineExpr(sp.vstack(mats, format="csr"), keys)

    # -- inspection ----------------------------------------------------
    def split(self):
        return split_key(self.keys)

    def unc_ids(self) -> np.ndarray:
        u, _ = self.split()
        return np.unique(u[u > 0])

    def dec_ids(self) -> np.ndarray:
        _, d = self.split()
        return np.unique(d[d > 0])

    def row_uncertainties(self):
        """Boolean CSR (rows x unc id) marking structurally present uncertainties."""
        u, _ = self.split()
        coo = self.mat.tocoo()
        keep = u[coo.col] > 0
        n = int(u.max(initial=0)) + 1
        pat = sp.csr_matrix((np.ones(keep.sum()), (coo.row[keep], u[coo.col[keep]])),
                            shape=(self.m, n))
        pat.sum_duplicates()
        return pat

    def substitute(self, x: np.ndarray, n_unc: int):
        """Fix decisions to ``x`` (indexed by ``dec - 1``).

        Returns ``(c, G)`` with ``expr(v) = c + G @ v[1:]`` where ``v`` is
        indexed by uncertainty id.
        """
        u, d = self.split()
        xv = np.concatenate([[1.0], np.asarray(x, dtype=float)])
        scaled = self.mat @ sp.diags(xv[d])
        coo = scaled.tocoo()
        const = np.zeros(self.m)
        c_mask = u[coo.col] == 0
        np.add.at(const, coo.row[c_mask], coo.data[c_mask])
        G = sp.csr_matrix((coo.data[~c_mask], (coo.row[~c_mask], u[coo.col[~c_mask]] - 1)),
                          shape=(self.m, n_unc))
        G.sum_duplicates()
        return const, G

    def evaluate(self, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Value at decisions ``x`` (by ``dec - 1``) and uncertainty ``v`` (by ``unc - 1``)."""
        u, d = self.split()
        xv = np.concatenate([[1.0], np.asarray(x, dtype=float)])
        vv = np.concatenate([[1.0], np.asarray(v, dtype=float)])
        return self.mat @ (xv[d] * vv[u])

    def fix_decisions(self, dec_values: dict[int, float]) -> "AffineExpr":
        """Replace the listed decisions by numbers (their terms move to ``dec = 0``)."""
        if not dec_values:
            return self
        u, d = self.split()
        ids = np.fromiter(dec_values.keys(), dtype=np.int64)
        vals = np.fromiter(dec_values.values(), dtype=float)
        order = np.argsort(ids)
        ids, vals = ids[order], vals[order]
        pos = np.searchsorted(ids, d)
        pos_c = np.minimum(pos, len(ids) - 1)
        hit = (len(ids) > 0) & (ids[pos_c] == d)
        if not hit.any():
            return self
        factor = np.where(hit, vals[pos_c], 1.0)
        new_keys = np.where(hit, make_key(u, 0), self.keys)
        coo = (self.mat @ sp.diags(factor)).tocoo()
        return AffineExpr.from_triplets(self.m, coo.row, new_keys[coo.col], coo.data).pruned()
