"""Free-format MPS export and import."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .program import LinearProgram


def _num(v: float) -> str:
    return repr(float(v))


def dumps(lp: LinearProgram, name: str = "POLICYNET") -> str:
    """Render ``lp`` as free MPS.  Rows are named ``U<k>`` and ``E<k>``."""
    lines = [f"NAME {name}", "ROWS", " N OBJ"]
    m_ub, m_eq = len(lp.b_ub), len(lp.b_eq)
    lines += [f" L U{k}" for k in range(m_ub)]
    lines += [f" E E{k}" for k in range(m_eq)]
    lines.append("COLUMNS")
    A_ub = sp.csc_matrix(lp.A_ub)
    A_eq = sp.csc_matrix(lp.A_eq)
    for j, col in enumerate(lp.names):
        if lp.c[j] != 0:
            lines.append(f" {col} OBJ {_num(lp.c[j])}")
        for k in range(A_ub.indptr[j], A_ub.indptr[j + 1]):
            if A_ub.data[k] != 0:
                lines.append(f" {col} U{A_ub.indices[k]} {_num(A_ub.data[k])}")
        for k in range(A_eq.indptr[j], A_eq.indptr[j + 1]):
            if A_eq.data[k] != 0:
                lines.append(f" {col} E{A_eq.indices[k]} {_num(A_eq.data[k])}")
    lines.append("RHS")
    if lp.c0 != 0:
        lines.append(f" RHS OBJ {_num(-lp.c0)}")
    for k, v in enumerate(lp.b_ub):
        if v != 0:
            lines.append(f" RHS U{k} {_num(v)}")
    for k, v in enumerate(lp.b_eq):
        if v != 0:
            lines.append(f" RHS E{k} {_num(v)}")
    lines.append("BOUNDS")
    for j, col in enumerate(lp.names):
        lo, hi = lp.lb[j], lp.ub[j]
        if lo == hi:
            lines.append(f" FX BND {col} {_num(lo)}")
            continue
        if not np.isfinite(lo) and not np.isfinite(hi):
            lines.append(f" FR BND {col}")
            continue
        if not np.isfinite(lo):
            lines.append(f" MI BND {col}")
        elif lo != 0:
            lines.append(f" LO BND {col} {_num(lo)}")
        if np.isfinite(hi):
            lines.append(f" UP BND {col} {_num(hi)}")
    lines.append("ENDATA")
    return "\n".join(lines) + "\n"


def export(lp: LinearProgram, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(dumps(lp))
    return path


def read(path: str | Path) -> LinearProgram:
    """Parse a free MPS file written by :func:`export` (L/G/E rows, standard bounds)."""
    section = None
    row_type: dict[str, str] = {}
    obj_row = None
    cols: dict[str, int] = {}
    entries: list[tuple[str, int, float]] = []
    rhs: dict[str, float] = {}
    bounds: list[tuple[str, str, float | None]] = []
    for raw in Path(path).read_text().splitlines():
        if not raw.strip() or raw.startswith("*"):
            continue
        if not raw[0].isspace():
            section = raw.split()[0]
            continue
        tok = raw.split()
        if section == "ROWS":
            row_type[tok[1]] = tok[0]
            if tok[0] == "N" and obj_row is None:
                obj_row = tok[1]
        elif section == "COLUMNS":
            j = cols.setdefault(tok[0], len(cols))
            for r, v in zip(tok[1::2], tok[2::2]):
                entries.append((r, j, float(v)))
        elif section == "RHS":
            for r, v in zip(tok[1::2], tok[2::2]):
                rhs[r] = float(v)
        elif section == "BOUNDS":
            bounds.append((tok[0], tok[2], float(tok[3]) if len(tok) > 3 else None))
    n = len(cols)
    names = sorted(cols, key=cols.get)
    c = np.zeros(n)
    ub_rows = [r for r, t in row_type.items() if t in ("L", "G")]
    eq_rows = [r for r, t in row_type.items() if t == "E"]
    ub_index = {r: k for k, r in enumerate(ub_rows)}
    eq_index = {r: k for k, r in enumerate(eq_rows)}
    A_ub = sp.lil_matrix((len(ub_rows), n))
    A_eq = sp.lil_matrix((len(eq_rows), n))
    for r, j, v in entries:
        if r == obj_row:
            c[j] = v
        elif r in ub_index:
            A_ub[ub_index[r], j] = -v if row_type[r] == "G" else v
        else:
            A_eq[eq_index[r], j] = v
    b_ub = np.array([-rhs.get(r, 0.0) if row_type[r] == "G" else rhs.get(r, 0.0) for r in ub_rows])
    b_eq = np.array([rhs.get(r, 0.0) for r in eq_rows])
    lb = np.zeros(n)
    ub = np.full(n, np.inf)
    for kind, col, v in bounds:
        j = cols[col]
        if kind == "FX":
            lb[j] = ub[j] = v
        elif kind == "FR":
            lb[j], ub[j] = -np.inf, np.inf
        elif kind == "MI":
            lb[j] = -np.inf
        elif kind == "LO":
            lb[j] = v
        elif kind == "UP":
            ub[j] = v
    c0 = -rhs.get(obj_row, 0.0)
    return LinearProgram(c, A_ub.tocsr(), b_ub, A_eq.tocsr(), b_eq, lb, ub, names, c0=c0)
