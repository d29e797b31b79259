"""Solver-agnostic conic programs.

A :class:`ConicProgram` owns a flat vector of real scalar unknowns.  Variables
are named views onto that vector (symmetric matrix variables share storage
between mirrored entries) and :class:`Affine` expressions are sparse linear
maps of it plus a constant.  Constraints live in four cones: zero, nonnegative
orthant, second-order cone ``t >= ||v||_2`` and the PSD cone over symmetric
matrix expressions.

Compiling produces the standard form shared by SCS and Clarabel::

    minimize    c' x
    subject to  A x + s = b,  s in K

and :func:`solve` hands it to a registered backend.  Whatever the backend
claims, the returned point is re-checked against the program's own
constraints by :func:`check_solution` before it is reported as optimal.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace
from numbers import Number
from typing import Callable

import numpy as np
import scipy.sparse as sp

__all__ = [
    "Affine",
    "Variable",
    "ConicProgram",
    "ConstraintError",
    "SolveSettings",
    "SolveReport",
    "CompiledProgram",
    "compile_program",
    "check_solution",
    "solve",
    "register_backend",
    "BACKENDS",
    "hstack",
    "vstack",
    "bmat",
    "constant",
]

ZERO, NONNEG, SOC, PSD = "zero", "nonneg", "soc", "psd"
_CONE_ORDER = (ZERO, NONNEG, SOC, PSD)


class ConstraintError(ValueError):
    pass


# ---------------------------------------------------------------------------
# expressions


def _as_csr(m, ncols=None) -> sp.csr_matrix:
    m = sp.csr_matrix(m)
    if ncols is not None and m.shape[1] < ncols:
        m = sp.csr_matrix((m.data, m.indices, m.indptr), shape=(m.shape[0], ncols))
    return m


class Affine:
    """Array-valued affine expression ``coef @ x + const`` in C order.

    ``shape`` is ``()`` for scalars, ``(m,)`` or ``(m, n)``.  ``coef`` may have
    fewer columns than the owning program has unknowns; missing columns are
    zero.
    """

    __array_priority__ = 100

    def __init__(self, coef, const, shape):
        self.shape = tuple(shape)
        size = int(np.prod(self.shape)) if self.shape else 1
        self.coef = _as_csr(coef)
        self.const = np.asarray(const, dtype=float).reshape(size)
        if self.coef.shape[0] != size:
            raise ValueError("coefficient rows do not match shape")

    # -- bookkeeping -------------------------------------------------------
    @property
    def size(self) -> int:
        return self.const.size

    @property
    def ndim(self) -> int:
        return len(self.shape)

    @property
    def width(self) -> int:
        return self.coef.shape[1]

    def _widen(self, ncols: int) -> "Affine":
        if self.width >= ncols:
            return self
        return Affine(_as_csr(self.coef, ncols), self.const, self.shape)

    def value(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = self.coef @ x[: self.width] + self.const
        return out.reshape(self.shape) if self.shape else float(out[0])

    def is_constant(self) -> bool:
        return self.coef.nnz == 0

    # -- construction helpers ---------------------------------------------
    @staticmethod
    def wrap(other, shape=None) -> "Affine":
        if isinstance(other, Affine):
            return other
        arr = np.asarray(other, dtype=float)
        if shape is not None and arr.shape != tuple(shape):
            arr = np.broadcast_to(arr, shape)
        return Affine(sp.csr_matrix((arr.size, 0)), arr.ravel(), arr.shape)

    def _rows(self, rows: np.ndarray, shape) -> "Affine":
        rows = np.asarray(rows, dtype=int).ravel()
        return Affine(self.coef[rows], self.const[rows], shape)

    def __getitem__(self, key) -> "Affine":
        idx = np.arange(self.size).reshape(self.shape)[key]
        return self._rows(idx, np.shape(idx))

    @property
    def T(self) -> "Affine":
        idx = np.arange(self.size).reshape(self.shape).T
        return self._rows(idx, idx.shape)

    def ravel(self) -> "Affine":
        return Affine(self.coef, self.const, (self.size,))

    def reshape(self, *shape) -> "Affine":
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        shape = np.empty(self.size).reshape(shape).shape
        return Affine(self.coef, self.const, shape)

    # -- arithmetic --------------------------------------------------------
    def _binary(self, other, sign: float) -> "Affine":
        if not isinstance(other, Affine):
            arr = np.asarray(other, dtype=float)
            shape = np.broadcast_shapes(self.shape, arr.shape)
            me = self._broadcast(shape)
            return Affine(me.coef, me.const + sign * np.broadcast_to(arr, shape).ravel(), shape)
        shape = np.broadcast_shapes(self.shape, other.shape)
        a, b = self._broadcast(shape), other._broadcast(shape)
        w = max(a.width, b.width)
        a, b = a._widen(w), b._widen(w)
        return Affine(a.coef + sign * b.coef, a.const + sign * b.const, shape)

    def _broadcast(self, shape) -> "Affine":
        shape = tuple(shape)
        if shape == self.shape:
            return self
        idx = np.broadcast_to(np.arange(self.size).reshape(self.shape), shape)
        return self._rows(idx, shape)

    def __add__(self, other):
        return self._binary(other, 1.0)

    __radd__ = __add__

    def __sub__(self, other):
        return self._binary(other, -1.0)

    def __rsub__(self, other):
        return (-self)._binary(other, 1.0)

    def __neg__(self):
        return Affine(-self.coef, -self.const, self.shape)

    def __mul__(self, other):
        if isinstance(other, Affine):
            raise TypeError("product of two affine expressions is not affine")
        arr = np.asarray(other, dtype=float)
        if arr.ndim == 0:
            return Affine(self.coef * float(arr), self.const * float(arr), self.shape)
        shape = np.broadcast_shapes(self.shape, arr.shape)
        me = self._broadcast(shape)
        d = np.broadcast_to(arr, shape).ravel()
        return Affine(sp.diags(d) @ me.coef, d * me.const, shape)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self * (1.0 / np.asarray(other, dtype=float))

    def __matmul__(self, other):
        # expr @ K
        if isinstance(other, Affine):
            raise TypeError("product of two affine expressions is not affine")
        K = other if sp.issparse(other) else np.asarray(other, dtype=float)
        K2 = K.reshape(-1, 1) if K.ndim == 1 else K
        if self.ndim == 1:
            out = self.reshape(1, self.size) @ K2
            return out.reshape(()) if K.ndim == 1 else out.reshape(out.shape[1])
        p, _ = self.shape
        r = K2.shape[1]
        op = sp.kron(sp.identity(p, format="csr"), sp.csr_matrix(K2).T, format="csr")
        out = Affine(op @ self.coef, op @ self.const, (p, r))
        return out.reshape(p) if K.ndim == 1 else out

    def __rmatmul__(self, other):
        # K @ expr
        K = other if sp.issparse(other) else np.asarray(other, dtype=float)
        if self.ndim == 1:
            op = sp.csr_matrix(K)
            shape = (K.shape[0],) if K.ndim == 2 else ()
            if K.ndim == 1:
                op = sp.csr_matrix(K.reshape(1, -1))
            return Affine(op @ self.coef, op @ self.const, shape)
        q, r = self.shape
        op = sp.kron(sp.csr_matrix(K), sp.identity(r, format="csr"), format="csr")
        return Affine(op @ self.coef, op @ self.const, (K.shape[0], r))

    # -- reductions --------------------------------------------------------
    def sum(self) -> "Affine":
        ones = sp.csr_matrix(np.ones((1, self.size)))
        return Affine(ones @ self.coef, [self.const.sum()], ())

    def trace(self) -> "Affine":
        if self.ndim != 2 or self.shape[0] != self.shape[1]:
            raise ValueError("trace of a non-square expression")
        return self[np.arange(self.shape[0]), np.arange(self.shape[0])].sum()

    def __repr__(self):
        return f"Affine(shape={self.shape}, nnz={self.coef.nnz})"


def constant(value) -> Affine:
    return Affine.wrap(value)


def _stack(parts: list, axis: int) -> Affine:
    parts = [Affine.wrap(p) for p in parts]
    parts = [p.reshape(p.size, 1) if p.ndim < 2 and axis == 1 else p for p in parts]
    parts = [p.reshape(1, p.size) if p.ndim < 2 and axis == 0 else p for p in parts]
    shapes = [p.shape for p in parts]
    idx_parts, offset = [], 0
    for s in shapes:
        idx_parts.append(np.arange(offset, offset + int(np.prod(s))).reshape(s))
        offset += int(np.prod(s))
    idx = np.concatenate(idx_parts, axis=axis)
    w = max(p.width for p in parts)
    coef = sp.vstack([p._widen(w).coef for p in parts], format="csr")
    const = np.concatenate([p.const for p in parts])
    return Affine(coef[idx.ravel()], const[idx.ravel()], idx.shape)


def hstack(parts) -> Affine:
    if all(Affine.wrap(p).ndim == 1 for p in parts):
        return _stack([Affine.wrap(p).reshape(1, -1) for p in parts], 1).ravel()
    return _stack(list(parts), 1)


def vstack(parts) -> Affine:
    return _stack(list(parts), 0)


def bmat(blocks) -> Affine:
    """Block matrix from a nested list of expressions or constant arrays."""
    return vstack([hstack(row) for row in blocks])


# ---------------------------------------------------------------------------
# variables and program


class Variable(Affine):
    """A named block of unknowns.  Indexing returns plain :class:`Affine`."""

    def __init__(self, name: str, index: np.ndarray, symmetric: bool):
        self.name = name
        self.index = index
        self.symmetric = symmetric
        n = int(index.max()) + 1 if index.size else 0
        coef = sp.csr_matrix(
            (np.ones(index.size), index.ravel(), np.arange(index.size + 1)),
            shape=(index.size, n),
        )
        super().__init__(coef, np.zeros(index.size), index.shape)

    def __repr__(self):
        kind = "symmetric " if self.symmetric else ""
        return f"Variable({self.name!r}, {kind}shape={self.shape})"


@dataclass
class Constraint:
    kind: str
    expr: Affine  # zero/nonneg: flat vector; soc: [t, v...]; psd: square matrix
    name: str = ""

    @property
    def dim(self) -> int:
        return self.expr.shape[0] if self.kind == PSD else self.expr.size


class ConicProgram:
    """Linear objective over zero / nonneg / SOC / PSD constraints.

    Constraint-adding methods return integer handles usable with
    :meth:`remove` and :meth:`constraint`.
    """

    def __init__(self, name: str = ""):
        self.name = name
        self.nvar = 0
        self.variables: dict[str, Variable] = {}
        self.constraints: dict[int, Constraint] = {}
        self._next_handle = 0
        self.objective = Affine.wrap(0.0)
        self.meta: dict = {}

    # -- variables ---------------------------------------------------------
    def variable(self, name: str, shape=(), symmetric: bool = False, lb=None, ub=None) -> Variable:
        if name in self.variables:
            raise ConstraintError(f"variable {name!r} already declared")
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        if symmetric:
            if len(shape) != 2 or shape[0] != shape[1]:
                raise ConstraintError("symmetric variables must be square")
            d = shape[0]
            iu = np.triu_indices(d)
            index = np.zeros((d, d), dtype=int)
            index[iu] = self.nvar + np.arange(len(iu[0]))
            index[(iu[1], iu[0])] = index[iu]
            count = len(iu[0])
        else:
            count = int(np.prod(shape)) if shape else 1
            index = self.nvar + np.arange(count).reshape(shape)
        self.nvar += count
        var = Variable(name, index, symmetric)
        self.variables[name] = var
        if lb is not None:
            self.add_nonneg(var - lb, name=f"{name}>=lb")
        if ub is not None:
            self.add_nonneg(ub - var, name=f"{name}<=ub")
        return var

    def __getitem__(self, name: str) -> Variable:
        return self.variables[name]

    # -- constraints -------------------------------------------------------
    def _register(self, con: Constraint) -> int:
        if con.expr.width > self.nvar:
            raise ConstraintError(f"constraint {con.name!r} references undeclared unknowns")
        h = self._next_handle
        self._next_handle += 1
        self.constraints[h] = con
        return h

    def add_zero(self, expr, name: str = "") -> int:
        """``expr == 0`` entrywise."""
        return self._register(Constraint(ZERO, Affine.wrap(expr).ravel(), name))

    def add_eq(self, lhs, rhs, name: str = "") -> int:
        return self.add_zero(Affine.wrap(lhs) - rhs, name)

    def add_nonneg(self, expr, name: str = "") -> int:
        """``expr >= 0`` entrywise."""
        return self._register(Constraint(NONNEG, Affine.wrap(expr).ravel(), name))

    def add_le(self, lhs, rhs, name: str = "") -> int:
        return self.add_nonneg(Affine.wrap(rhs) - lhs, name)

    def add_soc(self, t, vec, name: str = "") -> int:
        """``t >= ||vec||_2``."""
        t = Affine.wrap(t).ravel()
        if t.size != 1:
            raise ConstraintError("SOC head must be scalar")
        expr = _stack([t.reshape(1, 1), Affine.wrap(vec).ravel().reshape(-1, 1)], 0).ravel()
        return self._register(Constraint(SOC, expr, name))

    def add_psd_block(self, expr, name: str = "", tol: float = 1e-12) -> int:
        """``expr`` (square, symmetric by construction) is PSD."""
        expr = Affine.wrap(expr)
        if expr.ndim != 2 or expr.shape[0] != expr.shape[1]:
            raise ConstraintError(f"PSD block {name!r} is not square: {expr.shape}")
        d = expr.shape[0]
        tr = np.arange(d * d).reshape(d, d).T.ravel()
        dc = expr.coef - expr.coef[tr]
        dk = expr.const - expr.const[tr]
        asym = max(abs(dc).max() if dc.nnz else 0.0, np.abs(dk).max(initial=0.0))
        if asym > tol:
            raise ConstraintError(f"PSD block {name!r} is not symmetric (max asymmetry {asym:.3g})")
        return self._register(Constraint(PSD, expr, name))

    def constraint(self, handle: int) -> Constraint:
        try:
            return self.constraints[handle]
        except KeyError:
            raise ConstraintError(f"no constraint with handle {handle}") from None

    def remove(self, handle: int) -> Constraint:
        self.constraint(handle)
        return self.constraints.pop(handle)

    def minimize(self, expr) -> None:
        expr = Affine.wrap(expr)
        if expr.size != 1:
            raise ConstraintError("objective must be scalar")
        if expr.width > self.nvar:
            raise ConstraintError("objective references undeclared unknowns")
        self.objective = expr.reshape(())

    def copy(self) -> "ConicProgram":
        other = ConicProgram(self.name)
        other.nvar = self.nvar
        other.variables = dict(self.variables)
        other.constraints = dict(self.constraints)
        other._next_handle = self._next_handle
        other.objective = self.objective
        other.meta = dict(self.meta)
        return other

    def summary(self) -> dict:
        counts = {k: 0 for k in _CONE_ORDER}
        psd_dims: dict[int, int] = {}
        for c in self.constraints.values():
            counts[c.kind] += 1
            if c.kind == PSD:
                psd_dims[c.dim] = psd_dims.get(c.dim, 0) + 1
        return {"unknowns": self.nvar, "constraints": counts, "psd_dims": psd_dims}

    # -- serialization -----------------------------------------------------
    def to_dict(self) -> dict:
        """Canonical JSON-ready form; see :meth:`from_dict`."""

        def enc(e: Affine) -> dict:
            c = e._widen(self.nvar).coef.tocoo()
            order = np.lexsort((c.col, c.row))
            return {
                "shape": list(e.shape),
                "rows": c.row[order].tolist(),
                "cols": c.col[order].tolist(),
                "vals": c.data[order].tolist(),
                "const": e.const.tolist(),
            }

        return {
            "format": "pfpcmc-conic/1",
            "name": self.name,
            "nvar": self.nvar,
            "variables": [
                {"name": v.name, "shape": list(v.shape), "symmetric": v.symmetric,
                 "index": v.index.ravel().tolist()}
                for v in self.variables.values()
            ],
            "constraints": [
                {"handle": h, "kind": c.kind, "name": c.name, "expr": enc(c.expr)}
                for h, c in sorted(self.constraints.items())
            ],
            "objective": enc(self.objective),
            "meta": _jsonable(self.meta),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ConicProgram":
        if data.get("format") != "pfpcmc-conic/1":
            raise ValueError("unrecognized conic program format")
        prog = cls(data.get("name", ""))
        prog.nvar = int(data["nvar"])

        def dec(d: dict) -> Affine:
            shape = tuple(d["shape"])
            size = int(np.prod(shape)) if shape else 1
            coef = sp.coo_matrix((d["vals"], (d["rows"], d["cols"])), shape=(size, prog.nvar))
            return Affine(coef.tocsr(), d["const"], shape)

        for v in data["variables"]:
            index = np.asarray(v["index"], dtype=int).reshape(v["shape"])
            prog.variables[v["name"]] = Variable(v["name"], index, v["symmetric"])
        for c in data["constraints"]:
            prog.constraints[int(c["handle"])] = Constraint(c["kind"], dec(c["expr"]), c["name"])
        prog._next_handle = max(prog.constraints, default=-1) + 1
        prog.objective = dec(data["objective"])
        prog.meta = dict(data.get("meta", {}))
        return prog

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def loads(cls, text: str) -> "ConicProgram":
        return cls.from_dict(json.loads(text))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer, np.floating)):
        return obj.item()
    if isinstance(obj, (Number, str, bool)) or obj is None:
        return obj
    return str(obj)


# ---------------------------------------------------------------------------
# standard form


def _tril_colmajor(d: int) -> tuple[np.ndarray, np.ndarray]:
    """Flat (C-order) positions and sqrt(2) scales for a lower-triangle, column-major svec."""
    cols, rows = [], []
    for j in range(d):
        for i in range(j, d):
            rows.append(i)
            cols.append(j)
    rows, cols = np.array(rows), np.array(cols)
    scale = np.where(rows == cols, 1.0, np.sqrt(2.0))
    return rows * d + cols, scale


def _triu_colmajor(d: int) -> tuple[np.ndarray, np.ndarray]:
    """Same for an upper-triangle, column-major svec (Clarabel's layout)."""
    rows, cols = [], []
    for j in range(d):
        for i in range(j + 1):
            rows.append(i)
            cols.append(j)
    rows, cols = np.array(rows), np.array(cols)
    scale = np.where(rows == cols, 1.0, np.sqrt(2.0))
    return rows * d + cols, scale


@dataclass
class CompiledProgram:
    A: sp.csc_matrix
    b: np.ndarray
    c: np.ndarray
    c0: float
    cones: dict  # {"z": int, "l": int, "q": [..], "s": [..]}
    blocks: list  # (handle, kind, row slice) in standard-form order


def compile_program(prog: ConicProgram, svec: str = "tril") -> CompiledProgram:
    """Lower to ``min c'x  s.t.  A x + s = b, s in K`` (cone blocks ordered z, l, q, s)."""
    layout = _tril_colmajor if svec == "tril" else _triu_colmajor
    n = prog.nvar
    G_parts, h_parts, blocks = [], [], []
    cones = {"z": 0, "l": 0, "q": [], "s": []}
    row = 0
    by_kind = {k: [] for k in _CONE_ORDER}
    for h, con in prog.constraints.items():
        by_kind[con.kind].append((h, con))
    for kind in _CONE_ORDER:
        for h, con in by_kind[kind]:
            e = con.expr._widen(n)
            if kind == PSD:
                pos, scale = layout(con.dim)
                G = sp.diags(scale) @ e.coef[pos]
                g = scale * e.const[pos]
                cones["s"].append(con.dim)
            else:
                G, g = e.coef, e.const
                if kind == ZERO:
                    cones["z"] += e.size
                elif kind == NONNEG:
                    cones["l"] += e.size
                else:
                    cones["q"].append(e.size)
            G_parts.append(G)
            h_parts.append(g)
            blocks.append((h, kind, slice(row, row + G.shape[0])))
            row += G.shape[0]
    if G_parts:
        G = sp.vstack(G_parts, format="csc")
        h = np.concatenate(h_parts)
    else:
        G, h = sp.csc_matrix((0, n)), np.zeros(0)
    obj = prog.objective._widen(n)
    c = np.asarray(obj.coef.todense()).ravel()
    return CompiledProgram(A=(-G).tocsc(), b=h, c=c, c0=float(obj.const[0]), cones=cones, blocks=blocks)


# ---------------------------------------------------------------------------
# solving


@dataclass
class SolveSettings:
    feas_tol: float = 1e-8
    gap_tol: float = 1e-8
    time_limit: float | None = None
    max_iter: int | None = None
    backend: str = "auto"
    verbose: bool = False
    # the independent check accepts residuals up to check_factor * feas_tol
    check_factor: float = 10.0
    # cost vector handed to the backend is c * scale; "auto" maps max|c| to 0.1
    objective_scale: float | str = "auto"


@dataclass
class SolveReport:
    status: str  # optimal | primal-infeasible | dual-infeasible | numerical-failure | time-limit
    objective: float = float("nan")
    x: np.ndarray | None = None
    solve_time: float = 0.0
    iterations: int = 0
    backend: str = ""
    backend_status: str = ""
    max_residual: float = float("nan")
    gap: float = float("nan")
    residuals: dict = field(default_factory=dict)
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.status == "optimal"

    def value(self, expr: Affine) -> np.ndarray:
        if self.x is None:
            raise ValueError(f"no solution available (status {self.status})")
        return expr.value(self.x)


def check_solution(prog: ConicProgram, x: np.ndarray) -> tuple[float, dict]:
    """Largest relative constraint violation at ``x`` and a per-kind breakdown.

    Each violation is divided by ``1 + max|const| + max|coef @ x|`` of its
    constraint, the usual relative measure of first-order and interior-point
    codes: relative for large terms, absolute near zero.
    """
    worst = {k: 0.0 for k in _CONE_ORDER}
    for con in prog.constraints.values():
        lin = con.expr.coef @ x[: con.expr.width]
        val = lin + con.expr.const
        scale = 1.0 + max(np.abs(con.expr.const).max(initial=0.0), np.abs(lin).max(initial=0.0))
        if con.kind == ZERO:
            viol = np.abs(val).max(initial=0.0)
        elif con.kind == NONNEG:
            viol = max(0.0, -val.min(initial=0.0))
        elif con.kind == SOC:
            viol = max(0.0, np.linalg.norm(val[1:]) - val[0])
        else:
            d = con.dim
            mat = val.reshape(d, d)
            viol = max(0.0, -np.linalg.eigvalsh(0.5 * (mat + mat.T))[0])
        worst[con.kind] = max(worst[con.kind], viol / scale)
    return max(worst.values(), default=0.0), worst


Backend = Callable[[CompiledProgram, SolveSettings], dict]
BACKENDS: dict[str, Backend] = {}


def register_backend(name: str):
    def deco(fn: Backend) -> Backend:
        BACKENDS[name] = fn
        return fn

    return deco


def _pick_backend(prog: ConicProgram, settings: SolveSettings) -> str:
    if settings.backend != "auto":
        return settings.backend
    # Clarabel's dense PSD scaling blocks grow with (d^2/2)^2; past a few
    # dozen rows the first-order backend is the only practical choice.
    big = max((c.dim for c in prog.constraints.values() if c.kind == PSD), default=0)
    return "clarabel" if big <= 40 else "scs"


def _objective_scale(c: np.ndarray, setting) -> float:
    if setting != "auto":
        return float(setting)
    big = np.abs(c).max(initial=0.0)
    # interior-point codes stall on weighted fits when the cost dwarfs the
    # constraint data; a small cost vector leaves the minimizer unchanged
    return 0.1 / big if big > 0 else 1.0


def solve(prog: ConicProgram, settings: SolveSettings | None = None) -> SolveReport:
    """Solve ``prog``; numerical trouble and limits come back as a status.

    The status is decided here, not by the backend: a point is reported
    ``optimal`` only when the backend finished (or nearly finished) and the
    independent residual and duality-gap checks pass.
    """
    settings = settings or SolveSettings()
    name = _pick_backend(prog, settings)
    if name not in BACKENDS:
        raise KeyError(f"unknown backend {name!r}; available: {sorted(BACKENDS)}")
    svec = "triu" if name == "clarabel" else "tril"
    compiled = compile_program(prog, svec=svec)
    scale = _objective_scale(compiled.c, settings.objective_scale)
    scaled = replace(compiled, c=compiled.c * scale)
    t0 = time.perf_counter()
    try:
        raw = BACKENDS[name](scaled, settings)
    except Exception as exc:  # backend crashes are reported, not raised
        return SolveReport(
            status="numerical-failure",
            solve_time=time.perf_counter() - t0,
            backend=name,
            message=f"{type(exc).__name__}: {exc}",
        )
    elapsed = time.perf_counter() - t0
    report = SolveReport(
        status=raw["status"],
        solve_time=elapsed,
        iterations=int(raw.get("iterations", 0)),
        backend=name,
        backend_status=str(raw.get("backend_status", "")),
    )
    x = raw.get("x")
    if x is None or not np.all(np.isfinite(x)):
        if report.status in ("optimal", "inaccurate"):
            report.status = "numerical-failure"
        return report
    report.x = np.asarray(x, dtype=float)
    report.objective = float(compiled.c @ report.x + compiled.c0)
    report.max_residual, report.residuals = check_solution(prog, report.x)
    y = raw.get("y")
    if y is not None and np.all(np.isfinite(y)):
        pobj = scaled.c @ report.x
        dobj = -scaled.b @ y
        report.gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
    if report.status in ("optimal", "inaccurate"):
        feas_ok = report.max_residual <= settings.check_factor * settings.feas_tol
        gap_ok = not np.isfinite(report.gap) or report.gap <= settings.check_factor * settings.gap_tol
        if feas_ok and gap_ok:
            report.status = "optimal"
        else:
            report.status = "numerical-failure"
            report.message = (
                f"backend status {report.backend_status!r}; independent check: "
                f"residual {report.max_residual:.3g}, gap {report.gap:.3g}"
            )
    return report


def _status_from(text: str, table: dict) -> str:
    for key, val in table.items():
        if key in text:
            return val
    return "numerical-failure"


@register_backend("scs")
def _solve_scs(cp: CompiledProgram, settings: SolveSettings) -> dict:
    import scs

    data = {"A": cp.A, "b": cp.b, "c": cp.c}
    cone = {"z": cp.cones["z"], "l": cp.cones["l"], "q": cp.cones["q"], "s": cp.cones["s"]}
    opts = dict(
        eps_abs=settings.feas_tol,
        eps_rel=settings.gap_tol,
        verbose=settings.verbose,
        max_iters=settings.max_iter or 200_000,
    )
    if settings.time_limit:
        opts["time_limit_secs"] = float(settings.time_limit)
    solver = scs.SCS(data, cone, **opts)
    sol = solver.solve()
    info = sol["info"]
    text = info["status"].lower()
    status = _status_from(
        text,
        {
            "inaccurate": "inaccurate",
            "solved": "optimal",
            "infeasible": "primal-infeasible",
            "unbounded": "dual-infeasible",
        },
    )
    if "unbounded" in text:
        status = "dual-infeasible"
    if "infeasible" in text and "unbounded" not in text:
        status = "primal-infeasible"
    if status in ("numerical-failure", "inaccurate") and settings.time_limit and info["solve_time"] / 1e3 >= 0.99 * settings.time_limit:
        status = "time-limit"
    x = sol["x"] if status in ("optimal", "inaccurate", "numerical-failure", "time-limit") else None
    return {
        "status": status,
        "x": x,
        "y": sol["y"] if status in ("optimal", "inaccurate") else None,
        "iterations": info["iter"],
        "backend_status": info["status"],
    }


@register_backend("clarabel")
def _solve_clarabel(cp: CompiledProgram, settings: SolveSettings) -> dict:
    import clarabel

    cones = []
    if cp.cones["z"]:
        cones.append(clarabel.ZeroConeT(cp.cones["z"]))
    if cp.cones["l"]:
        cones.append(clarabel.NonnegativeConeT(cp.cones["l"]))
    cones += [clarabel.SecondOrderConeT(q) for q in cp.cones["q"]]
    cones += [clarabel.PSDTriangleConeT(s) for s in cp.cones["s"]]
    st = clarabel.DefaultSettings()
    st.verbose = settings.verbose
    st.tol_feas = settings.feas_tol
    st.tol_gap_abs = settings.gap_tol
    st.tol_gap_rel = settings.gap_tol
    st.tol_infeas_abs = settings.feas_tol
    st.tol_infeas_rel = settings.feas_tol
    if settings.time_limit:
        st.time_limit = float(settings.time_limit)
    if settings.max_iter:
        st.max_iter = int(settings.max_iter)
    n = cp.A.shape[1]
    P = sp.csc_matrix((n, n))
    solver = clarabel.DefaultSolver(P, cp.c, cp.A.tocsc(), cp.b, cones, st)
    sol = solver.solve()
    text = str(sol.status)
    status = {
        "Solved": "optimal",
        "PrimalInfeasible": "primal-infeasible",
        "DualInfeasible": "dual-infeasible",
        "AlmostSolved": "inaccurate",
        "MaxTime": "time-limit",
        "MaxIterations": "numerical-failure",
    }.get(text, "numerical-failure")
    x = np.asarray(sol.x) if status != "primal-infeasible" else None
    return {
        "status": status,
        "x": x,
        "y": np.asarray(sol.z) if status in ("optimal", "inaccurate") else None,
        "iterations": sol.iterations,
        "backend_status": text,
    }

