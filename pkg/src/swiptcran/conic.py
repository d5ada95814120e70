"""A small solver-agnostic conic program representation.

Variables are real scalars. Matrix variables are declared as blocks whose
parameters are ordinary scalars; a Hermitian block of size n > 1 is stored
through its real embedding ``[[Re H, -Im H], [Im H, Re H]]`` so that a
single real PSD cone of size 2n enforces ``H >= 0``.

Constraint kinds:

* ``ge`` / ``eq``: ``expr >= 0`` / ``expr == 0``
* ``soc``: ``||xs|| <= t``
* ``rsoc``: ``x * y >= ||zs||**2`` with ``x, y >= 0``
* ``exp``: ``t <= log(s)``
* ``psd``: a declared block is positive semidefinite

Every constraint carries a ``family`` label (which model constraint it
encodes) and a ``tally`` class used for size accounting.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

HERMITIAN_TOL = 1e-10
SQRT2 = math.sqrt(2.0)


class Affine:
    """Sparse affine expression ``const + sum(coef[i] * x[i])``."""

    __slots__ = ("coef", "const")

    def __init__(self, coef: dict | None = None, const: float = 0.0):
        self.coef = coef if coef is not None else {}
        self.const = float(const)

    @staticmethod
    def lift(x) -> "Affine":
        if isinstance(x, Affine):
            return x
        return Affine(None, float(x))

    def copy(self) -> "Affine":
        return Affine(dict(self.coef), self.const)

    def __add__(self, other):
        other = Affine.lift(other)
        coef = dict(self.coef)
        for k, v in other.coef.items():
            coef[k] = coef.get(k, 0.0) + v
        return Affine(coef, self.const + other.const)

    __radd__ = __add__

    def __neg__(self):
        return Affine({k: -v for k, v in self.coef.items()}, -self.const)

    def __sub__(self, other):
        return self + (-Affine.lift(other))

    def __rsub__(self, other):
        return Affine.lift(other) + (-self)

    def __mul__(self, s):
        if isinstance(s, Affine):
            raise TypeError("product of affine expressions is not affine")
        s = float(s)
        return Affine({k: v * s for k, v in self.coef.items()}, self.const * s)

    __rmul__ = __mul__

    def __truediv__(self, s):
        return self * (1.0 / float(s))

    def value(self, x: np.ndarray) -> float:
        if not self.coef:
            return self.const
        idx = np.fromiter(self.coef.keys(), dtype=np.int64, count=len(self.coef))
        c = np.fromiter(self.coef.values(), dtype=float, count=len(self.coef))
        return float(self.const + c @ x[idx])

    def magnitude(self, x: np.ndarray) -> float:
        if not self.coef:
            return abs(self.const)
        idx = np.fromiter(self.coef.keys(), dtype=np.int64, count=len(self.coef))
        c = np.fromiter(self.coef.values(), dtype=float, count=len(self.coef))
        return float(abs(self.const) + np.abs(c * x[idx]).sum())


def asum(terms) -> Affine:
    """Sum of affine expressions without quadratic dict copying."""
    coef: dict = {}
    const = 0.0
    for t in terms:
        t = Affine.lift(t)
        const += t.const
        for k, v in t.coef.items():
            coef[k] = coef.get(k, 0.0) + v
    return Affine(coef, const)


# ---------------------------------------------------------------------------
# Hermitian embedding


def embed_hermitian(H) -> np.ndarray:
    H = np.asarray(H, dtype=complex)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValueError("expected a square matrix")
    if np.max(np.abs(H - H.conj().T), initial=0.0) > HERMITIAN_TOL * max(1.0, np.max(np.abs(H), initial=0.0)):
        raise ValueError("matrix is not Hermitian")
    A, B = H.real, H.imag
    return np.block([[A, -B], [B, A]])


def unembed_hermitian(Y) -> np.ndarray:
    Y = np.asarray(Y, dtype=float)
    n2 = Y.shape[0]
    if n2 % 2:
        raise ValueError("embedded blocks have even dimension")
    n = n2 // 2
    A = 0.5 * (Y[:n, :n] + Y[n:, n:])
    B = 0.5 * (Y[n:, :n] - Y[:n, n:])
    H = A + 1j * B
    return 0.5 * (H + H.conj().T)


def _svec_order(n):
    """(row, col) pairs of the upper triangle in column-major order."""
    return [(r, c) for c in range(n) for r in range(c + 1)]


@dataclass
class Block:
    name: str
    dim: int  # logical dimension (complex dimension for Hermitian blocks)
    hermitian: bool
    params: np.ndarray  # global variable indices
    tally: str = "psd"

    @property
    def embedded(self) -> bool:
        return self.hermitian and self.dim > 1

    @property
    def cone_dim(self) -> int:
        return 2 * self.dim if self.embedded else self.dim

    def svec_map(self) -> np.ndarray:
        return _svec_map(self.dim, self.embedded)

    def trace_coefficients(self, C) -> np.ndarray:
        """Coefficients of ``trace(C X)`` on this block's parameters."""
        C = np.asarray(C)
        n = self.dim
        iu = np.triu_indices(n)
        mult = np.where(iu[0] == iu[1], 1.0, 2.0)
        re = np.real(C[iu]) * mult
        if not self.embedded:
            return re
        iu1 = np.triu_indices(n, 1)
        im = 2.0 * np.imag(C[iu1])
        return np.concatenate([re, im])

    def params_from_matrix(self, X) -> np.ndarray:
        X = np.asarray(X)
        iu = np.triu_indices(self.dim)
        re = np.real(X[iu])
        if not self.embedded:
            return re
        iu1 = np.triu_indices(self.dim, 1)
        return np.concatenate([re, np.imag(X[iu1])])

    def matrix_from_params(self, p: np.ndarray) -> np.ndarray:
        n = self.dim
        iu = np.triu_indices(n)
        X = np.zeros((n, n), dtype=complex if self.embedded else float)
        npar = len(iu[0])
        X[iu] = p[:npar]
        if self.embedded:
            iu1 = np.triu_indices(n, 1)
            X[iu1] = X[iu1] + 1j * p[npar:]
            X = X + np.triu(X, 1).conj().T
        else:
            X = X + np.triu(X, 1).T
        return X


_SVEC_CACHE: dict = {}


def _svec_map(n: int, embedded: bool) -> np.ndarray:
    """Dense map from block parameters to the scaled svec of the cone matrix."""
    key = (n, embedded)
    if key in _SVEC_CACHE:
        return _SVEC_CACHE[key]
    iu = list(zip(*np.triu_indices(n)))
    re_idx = {ij: p for p, ij in enumerate(iu)}
    if not embedded:
        order = _svec_order(n)
        T = np.zeros((len(order), len(iu)))
        for row, (r, c) in enumerate(order):
            T[row, re_idx[(r, c)]] = 1.0 if r == c else SQRT2
        _SVEC_CACHE[key] = T
        return T
    iu1 = list(zip(*np.triu_indices(n, 1)))
    im_idx = {ij: len(iu) + p for p, ij in enumerate(iu1)}
    order = _svec_order(2 * n)
    T = np.zeros((len(order), len(iu) + len(iu1)))
    for row, (r, c) in enumerate(order):
        s = 1.0 if r == c else SQRT2
        if c < n or r >= n:
            i, j = (r % n, c % n)
            T[row, re_idx[(min(i, j), max(i, j))]] = s
        else:
            # Y[r, c] = -B[i, j] with B = Im H antisymmetric
            i, j = r, c - n
            if i < j:
                T[row, im_idx[(i, j)]] = -s
            elif i > j:
                T[row, im_idx[(j, i)]] = s
    _SVEC_CACHE[key] = T
    return T


# ---------------------------------------------------------------------------
# Program


@dataclass
class Constraint:
    kind: str
    exprs: list
    family: str
    tally: str
    block: str | None = None


class ConicProgram:
    def __init__(self, name: str = "program"):
        self.name = name
        self.var_names: list[str] = []
        self.scalars: dict[str, int] = {}
        self.scales: dict[str, float] = {}
        self.blocks: dict[str, Block] = {}
        self.constraints: list[Constraint] = []
        self.objective = Affine()
        self.meta: dict = {}

    @property
    def n_vars(self) -> int:
        return len(self.var_names)

    def _new_var(self, name):
        self.var_names.append(name)
        return len(self.var_names) - 1

    def scalar(self, name: str, lower: float | None = None, scale: float = 1.0) -> Affine:
        """Declare a real scalar.

        The solver works with ``value / scale``; expressions and reported
        values are in true units. A scale near the expected magnitude keeps
        the solver's iterates O(1).
        """
        if name in self.scalars or name in self.blocks:
            raise ValueError(f"duplicate variable {name!r}")
        if not scale > 0:
            raise ValueError("scale must be positive")
        idx = self._new_var(name)
        self.scalars[name] = idx
        self.scales[name] = float(scale)
        x = Affine({idx: float(scale)})
        if lower is not None:
            self.add_ge(x - lower, family=f"bound:{name}", tally="bound")
        return x

    def var(self, name: str) -> Affine:
        return Affine({self.scalars[name]: self.scales[name]})

    def scalar_values(self, x: np.ndarray) -> dict:
        return {name: float(x[i]) * self.scales[name] for name, i in self.scalars.items()}

    def point(self, values: dict, blocks: dict | None = None) -> np.ndarray:
        """Solver vector from true scalar values and block matrices."""
        x = np.zeros(self.n_vars)
        for name, v in values.items():
            x[self.scalars[name]] = v / self.scales[name]
        for name, X in (blocks or {}).items():
            blk = self.blocks[name]
            x[blk.params] = blk.params_from_matrix(X)
        return x

    def block(self, name: str, dim: int, hermitian: bool = True, tally: str = "psd") -> Block:
        if name in self.scalars or name in self.blocks:
            raise ValueError(f"duplicate variable {name!r}")
        npar = dim * dim if (hermitian and dim > 1) else dim * (dim + 1) // 2
        params = np.array([self._new_var(f"{name}#{p}") for p in range(npar)], dtype=np.int64)
        blk = Block(name, dim, hermitian, params, tally)
        self.blocks[name] = blk
        self.constraints.append(Constraint("psd", [], family=f"psd:{name}", tally=tally, block=name))
        return blk

    def trace(self, block: str | Block, C) -> Affine:
        blk = self.blocks[block] if isinstance(block, str) else block
        coef = blk.trace_coefficients(C)
        return Affine({int(i): float(c) for i, c in zip(blk.params, coef) if c != 0.0})

    def add_ge(self, expr, family="", tally="linear"):
        self.constraints.append(Constraint("ge", [Affine.lift(expr)], family, tally))

    def add_eq(self, expr, family="", tally="linear"):
        self.constraints.append(Constraint("eq", [Affine.lift(expr)], family, tally))

    def add_soc(self, t, xs, family="", tally="soc"):
        self.constraints.append(Constraint("soc", [Affine.lift(t)] + [Affine.lift(x) for x in xs], family, tally))

    def add_rsoc(self, x, y, zs, family="", tally="soc", balance: float = 1.0):
        """``x * y >= ||zs||**2``; the solver sees ``(x / balance) * (y * balance)``.

        A balance near ``sqrt(x / y)`` at the expected solution keeps the two
        factors comparable, which matters when they differ by many orders.
        """
        if not balance > 0:
            raise ValueError("balance must be positive")
        exprs = [Affine.lift(x) / balance, Affine.lift(y) * balance] + [Affine.lift(z) for z in zs]
        self.constraints.append(Constraint("rsoc", exprs, family, tally))

    def add_exp(self, t, s, family="", tally="exp"):
        """``t <= log(s)``."""
        self.constraints.append(Constraint("exp", [Affine.lift(t), Affine.lift(s)], family, tally))

    def maximize(self, expr):
        self.objective = Affine.lift(expr)

    def tally(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for c in self.constraints:
            out[c.tally] = out.get(c.tally, 0) + 1
        return out

    def families(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for c in self.constraints:
            fam = c.family.split("[")[0]
            out[fam] = out.get(fam, 0) + 1
        return out

    def validate(self):
        n = self.n_vars
        for c in self.constraints:
            if c.kind == "psd":
                if c.block not in self.blocks:
                    raise ValueError(f"unknown block {c.block!r}")
                continue
            for e in c.exprs:
                for k in e.coef:
                    if not 0 <= k < n:
                        raise ValueError(f"constraint {c.family!r} references undeclared variable {k}")

    # -- evaluation --------------------------------------------------------

    def block_matrix(self, name: str, x: np.ndarray) -> np.ndarray:
        """Cone matrix (embedded for Hermitian blocks) at ``x``."""
        blk = self.blocks[name]
        X = blk.matrix_from_params(x[blk.params])
        return embed_hermitian(X) if blk.embedded else np.real(X)

    def residuals(self, x: np.ndarray) -> np.ndarray:
        """Normalized violation of every constraint at ``x`` (0 when satisfied)."""
        out = np.zeros(len(self.constraints))
        for i, c in enumerate(self.constraints):
            out[i] = _violation(self, c, x)
        return out

    def dump(self) -> str:
        lines = [f"program {self.name}", f"variables {self.n_vars}"]
        for name, idx in self.scalars.items():
            sc = self.scales[name]
            lines.append(f"  scalar {name} @{idx}" + (f" scale {sc:.6g}" if sc != 1.0 else ""))
        for name, blk in self.blocks.items():
            kind = "hermitian" if blk.hermitian else "symmetric"
            lines.append(f"  block {name} {kind} {blk.dim}x{blk.dim} cone {blk.cone_dim} params {len(blk.params)}")
        lines.append(f"objective maximize {_fmt_affine(self.objective, self.var_names)}")
        lines.append(f"constraints {len(self.constraints)}")
        for c in self.constraints:
            if c.kind == "psd":
                body = c.block
            else:
                body = " ; ".join(_fmt_affine(e, self.var_names) for e in c.exprs)
            lines.append(f"  [{c.tally}] {c.kind} {c.family}: {body}")
        return "\n".join(lines) + "\n"


def _fmt_affine(e: Affine, names) -> str:
    parts = [f"{v:+.6g}*{names[k]}" for k, v in sorted(e.coef.items())]
    if e.const != 0.0 or not parts:
        parts.append(f"{e.const:+.6g}")
    return " ".join(parts)


def _violation(prog: ConicProgram, c: Constraint, x: np.ndarray) -> float:
    if c.kind == "psd":
        Y = prog.block_matrix(c.block, x)
        lam = np.linalg.eigvalsh(Y)
        return max(0.0, -lam[0]) / max(1.0, np.abs(lam).max(initial=0.0))
    vals = [e.value(x) for e in c.exprs]
    if c.kind == "ge":
        return max(0.0, -vals[0]) / max(1.0, c.exprs[0].magnitude(x))
    if c.kind == "eq":
        return abs(vals[0]) / max(1.0, c.exprs[0].magnitude(x))
    if c.kind == "soc":
        t, rest = vals[0], np.array(vals[1:])
        nrm = float(np.linalg.norm(rest))
        return max(0.0, nrm - t) / max(1.0, abs(t), nrm)
    if c.kind == "rsoc":
        # product form: the cone's own residual hides large relative errors
        # when the two factors differ by many orders of magnitude
        a, b, z = vals[0], vals[1], np.array(vals[2:])
        zz = float(z @ z)
        if a < 0 or b < 0:
            return max(-a, -b) / max(1.0, abs(a) + abs(b))
        return max(0.0, zz - a * b) / max(zz, a * b, 1e-12)
    if c.kind == "exp":
        t, s = vals
        if s <= 0:
            return math.inf
        return max(0.0, t - math.log(s)) / max(1.0, abs(t))
    raise ValueError(f"unknown constraint kind {c.kind!r}")


# ---------------------------------------------------------------------------
# Solve


OPTIMAL = "optimal"
NEAR_OPTIMAL = "near_optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
NUMERICAL_FAILURE = "numerical_failure"


@dataclass
class SolveOptions:
    backend: str = "clarabel"
    tol_feas: float = 1e-8
    tol_gap: float = 1e-8
    max_iter: int = 200
    residual_tol: float = 1e-6
    verbose: bool = False


@dataclass
class SolveReport:
    status: str
    objective_value: float = math.nan
    values: dict = field(default_factory=dict)
    blocks: dict = field(default_factory=dict)
    block_embedded: dict = field(default_factory=dict)
    iterations: int = 0
    wall_time: float = 0.0
    max_residual: float = math.inf
    backend_status: str = ""
    x: np.ndarray | None = None

    @property
    def ok(self) -> bool:
        return self.status in (OPTIMAL, NEAR_OPTIMAL)


def _rows_for(prog: ConicProgram, c: Constraint):
    """Affine rows whose stacked values must lie in the constraint's cone."""
    e = c.exprs
    if c.kind in ("ge", "eq"):
        return e
    if c.kind == "soc":
        return e
    if c.kind == "rsoc":
        x, y, zs = e[0], e[1], e[2:]
        return [x + y, x - y] + [z * 2.0 for z in zs]
    if c.kind == "exp":
        return [e[0], Affine(None, 1.0), e[1]]
    raise ValueError(c.kind)


def _assemble_clarabel(prog: ConicProgram):
    import clarabel

    rows, cols, vals, b = [], [], [], []
    cones = []

    def push(expr: Affine):
        r = len(b)
        for k, v in expr.coef.items():
            rows.append(r)
            cols.append(k)
            vals.append(-v)
        b.append(expr.const)

    eqs = [c for c in prog.constraints if c.kind == "eq"]
    ges = [c for c in prog.constraints if c.kind == "ge"]
    for c in eqs:
        push(c.exprs[0])
    if eqs:
        cones.append(clarabel.ZeroConeT(len(eqs)))
    for c in ges:
        push(c.exprs[0])
    if ges:
        cones.append(clarabel.NonnegativeConeT(len(ges)))
    for c in prog.constraints:
        if c.kind in ("soc", "rsoc"):
            rs = _rows_for(prog, c)
            for r in rs:
                push(r)
            cones.append(clarabel.SecondOrderConeT(len(rs)))
        elif c.kind == "exp":
            for r in _rows_for(prog, c):
                push(r)
            cones.append(clarabel.ExponentialConeT())
    for c in prog.constraints:
        if c.kind != "psd":
            continue
        blk = prog.blocks[c.block]
        T = blk.svec_map()
        r0 = len(b)
        nz = np.nonzero(T)
        rows.extend((r0 + nz[0]).tolist())
        cols.extend(blk.params[nz[1]].tolist())
        vals.extend((-T[nz]).tolist())
        b.extend([0.0] * T.shape[0])
        if blk.cone_dim == 1:
            cones.append(clarabel.NonnegativeConeT(1))
        else:
            cones.append(clarabel.PSDTriangleConeT(blk.cone_dim))
    A = sp.csc_matrix((vals, (rows, cols)), shape=(len(b), prog.n_vars))
    return A, np.asarray(b, dtype=float), cones


def _status_from_clarabel(raw: str) -> str:
    if raw == "Solved":
        return OPTIMAL
    if raw == "AlmostSolved":
        return NEAR_OPTIMAL
    if raw in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
        return INFEASIBLE
    if raw in ("DualInfeasible", "AlmostDualInfeasible"):
        return UNBOUNDED
    return NUMERICAL_FAILURE


def _solve_clarabel(prog: ConicProgram, options: SolveOptions):
    import clarabel

    A, b, cones = _assemble_clarabel(prog)
    n = prog.n_vars
    q = np.zeros(n)
    for k, v in prog.objective.coef.items():
        q[k] -= v
    settings = clarabel.DefaultSettings()
    settings.verbose = options.verbose
    settings.tol_feas = options.tol_feas
    settings.tol_gap_abs = options.tol_gap
    settings.tol_gap_rel = options.tol_gap
    settings.max_iter = options.max_iter
    solver = clarabel.DefaultSolver(sp.csc_matrix((n, n)), q, A, b, cones, settings)
    sol = solver.solve()
    return np.asarray(sol.x, dtype=float), str(sol.status), int(sol.iterations)


BACKENDS: dict[str, Callable] = {"clarabel": _solve_clarabel}


def register_backend(name: str, fn: Callable):
    """``fn(program, options) -> (x, backend_status_string, iterations)``.

    The backend status is mapped through ``_status_from_clarabel`` naming;
    backends with other vocabularies should translate before returning.
    """
    BACKENDS[name] = fn


def solve(prog: ConicProgram, options: SolveOptions | None = None) -> SolveReport:
    options = options or SolveOptions()
    prog.validate()
    if options.backend not in BACKENDS:
        raise ValueError(f"unknown backend {options.backend!r}")
    backend = BACKENDS[options.backend]
    t0 = time.perf_counter()
    try:
        x, raw, iters = backend(prog, options)
    except Exception as exc:  # backend crashes are reported in-band
        return SolveReport(status=NUMERICAL_FAILURE, backend_status=f"{type(exc).__name__}: {exc}",
                           wall_time=time.perf_counter() - t0)
    wall = time.perf_counter() - t0
    status = _status_from_clarabel(raw)
    report = SolveReport(status=status, iterations=iters, wall_time=wall, backend_status=raw)
    if x is None or not np.all(np.isfinite(x)) or status in (INFEASIBLE, UNBOUNDED):
        if status in (OPTIMAL, NEAR_OPTIMAL):
            report.status = NUMERICAL_FAILURE
        return report
    # the last iterate of a failed solve is kept for callers that can repair it
    report.x = x
    report.objective_value = prog.objective.value(x)
    report.values = prog.scalar_values(x)
    for name, blk in prog.blocks.items():
        report.blocks[name] = prog.block_matrix(name, x)
        report.block_embedded[name] = blk.embedded
    report.max_residual = float(prog.residuals(x).max(initial=0.0))
    if status == OPTIMAL and report.max_residual > options.residual_tol:
        report.status = NEAR_OPTIMAL
    return report


def extract_psd_block(report: SolveReport, name: str) -> np.ndarray:
    """Symmetrized block value; Hermitian blocks are returned un-embedded."""
    if name not in report.blocks:
        raise KeyError(f"unknown block {name!r}")
    Y = np.asarray(report.blocks[name], dtype=float)
    Y = 0.5 * (Y + Y.T)
    if report.block_embedded.get(name, False):
        return unembed_hermitian(Y)
    return Y
