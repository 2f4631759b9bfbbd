"""Sum-of-squares feasibility programs over unknown-coefficient polynomials.

A program owns one index space of scalar unknowns. Free scalars (polynomial
coefficients, strictness constants) and the upper-triangle entries of every
Gram block are handles into that space. Expressions are ``SymPoly`` values:
polynomials in x whose coefficients are affine in the unknowns.

``compile`` turns the program into a ``ConicProblem`` (equalities over the
free vector and the column-major vec of each PSD block), which a solver
adapter from ``solver_factory`` solves.
"""
from __future__ import annotations

import logging
import math
import numbers
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import sparse

from densafe.services.poly import (
    COEFF_THRESHOLD,
    Monomial,
    Polynomial,
    StructuralError,
    graded_key,
    monomial_basis,
)

CONST = -1
DEFAULT_MIN_MARGIN = 1e-6
TOL_FEAS = 1e-7
TOL_PSD = 1e-8
MARGIN_CAP = 1.0


class DegreeOverflowError(StructuralError):
    pass


class SolverFailure(RuntimeError):
    pass


class SolveStatus(str, Enum):
    FEASIBLE = "feasible"
    INFEASIBLE = "infeasible"
    NUMERICAL_FAILURE = "numerical_failure"


# --- symbolic polynomials ---------------------------------------------------


def _clean(terms: dict) -> dict:
    out = {}
    for mono, coeffs in terms.items():
        kept = {v: c for v, c in coeffs.items() if abs(c) >= COEFF_THRESHOLD}
        if kept:
            out[mono] = kept
    return out


class SymPoly:
    """Polynomial in x with coefficients affine in program unknowns.

    ``terms[mono][var]`` is the weight of unknown ``var`` in the coefficient of
    ``mono``; the key ``CONST`` holds the fixed part.
    """

    __slots__ = ("terms", "n")
    __array_ufunc__ = None

    def __init__(self, terms: Mapping[Monomial, Mapping[int, float]], n: int):
        self.terms = _clean({m: dict(c) for m, c in terms.items()})
        self.n = n

    @classmethod
    def zero(cls, n: int) -> "SymPoly":
        return cls({}, n)

    @classmethod
    def from_poly(cls, p: Polynomial) -> "SymPoly":
        return cls({m: {CONST: c} for m, c in p.terms.items()}, p.n)

    @classmethod
    def from_handles(cls, basis: Sequence[Monomial], handles: Sequence[int]) -> "SymPoly":
        return cls({m: {v: 1.0} for m, v in zip(basis, handles)}, len(basis[0]))

    @property
    def degree(self) -> int:
        return max((sum(m) for m in self.terms), default=-1)

    def is_zero(self) -> bool:
        return not self.terms

    def monomials(self) -> list[Monomial]:
        return sorted(self.terms, key=graded_key)

    def variables(self) -> set[int]:
        return {v for coeffs in self.terms.values() for v in coeffs if v != CONST}

    def _coerce(self, other):
        if isinstance(other, SymPoly):
            if other.n != self.n:
                raise StructuralError(f"dimension mismatch: {self.n} vs {other.n}")
            return other
        if isinstance(other, Polynomial):
            if other.n != self.n:
                raise StructuralError(f"dimension mismatch: {self.n} vs {other.n}")
            return SymPoly.from_poly(other)
        if isinstance(other, numbers.Real):
            return SymPoly({(0,) * self.n: {CONST: float(other)}}, self.n)
        return None

    def __add__(self, other):
        other = self._coerce(other)
        if other is None:
            return NotImplemented
        terms = {m: dict(c) for m, c in self.terms.items()}
        for mono, coeffs in other.terms.items():
            slot = terms.setdefault(mono, {})
            for v, c in coeffs.items():
                slot[v] = slot.get(v, 0.0) + c
        return SymPoly(terms, self.n)

    __radd__ = __add__

    def __neg__(self):
        return SymPoly({m: {v: -c for v, c in coeffs.items()} for m, coeffs in self.terms.items()}, self.n)

    def __sub__(self, other):
        other = self._coerce(other)
        if other is None:
            return NotImplemented
        return self + (-other)

    def __rsub__(self, other):
        other = self._coerce(other)
        if other is None:
            return NotImplemented
        return other + (-self)

    def __mul__(self, other):
        if isinstance(other, numbers.Real):
            f = float(other)
            return SymPoly({m: {v: c * f for v, c in coeffs.items()} for m, coeffs in self.terms.items()}, self.n)
        if isinstance(other, Polynomial):
            if other.n != self.n:
                raise StructuralError(f"dimension mismatch: {self.n} vs {other.n}")
            terms: dict = {}
            for ma, coeffs in self.terms.items():
                for mb, cb in other.terms.items():
                    mono = tuple(a + b for a, b in zip(ma, mb))
                    slot = terms.setdefault(mono, {})
                    for v, c in coeffs.items():
                        slot[v] = slot.get(v, 0.0) + c * cb
            return SymPoly(terms, self.n)
        # products of two unknown polynomials are not affine
        return NotImplemented

    __rmul__ = __mul__

    def derivative(self, i: int) -> "SymPoly":
        if not 0 <= i < self.n:
            raise StructuralError(f"variable index {i} out of range for dimension {self.n}")
        terms: dict = {}
        for mono, coeffs in self.terms.items():
            e = mono[i]
            if e == 0:
                continue
            lowered = mono[:i] + (e - 1,) + mono[i + 1:]
            slot = terms.setdefault(lowered, {})
            for v, c in coeffs.items():
                slot[v] = slot.get(v, 0.0) + c * e
        return SymPoly(terms, self.n)

    def evaluate(self, values: np.ndarray) -> Polynomial:
        """Substitute numeric values for the unknowns."""
        out = {}
        for mono, coeffs in self.terms.items():
            out[mono] = sum(c * (1.0 if v == CONST else values[v]) for v, c in coeffs.items())
        return Polynomial(out, self.n)

    def __repr__(self):
        return f"SymPoly({len(self.terms)} monomials, {len(self.variables())} unknowns, n={self.n})"


def linear_combination(pairs: Iterable[tuple[float, SymPoly]], n: int) -> SymPoly:
    """sum_k w_k * p_k without building the intermediate sums."""
    terms: dict = {}
    for weight, poly in pairs:
        if weight == 0.0:
            continue
        for mono, coeffs in poly.terms.items():
            slot = terms.setdefault(mono, {})
            for v, c in coeffs.items():
                slot[v] = slot.get(v, 0.0) + weight * c
    return SymPoly(terms, n)


def as_sym(expr, n: int) -> SymPoly:
    if isinstance(expr, SymPoly):
        return expr
    if isinstance(expr, Polynomial):
        return SymPoly.from_poly(expr)
    if isinstance(expr, numbers.Real):
        return SymPoly.zero(n) + float(expr)
    raise StructuralError(f"cannot use {type(expr).__name__} as a program expression")


# --- program objects --------------------------------------------------------


@dataclass(frozen=True)
class UnknownPoly:
    name: str
    n: int
    degree: int
    basis: tuple[Monomial, ...]
    handles: tuple[int, ...]
    sym: SymPoly = field(compare=False, repr=False)
    block: int | None = None

    def value(self, x: np.ndarray) -> Polynomial:
        return self.sym.evaluate(x)


@dataclass(frozen=True)
class GramBlock:
    tag: str
    basis: tuple[Monomial, ...]
    vars: np.ndarray  # k x k symmetric array of program variable indices
    constraint: int | None

    @property
    def size(self) -> int:
        return len(self.basis)


@dataclass(frozen=True)
class EqRow:
    tag: str
    monomial: Monomial
    coeffs: dict
    const: float


@dataclass(frozen=True)
class Constraint:
    kind: str  # "sos" or "eq"
    tag: str
    expr: SymPoly = field(repr=False)
    block: int | None
    rows: range


def gram_sym(basis: Sequence[Monomial], vars: np.ndarray) -> SymPoly:
    """v(x)^T Q v(x) expanded over the upper-triangle handles of Q."""
    terms: dict = {}
    k = len(basis)
    for a in range(k):
        for b in range(a, k):
            mono = tuple(x + y for x, y in zip(basis[a], basis[b]))
            slot = terms.setdefault(mono, {})
            var = int(vars[a, b])
            slot[var] = slot.get(var, 0.0) + (1.0 if a == b else 2.0)
    return SymPoly(terms, len(basis[0]))


def gram_poly(basis: Sequence[Monomial], Q: np.ndarray) -> Polynomial:
    terms: dict = {}
    k = len(basis)
    for a in range(k):
        for b in range(k):
            mono = tuple(x + y for x, y in zip(basis[a], basis[b]))
            terms[mono] = terms.get(mono, 0.0) + float(Q[a, b])
    return Polynomial(terms, len(basis[0]))


class SosProgram:
    def __init__(self, n: int, name: str = "sos", min_margin: float = DEFAULT_MIN_MARGIN):
        self.n = n
        self.name = name
        self.min_margin = min_margin
        self.var_names: list[str] = []
        self.var_kind: list[tuple] = []
        self.unknowns: dict[str, UnknownPoly] = {}
        self.scalars: dict[str, int] = {}
        self.blocks: list[GramBlock] = []
        self.constraints: list[Constraint] = []
        self.rows: list[EqRow] = []
        self.positive: list[int] = []
        self.margin_var: int | None = None

    # -- variables ----------------------------------------------------------

    @property
    def n_vars(self) -> int:
        return len(self.var_names)

    def _new_var(self, name: str, kind: tuple) -> int:
        self.var_names.append(name)
        self.var_kind.append(kind)
        return len(self.var_names) - 1

    def _unique(self, name: str) -> str:
        if name in self.unknowns or name in self.scalars:
            raise StructuralError(f"name {name!r} already declared in program {self.name!r}")
        return name

    def declare_poly(self, degree: int, name: str | None = None) -> UnknownPoly:
        if degree < 0:
            raise StructuralError("polynomial degree must be non-negative")
        name = self._unique(name or f"p{len(self.unknowns)}")
        basis = tuple(monomial_basis(self.n, 0, degree))
        handles = tuple(self._new_var(f"{name}[{i}]", ("free",)) for i in range(len(basis)))
        unknown = UnknownPoly(name, self.n, degree, basis, handles, SymPoly.from_handles(basis, handles))
        self.unknowns[name] = unknown
        return unknown

    def declare_scalar(self, name: str | None = None) -> int:
        name = self._unique(name or f"c{len(self.scalars)}")
        var = self._new_var(name, ("free",))
        self.scalars[name] = var
        return var

    def _new_block(self, tag: str, d: int, constraint: int | None) -> GramBlock:
        basis = tuple(monomial_basis(self.n, 0, d))
        j = len(self.blocks)
        k = len(basis)
        vars = np.zeros((k, k), dtype=int)
        for a in range(k):
            for b in range(a, k):
                var = self._new_var(f"{tag}[{a},{b}]", ("gram", j, a, b))
                vars[a, b] = vars[b, a] = var
        block = GramBlock(tag, basis, vars, constraint)
        self.blocks.append(block)
        return block

    def declare_sos(self, d: int, name: str | None = None) -> UnknownPoly:
        """Unknown polynomial in Sigma_d, carried by its own Gram block."""
        if d < 0:
            raise StructuralError("Gram degree must be non-negative")
        name = self._unique(name or f"s{len(self.unknowns)}")
        block = self._new_block(name, d, None)
        iu = np.triu_indices(block.size)
        unknown = UnknownPoly(
            name, self.n, 2 * d, block.basis, tuple(int(v) for v in block.vars[iu]),
            gram_sym(block.basis, block.vars), len(self.blocks) - 1,
        )
        self.unknowns[name] = unknown
        return unknown

    def require_positive(self, *handles: int):
        """Register scalars that must be strictly positive.

        Compiles to max t s.t. t <= c_k, t <= 1, t >= min_margin.
        """
        if self.margin_var is None:
            self.margin_var = self._new_var("margin", ("free",))
            self.scalars["margin"] = self.margin_var
        self.positive.extend(handles)

    # -- constraints --------------------------------------------------------

    def _add_rows(self, tag: str, diff: SymPoly) -> range:
        start = len(self.rows)
        for mono in diff.monomials():
            coeffs = diff.terms[mono]
            const = coeffs.get(CONST, 0.0)
            linear = {v: c for v, c in coeffs.items() if v != CONST}
            self.rows.append(EqRow(tag, mono, linear, const))
        return range(start, len(self.rows))

    def add_sos(self, expr, d: int, tag: str | None = None, auto_degree: bool = False) -> int:
        expr = as_sym(expr, self.n)
        deg = expr.degree
        if deg > 2 * d:
            if not auto_degree:
                worst = max(expr.terms, key=graded_key)
                raise DegreeOverflowError(
                    f"monomial {worst} of degree {sum(worst)} exceeds Gram degree 2*{d} in {tag or 'constraint'}"
                )
            d = math.ceil(deg / 2)
        cid = len(self.constraints)
        tag = tag or f"sos{cid}"
        block = self._new_block(tag, max(d, 0), cid)
        rows = self._add_rows(tag, expr - gram_sym(block.basis, block.vars))
        self.constraints.append(Constraint("sos", tag, expr, len(self.blocks) - 1, rows))
        return cid

    def add_coeff_equality(self, lhs, rhs, tag: str | None = None) -> list[int]:
        diff = as_sym(lhs, self.n) - as_sym(rhs, self.n)
        cid = len(self.constraints)
        tag = tag or f"eq{cid}"
        rows = self._add_rows(tag, diff)
        self.constraints.append(Constraint("eq", tag, diff, None, rows))
        return list(rows)

    # -- queries ------------------------------------------------------------

    def block_sizes(self) -> list[int]:
        return [b.size for b in self.blocks]

    def report_from_values(self, free_values: Mapping[int, float], grams: Mapping[str, np.ndarray]) -> "SolveReport":
        """Rebuild a feasible-looking report from stored values, for independent re-verification."""
        x = np.zeros(self.n_vars)
        for var, value in free_values.items():
            x[var] = value
        mats = []
        for block in self.blocks:
            if block.tag not in grams:
                raise StructuralError(f"no Gram matrix stored for block {block.tag!r}")
            Q = np.asarray(grams[block.tag], dtype=float)
            if Q.shape != (block.size, block.size):
                raise StructuralError(f"Gram {block.tag!r} has shape {Q.shape}, expected {(block.size, block.size)}")
            iu = np.triu_indices(block.size)
            x[block.vars[iu]] = Q[iu]
            mats.append(Q)
        return SolveReport(SolveStatus.FEASIBLE, x, mats, None, "replay", None, 0.0)


# --- compiled form ----------------------------------------------------------


@dataclass(frozen=True)
class ConicProblem:
    """max c.z s.t. A_free z + sum_j A_j vec(X_j) = b, G z <= h, X_j PSD."""

    n_vars: int
    free_vars: tuple[int, ...]
    free_names: tuple[str, ...]
    block_tags: tuple[str, ...]
    block_sizes: tuple[int, ...]
    block_vars: tuple[np.ndarray, ...]
    A_free: sparse.csr_matrix
    A_blocks: tuple[sparse.csr_matrix, ...]
    b: np.ndarray
    row_labels: tuple[str, ...]
    G_free: sparse.csr_matrix
    h: np.ndarray
    c: np.ndarray

    @property
    def n_free(self) -> int:
        return len(self.free_vars)

    @property
    def n_rows(self) -> int:
        return self.b.shape[0]

    @property
    def block_count(self) -> int:
        return len(self.block_sizes)

    @property
    def max_block(self) -> int:
        return max(self.block_sizes, default=0)

    @property
    def total_scalars(self) -> int:
        return self.n_free + sum(k * (k + 1) // 2 for k in self.block_sizes)

    def is_empty(self) -> bool:
        return self.n_free == 0 and self.block_count == 0 and self.n_rows == 0

    def has_objective(self) -> bool:
        return bool(np.any(self.c))

    def assemble_x(self, z: np.ndarray, grams: Sequence[np.ndarray]) -> np.ndarray:
        x = np.zeros(self.n_vars)
        if self.n_free:
            x[list(self.free_vars)] = z
        for vars, Q in zip(self.block_vars, grams):
            iu = np.triu_indices(vars.shape[0])
            x[vars[iu]] = Q[iu]
        return x

    def equality_residuals(self, z: np.ndarray, grams: Sequence[np.ndarray]) -> np.ndarray:
        lhs = self.A_free @ z if self.n_free else np.zeros(self.n_rows)
        for A, Q in zip(self.A_blocks, grams):
            lhs = lhs + A @ Q.reshape(-1, order="F")
        return lhs - self.b

    def dump(self) -> str:
        """Sparse text form: VARS, PSD, EQ triplets with RHS, INEQ, OBJ."""
        out = [f"# conic problem: {self.n_free} free, {self.block_count} blocks, {self.n_rows} equalities"]
        out.append(f"VARS {self.n_free}")
        out.extend(f"{i} {name}" for i, name in enumerate(self.free_names))
        out.append(f"PSD {self.block_count}")
        out.extend(f"{j} {k} {tag}" for j, (k, tag) in enumerate(zip(self.block_sizes, self.block_tags)))
        out.append(f"EQ {self.n_rows}")
        free = self.A_free.tocoo()
        for r, col, v in sorted(zip(free.row, free.col, free.data)):
            out.append(f"{r} F {col} {v!r}")
        for j, A in enumerate(self.A_blocks):
            coo = A.tocoo()
            for r, col, v in sorted(zip(coo.row, coo.col, coo.data)):
                out.append(f"{r} P{j} {col} {v!r}")
        out.append("RHS")
        out.extend(f"{r} {v!r} {label}" for r, (v, label) in enumerate(zip(self.b, self.row_labels)))
        out.append(f"INEQ {self.h.shape[0]}")
        ineq = self.G_free.tocoo()
        for r, col, v in sorted(zip(ineq.row, ineq.col, ineq.data)):
            out.append(f"{r} F {col} {v!r}")
        out.extend(f"{r} <= {v!r}" for r, v in enumerate(self.h))
        out.append("OBJ max")
        out.extend(f"{i} {v!r}" for i, v in enumerate(self.c) if v != 0.0)
        return "\n".join(out) + "\n"


def compile(program: SosProgram) -> ConicProblem:
    free_vars = [v for v, kind in enumerate(program.var_kind) if kind[0] == "free"]
    z_index = {v: i for i, v in enumerate(free_vars)}
    m = len(program.rows)

    free_trip = ([], [], [])
    block_trip = [([], [], []) for _ in program.blocks]
    b = np.zeros(m)
    for r, row in enumerate(program.rows):
        b[r] = -row.const
        for var, coef in sorted(row.coeffs.items()):
            kind = program.var_kind[var]
            if kind[0] == "free":
                free_trip[0].append(r)
                free_trip[1].append(z_index[var])
                free_trip[2].append(coef)
                continue
            _, j, a, bb = kind
            k = program.blocks[j].size
            rows_j, cols_j, vals_j = block_trip[j]
            if a == bb:
                rows_j.append(r)
                cols_j.append(a + bb * k)
                vals_j.append(coef)
            else:
                rows_j.extend((r, r))
                cols_j.extend((a + bb * k, bb + a * k))
                vals_j.extend((coef / 2.0, coef / 2.0))

    def csr(trip, cols):
        return sparse.coo_matrix((trip[2], (trip[0], trip[1])), shape=(m, cols)).tocsr()

    A_free = csr(free_trip, len(free_vars))
    A_blocks = tuple(csr(trip, blk.size ** 2) for trip, blk in zip(block_trip, program.blocks))

    g_rows, g_cols, g_vals, h = [], [], [], []
    c = np.zeros(len(free_vars))
    if program.margin_var is not None:
        t = z_index[program.margin_var]
        for var in program.positive:
            r = len(h)
            g_rows.extend((r, r))
            g_cols.extend((t, z_index[var]))
            g_vals.extend((1.0, -1.0))
            h.append(0.0)
        for sign, bound in ((1.0, MARGIN_CAP), (-1.0, -program.min_margin)):
            g_rows.append(len(h))
            g_cols.append(t)
            g_vals.append(sign)
            h.append(bound)
        c[t] = 1.0
    G_free = sparse.coo_matrix((g_vals, (g_rows, g_cols)), shape=(len(h), len(free_vars))).tocsr()

    problem = ConicProblem(
        n_vars=program.n_vars,
        free_vars=tuple(free_vars),
        free_names=tuple(program.var_names[v] for v in free_vars),
        block_tags=tuple(blk.tag for blk in program.blocks),
        block_sizes=tuple(blk.size for blk in program.blocks),
        block_vars=tuple(blk.vars for blk in program.blocks),
        A_free=A_free,
        A_blocks=A_blocks,
        b=b,
        row_labels=tuple(f"{row.tag}:{row.monomial}" for row in program.rows),
        G_free=G_free,
        h=np.asarray(h, dtype=float),
        c=c,
    )
    logging.info(
        f"Compiled {program.name}: {problem.n_free} free scalars, {problem.block_count} PSD blocks "
        f"(max {problem.max_block}), {problem.n_rows} equalities"
    )
    return problem


# --- solving ----------------------------------------------------------------


@dataclass(frozen=True)
class Tolerances:
    tol_feas: float = TOL_FEAS
    tol_psd: float = TOL_PSD
    max_iter: int | None = None


@dataclass(frozen=True)
class AdapterResult:
    """What every conic backend returns: status, primal point, stats."""

    status: SolveStatus
    z: np.ndarray | None
    grams: list
    objective: float | None
    solver: str
    iterations: int | None
    solve_time: float
    raw_status: str = ""


@dataclass
class VerificationSummary:
    sound: bool
    min_eigenvalue: float
    worst_block: str | None
    max_sos_residual: float
    worst_sos: str | None
    max_eq_residual: float
    worst_eq: str | None
    min_positive: float | None
    offenders: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "sound": self.sound,
            "min_eigenvalue": self.min_eigenvalue,
            "worst_block": self.worst_block,
            "max_sos_residual": self.max_sos_residual,
            "worst_sos": self.worst_sos,
            "max_eq_residual": self.max_eq_residual,
            "worst_eq": self.worst_eq,
            "min_positive": self.min_positive,
            "offenders": list(self.offenders),
        }


@dataclass
class SolveReport:
    status: SolveStatus
    x: np.ndarray | None
    grams: list
    objective: float | None
    solver: str
    iterations: int | None
    solve_time: float
    max_eq_residual: float | None = None
    min_eigenvalue: float | None = None
    verification: VerificationSummary | None = None
    raw_status: str = ""

    @property
    def feasible(self) -> bool:
        return self.status is SolveStatus.FEASIBLE

    def poly(self, unknown: UnknownPoly) -> Polynomial:
        return unknown.value(self.x)

    def scalar(self, var: int) -> float:
        return float(self.x[var])

    def stats(self) -> dict:
        return {
            "status": self.status.value,
            "solver": self.solver,
            "raw_status": self.raw_status,
            "objective": self.objective,
            "iterations": self.iterations,
            "solve_time": self.solve_time,
            "max_eq_residual": self.max_eq_residual,
            "min_eigenvalue": self.min_eigenvalue,
        }


def solve(problem: ConicProblem, adapter=None, tolerances: Tolerances | None = None) -> SolveReport:
    tolerances = tolerances or Tolerances()
    if problem.is_empty():
        return SolveReport(SolveStatus.FEASIBLE, np.zeros(problem.n_vars), [], 0.0, "none", 0, 0.0, 0.0, None)
    if adapter is None:
        from densafe.services.solver_factory import SolverFactory

        adapter = SolverFactory.get_solver_with_fallback()
    result: AdapterResult = adapter.solve(problem, tolerances)
    report = SolveReport(
        result.status, None, [], result.objective, result.solver, result.iterations,
        result.solve_time, raw_status=result.raw_status,
    )
    if result.status is SolveStatus.FEASIBLE:
        grams = [np.asarray(Q, dtype=float) for Q in result.grams]
        z = np.asarray(result.z, dtype=float) if problem.n_free else np.zeros(0)
        report.x = problem.assemble_x(z, grams)
        report.grams = grams
        residuals = problem.equality_residuals(z, grams)
        report.max_eq_residual = float(np.max(np.abs(residuals))) if residuals.size else 0.0
        report.min_eigenvalue = min((float(np.linalg.eigvalsh(Q)[0]) for Q in grams if Q.size), default=0.0)
    logging.info(f"Solve finished with {result.solver}: {result.status.value} in {result.solve_time:.2f}s")
    return report


# --- independent verification -----------------------------------------------


def verify_certificate(
    program: SosProgram,
    report: SolveReport,
    tol_feas: float = TOL_FEAS,
    tol_psd: float = TOL_PSD,
) -> VerificationSummary:
    """Re-derive every identity of the program from the report's numbers."""
    if report.x is None:
        raise StructuralError("verification needs a report with primal values")
    x = report.x
    failures: list[tuple[float, str]] = []

    min_eig, worst_block = np.inf, None
    for block, Q in zip(program.blocks, report.grams):
        sym = 0.5 * (Q + Q.T)
        lam = float(np.linalg.eigvalsh(sym)[0]) if sym.size else 0.0
        if lam < min_eig:
            min_eig, worst_block = lam, block.tag
        if lam < -tol_psd:
            failures.append((-lam, f"{block.tag}: Gram min eigenvalue {lam:.3e}"))

    max_sos, worst_sos = 0.0, None
    max_eq, worst_eq = 0.0, None
    for con in program.constraints:
        if con.kind == "sos":
            block = program.blocks[con.block]
            residual = con.expr.evaluate(x) - gram_poly(block.basis, report.grams[con.block])
            for mono, c in residual.terms.items():
                if abs(c) > max_sos:
                    max_sos, worst_sos = abs(c), f"{con.tag}:{mono}"
                if abs(c) > tol_feas:
                    failures.append((abs(c), f"{con.tag}: coefficient residual {c:.3e} at monomial {mono}"))
        else:
            residual = con.expr.evaluate(x)
            for mono, c in residual.terms.items():
                if abs(c) > max_eq:
                    max_eq, worst_eq = abs(c), f"{con.tag}:{mono}"
                if abs(c) > tol_feas:
                    failures.append((abs(c), f"{con.tag}: equality residual {c:.3e} at monomial {mono}"))

    min_positive = None
    if program.positive:
        min_positive = min(float(x[v]) for v in program.positive)
        if min_positive <= 0.0:
            name = program.var_names[min(program.positive, key=lambda v: x[v])]
            failures.append((abs(min_positive) + 1.0, f"{name}: required positive, got {min_positive:.3e}"))

    failures.sort(key=lambda item: -item[0])
    summary = VerificationSummary(
        sound=not failures,
        min_eigenvalue=float(min_eig) if np.isfinite(min_eig) else 0.0,
        worst_block=worst_block,
        max_sos_residual=max_sos,
        worst_sos=worst_sos,
        max_eq_residual=max_eq,
        worst_eq=worst_eq,
        min_positive=min_positive,
        offenders=[msg for _, msg in failures[:10]],
    )
    report.verification = summary
    if not summary.sound:
        logging.warning(f"Certificate verification failed: {summary.offenders[0]}")
    return summary
