"""Sparse multivariate polynomials over a fixed list of state variables.

A :class:`Polynomial` maps exponent tuples (one entry per state variable) to
float coefficients. Values are immutable; every operation returns a new
object. Terms whose coefficient magnitude falls below ``COEFF_THRESHOLD`` are
dropped after each operation so term maps do not fill up with round-off.
"""
from __future__ import annotations

import itertools
import math
import numbers
from types import MappingProxyType
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

Monomial = tuple[int, ...]

COEFF_THRESHOLD = 1e-12
ZERO_DEGREE = -1


class StructuralError(ValueError):
    """Raised when polynomial objects of different shapes are combined."""


def graded_key(mono: Monomial):
    """Sort key for graded lexicographic order (x1 > x2 > ... within a degree)."""
    return (sum(mono), tuple(-e for e in mono))


def default_variables(n: int) -> list[str]:
    return [f"x{i + 1}" for i in range(n)]


class Polynomial:
    __slots__ = ("_terms", "_n", "_exps", "_coeffs")
    __array_ufunc__ = None

    def __init__(self, terms: Mapping[Monomial, float], n: int):
        clean = {}
        for mono, coeff in terms.items():
            if len(mono) != n:
                raise StructuralError(f"monomial {mono} does not have {n} exponents")
            coeff = float(coeff)
            if abs(coeff) >= COEFF_THRESHOLD:
                clean[mono] = coeff
        self._terms = dict(sorted(clean.items(), key=lambda kv: graded_key(kv[0])))
        self._n = n
        self._exps = None
        self._coeffs = None

    # -- constructors -------------------------------------------------------

    @classmethod
    def zero(cls, n: int) -> "Polynomial":
        return cls({}, n)

    @classmethod
    def constant(cls, value: float, n: int) -> "Polynomial":
        return cls({(0,) * n: value}, n)

    @classmethod
    def variable(cls, i: int, n: int) -> "Polynomial":
        if not 0 <= i < n:
            raise StructuralError(f"variable index {i} out of range for dimension {n}")
        mono = tuple(1 if k == i else 0 for k in range(n))
        return cls({mono: 1.0}, n)

    @classmethod
    def monomial(cls, mono: Monomial, coeff: float = 1.0) -> "Polynomial":
        return cls({tuple(mono): coeff}, len(mono))

    # -- inspection ---------------------------------------------------------

    @property
    def n(self) -> int:
        return self._n

    @property
    def terms(self) -> Mapping[Monomial, float]:
        return MappingProxyType(self._terms)

    @property
    def degree(self) -> int:
        if not self._terms:
            return ZERO_DEGREE
        return max(sum(m) for m in self._terms)

    def is_zero(self) -> bool:
        return not self._terms

    def coeff(self, mono: Monomial) -> float:
        return self._terms.get(tuple(mono), 0.0)

    def max_abs_coeff(self) -> float:
        return max((abs(c) for c in self._terms.values()), default=0.0)

    def __len__(self) -> int:
        return len(self._terms)

    # -- arithmetic ---------------------------------------------------------

    def _coerce(self, other):
        if isinstance(other, Polynomial):
            if other._n != self._n:
                raise StructuralError(f"dimension mismatch: {self._n} vs {other._n}")
            return other
        if isinstance(other, numbers.Real):
            return Polynomial.constant(float(other), self._n)
        return None

    def __add__(self, other):
        other = self._coerce(other)
        if other is None:
            return NotImplemented
        terms = dict(self._terms)
        for mono, c in other._terms.items():
            terms[mono] = terms.get(mono, 0.0) + c
        return Polynomial(terms, self._n)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial({m: -c for m, c in self._terms.items()}, self._n)

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
            return Polynomial({m: c * other for m, c in self._terms.items()}, self._n)
        other = self._coerce(other)
        if other is None:
            return NotImplemented
        terms: dict[Monomial, float] = {}
        for ma, ca in self._terms.items():
            for mb, cb in other._terms.items():
                mono = tuple(a + b for a, b in zip(ma, mb))
                terms[mono] = terms.get(mono, 0.0) + ca * cb
        return Polynomial(terms, self._n)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, numbers.Real):
            return NotImplemented
        return self * (1.0 / other)

    def __pow__(self, k: int):
        if not isinstance(k, int) or k < 0:
            raise StructuralError("polynomial powers must be non-negative integers")
        result = Polynomial.constant(1.0, self._n)
        base = self
        while k:
            if k & 1:
                result = result * base
            base = base * base
            k >>= 1
        return result

    def __eq__(self, other):
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self._n == other._n and self._terms == other._terms

    def __hash__(self):
        return hash((self._n, frozenset(self._terms.items())))

    def approx_equal(self, other: "Polynomial", tol: float = 1e-9) -> bool:
        return (self - other).max_abs_coeff() <= tol

    # -- calculus -----------------------------------------------------------

    def derivative(self, i: int) -> "Polynomial":
        if not 0 <= i < self._n:
            raise StructuralError(f"variable index {i} out of range for dimension {self._n}")
        terms: dict[Monomial, float] = {}
        for mono, c in self._terms.items():
            e = mono[i]
            if e == 0:
                continue
            lowered = mono[:i] + (e - 1,) + mono[i + 1:]
            terms[lowered] = terms.get(lowered, 0.0) + c * e
        return Polynomial(terms, self._n)

    def gradient(self) -> "PolyVector":
        return PolyVector([self.derivative(i) for i in range(self._n)], self._n)

    # -- evaluation ---------------------------------------------------------

    def _arrays(self):
        if self._exps is None:
            if self._terms:
                self._exps = np.array(list(self._terms.keys()), dtype=float)
                self._coeffs = np.array(list(self._terms.values()), dtype=float)
            else:
                self._exps = np.zeros((0, self._n))
                self._coeffs = np.zeros(0)
        return self._exps, self._coeffs

    def __call__(self, x):
        """Evaluate at one point (shape ``(n,)``) or many (shape ``(m, n)``)."""
        pts = np.asarray(x, dtype=float)
        single = pts.ndim == 1
        pts = np.atleast_2d(pts)
        if pts.shape[1] != self._n:
            raise StructuralError(f"points have dimension {pts.shape[1]}, expected {self._n}")
        exps, coeffs = self._arrays()
        if not len(coeffs):
            values = np.zeros(pts.shape[0])
        else:
            values = np.prod(pts[:, None, :] ** exps[None, :, :], axis=2) @ coeffs
        return float(values[0]) if single else values

    evaluate = __call__

    # -- printing -----------------------------------------------------------

    def to_string(self, variables: Sequence[str] | None = None) -> str:
        names = list(variables) if variables is not None else default_variables(self._n)
        if not self._terms:
            return "0"
        parts = []
        for mono, c in reversed(list(self._terms.items())):
            factors = []
            for name, e in zip(names, mono):
                if e == 1:
                    factors.append(name)
                elif e > 1:
                    factors.append(f"{name}^{e}")
            magnitude = abs(c)
            if not factors:
                body = repr(magnitude)
            elif magnitude == 1.0:
                body = "*".join(factors)
            else:
                body = "*".join([repr(magnitude)] + factors)
            if not parts:
                parts.append(f"-{body}" if c < 0 else body)
            else:
                parts.append(f"- {body}" if c < 0 else f"+ {body}")
        return " ".join(parts)

    def __str__(self):
        return self.to_string()

    def __repr__(self):
        return f"Polynomial({self.to_string()!r}, n={self._n})"


class PolyVector(Sequence[Polynomial]):
    """Fixed-length ordered list of polynomials sharing one dimension."""

    __slots__ = ("_entries", "_n")
    __array_ufunc__ = None

    def __init__(self, entries: Iterable[Polynomial], n: int | None = None):
        entries = tuple(entries)
        if n is None:
            if not entries:
                raise StructuralError("an empty PolyVector needs an explicit dimension")
            n = entries[0].n
        for p in entries:
            if p.n != n:
                raise StructuralError(f"entry of dimension {p.n} in a vector of dimension {n}")
        self._entries = entries
        self._n = n

    @property
    def n(self) -> int:
        return self._n

    @property
    def degree(self) -> int:
        return max((p.degree for p in self._entries), default=ZERO_DEGREE)

    def __len__(self) -> int:
        return len(self._entries)

    def __getitem__(self, idx):
        if isinstance(idx, slice):
            return PolyVector(self._entries[idx], self._n)
        return self._entries[idx]

    def __iter__(self) -> Iterator[Polynomial]:
        return iter(self._entries)

    def __eq__(self, other):
        if not isinstance(other, PolyVector):
            return NotImplemented
        return self._n == other._n and self._entries == other._entries

    def __hash__(self):
        return hash((self._n, self._entries))

    def approx_equal(self, other: "PolyVector", tol: float = 1e-9) -> bool:
        return len(self) == len(other) and all(a.approx_equal(b, tol) for a, b in zip(self, other))

    def dot(self, other) -> Polynomial:
        if len(other) != len(self):
            raise StructuralError(f"dot product of lengths {len(self)} and {len(other)}")
        total = Polynomial.zero(self._n)
        for a, b in zip(self._entries, other):
            total = total + a * b
        return total

    def scale(self, factor) -> "PolyVector":
        return PolyVector([factor * p for p in self._entries], self._n)

    def __call__(self, x):
        """Evaluate every entry; returns shape ``(len,)`` or ``(m, len)``."""
        pts = np.asarray(x, dtype=float)
        if not self._entries:
            return np.zeros((0,)) if pts.ndim == 1 else np.zeros((np.atleast_2d(pts).shape[0], 0))
        cols = [np.atleast_1d(p(pts)) for p in self._entries]
        stacked = np.stack(cols, axis=-1)
        return stacked[0] if pts.ndim == 1 else stacked

    def __repr__(self):
        return f"PolyVector([{', '.join(p.to_string() for p in self._entries)}])"


# -- module-level operations -----------------------------------------------


def poly_mul(a: Polynomial, b: Polynomial) -> Polynomial:
    if a.n != b.n:
        raise StructuralError(f"dimension mismatch: {a.n} vs {b.n}")
    return a * b


def partial_derivative(p: Polynomial, i: int) -> Polynomial:
    return p.derivative(i)


def gradient(p: Polynomial) -> PolyVector:
    return p.gradient()


def divergence(field: PolyVector) -> Polynomial:
    if len(field) != field.n:
        raise StructuralError(f"field of length {len(field)} in dimension {field.n}")
    total = Polynomial.zero(field.n)
    for i, entry in enumerate(field):
        total = total + entry.derivative(i)
    return total


def scale_field(rho: Polynomial, field: PolyVector) -> PolyVector:
    return field.scale(rho)


def r_entries(rho, psi, phi: Sequence[Polynomial], gamma: Sequence[Polynomial], n: int) -> list:
    """Entries of r(x) in vec(F^T), vec(G^T), w order.

    Works for anything supporting ``*`` by a Polynomial, ``.derivative`` and
    negation, so the SOS layer reuses it for unknown rho/psi.
    """
    if not len(phi) or not len(gamma):
        raise StructuralError("dictionaries phi and gamma must be nonempty")
    entries = []
    rho_phi = [rho * p for p in phi]
    psi_gamma = [psi * g for g in gamma]
    for i in range(n):
        entries.extend(-(term.derivative(i)) for term in rho_phi)
    for i in range(n):
        entries.extend(-(term.derivative(i)) for term in psi_gamma)
    entries.extend(-(rho.derivative(i)) for i in range(n))
    return entries


def build_r(rho: Polynomial, psi: Polynomial, phi: PolyVector, gamma: PolyVector, n: int) -> PolyVector:
    for p in (rho, psi):
        if p.n != n:
            raise StructuralError(f"polynomial of dimension {p.n}, expected {n}")
    if phi.n != n or gamma.n != n:
        raise StructuralError("dictionary dimension does not match n")
    return PolyVector(r_entries(rho, psi, phi, gamma, n), n)


def basis_size(n: int, d: int) -> int:
    return math.comb(n + d, d)


def monomial_basis(n: int, d_min: int, d_max: int) -> list[Monomial]:
    """All monomials with d_min <= total degree <= d_max, graded lex order."""
    if d_min < 0 or d_max < d_min:
        raise StructuralError(f"bad degree range {d_min}..{d_max}")
    basis = []
    for d in range(d_min, d_max + 1):
        for combo in itertools.combinations_with_replacement(range(n), d):
            mono = [0] * n
            for var in combo:
                mono[var] += 1
            basis.append(tuple(mono))
    return basis


def monomials_as_vector(basis: Sequence[Monomial]) -> PolyVector:
    n = len(basis[0]) if basis else 0
    return PolyVector([Polynomial.monomial(m) for m in basis], n)


def parse_polynomial(text: str, variables: Sequence[str]) -> Polynomial:
    from densafe.services.poly_parser import PolynomialParser

    return PolynomialParser(variables).parse(text)
