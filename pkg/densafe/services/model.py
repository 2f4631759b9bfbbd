"""Problem description objects: dictionaries, sets, disturbances, benchmark systems."""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np
from scipy.optimize import linprog, minimize

from densafe.services.poly import (
    Polynomial,
    PolyVector,
    StructuralError,
    default_variables,
    monomial_basis,
    monomials_as_vector,
    parse_polynomial,
)

DEFAULT_BOX_HALF_WIDTH = 6.0
MIN_ACCEPTANCE = 1e-4
MIN_DRAWS_BEFORE_GIVING_UP = 100_000


class UnsupportedSetError(ValueError):
    """Raised for set descriptions the synthesis cannot reduce to a single h."""


class SamplingError(RuntimeError):
    pass


# --- Dictionaries ---

@dataclass(frozen=True)
class Dictionary:
    phi: PolyVector
    gamma: PolyVector

    def __post_init__(self):
        if not len(self.phi) or not len(self.gamma):
            raise StructuralError("dictionaries phi and gamma must be nonempty")
        if self.phi.n != self.gamma.n:
            raise StructuralError(f"phi has dimension {self.phi.n}, gamma has {self.gamma.n}")
        for label, vec in (("phi", self.phi), ("gamma", self.gamma)):
            if len(set(vec)) != len(vec):
                raise StructuralError(f"duplicate entries in dictionary {label}")

    @property
    def n(self) -> int:
        return self.phi.n

    @property
    def d_f(self) -> int:
        return len(self.phi)

    @property
    def d_g(self) -> int:
        return len(self.gamma)

    @property
    def columns(self) -> int:
        """Length of the stacked (vec(F^T), vec(G^T), w) parameter vector."""
        return self.n * (self.d_f + self.d_g + 1)

    @property
    def phi_degree(self) -> int:
        return self.phi.degree

    @property
    def gamma_degree(self) -> int:
        return self.gamma.degree


def default_dictionary(
    n: int,
    f_degree: int,
    zero_at_origin: bool = True,
    g_constant: bool = True,
    g_degree: int = 0,
) -> Dictionary:
    if f_degree < 1:
        raise StructuralError("the drift prior needs degree >= 1")
    phi = monomials_as_vector(monomial_basis(n, 1 if zero_at_origin else 0, f_degree))
    if g_constant:
        gamma = PolyVector([Polynomial.constant(1.0, n)], n)
    else:
        gamma = monomials_as_vector(monomial_basis(n, 0, g_degree))
    return Dictionary(phi, gamma)


# --- Semialgebraic sets ---

class SetMode(str, Enum):
    INTERSECTION = "intersection"
    UNION_PRODUCT = "union_product"


def _default_box(n: int) -> np.ndarray:
    return np.tile([-DEFAULT_BOX_HALF_WIDTH, DEFAULT_BOX_HALF_WIDTH], (n, 1))


def _grid(box: np.ndarray, per_axis: int) -> np.ndarray:
    axes = [np.linspace(lo, hi, per_axis) for lo, hi in box]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def find_common_point(h1: Polynomial, h2: Polynomial, box: np.ndarray, budget: int = 200_000):
    """Search the box for x with h1(x) >= 0 and h2(x) >= 0; None if nothing turned up.

    Dense grid first, then Nelder-Mead on -min(h1, h2) from the five best grid points.
    """
    n = h1.n
    per_axis = int(min(201, max(5, round(budget ** (1.0 / n)))))
    pts = _grid(box, per_axis)
    score = np.minimum(h1(pts), h2(pts))
    best = int(np.argmax(score))
    if score[best] >= 0.0:
        return pts[best]

    lo, hi = box[:, 0], box[:, 1]
    starts = pts[np.argsort(score)[-5:]]
    for x0 in starts:
        res = minimize(
            lambda x: -min(h1(np.clip(x, lo, hi)), h2(np.clip(x, lo, hi))),
            x0,
            method="Nelder-Mead",
            options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 2000},
        )
        x = np.clip(res.x, lo, hi)
        if min(h1(x), h2(x)) >= 0.0:
            return x
    return None


class SemialgebraicSet:
    """{x : h_i(x) >= 0 for all i} or, in union mode, the union of {h_i(x) >= 0}."""

    def __init__(
        self,
        polys: Sequence[Polynomial],
        mode: SetMode = SetMode.INTERSECTION,
        n: int | None = None,
        box=None,
    ):
        self.polys = tuple(polys)
        self.mode = SetMode(mode)
        if n is None:
            if not self.polys:
                raise StructuralError("an empty set description needs an explicit dimension")
            n = self.polys[0].n
        for p in self.polys:
            if p.n != n:
                raise StructuralError(f"set component of dimension {p.n}, expected {n}")
        self.n = n
        self.box = _default_box(n) if box is None else np.asarray(box, dtype=float).reshape(n, 2)
        self._reduced = None

        if self.mode is SetMode.UNION_PRODUCT and len(self.polys) == 2:
            witness = find_common_point(self.polys[0], self.polys[1], self.box)
            if witness is not None:
                raise UnsupportedSetError(
                    f"union components overlap at {np.round(witness, 6).tolist()}; "
                    "the product encoding is only exact for disjoint components"
                )

    @classmethod
    def from_strings(cls, texts: Sequence[str], variables: Sequence[str], mode=SetMode.INTERSECTION, box=None):
        polys = [parse_polynomial(t, variables) for t in texts]
        return cls(polys, mode, n=len(variables), box=box)

    @property
    def reduced(self) -> Polynomial:
        if self._reduced is None:
            self._reduced = reduced_h(self)
        return self._reduced

    def contains(self, x):
        return set_contains(self, x)

    def __repr__(self):
        return f"SemialgebraicSet({[p.to_string() for p in self.polys]}, mode={self.mode.value})"


def set_contains(S: SemialgebraicSet, x):
    """Membership against the component list. Accepts one point or an (m, n) batch."""
    pts = np.asarray(x, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if pts.shape[1] != S.n:
        raise StructuralError(f"points have dimension {pts.shape[1]}, expected {S.n}")
    if not S.polys:
        inside = np.full(pts.shape[0], S.mode is SetMode.INTERSECTION)
    else:
        values = np.stack([p(pts) for p in S.polys], axis=1)
        if S.mode is SetMode.INTERSECTION:
            inside = np.all(values >= 0.0, axis=1)
        else:
            inside = np.any(values >= 0.0, axis=1)
    return bool(inside[0]) if single else inside


def reduced_h(S: SemialgebraicSet) -> Polynomial:
    if S.mode is SetMode.INTERSECTION:
        if len(S.polys) != 1:
            raise UnsupportedSetError(
                f"intersection of {len(S.polys)} components: only a single polynomial "
                "is supported (the general min over components is not lifted)"
            )
        return S.polys[0]
    if len(S.polys) != 2:
        raise UnsupportedSetError(
            f"union of {len(S.polys)} components: the product encoding supports exactly two"
        )
    return -(S.polys[0] * S.polys[1])


def sample_set(S: SemialgebraicSet, count: int, box, rng: np.random.Generator) -> np.ndarray:
    """Rejection sampler, uniform over box, deterministic for a given generator state."""
    box = np.asarray(box, dtype=float).reshape(S.n, 2)
    if count <= 0:
        return np.zeros((0, S.n))
    accepted = []
    n_accepted = 0
    draws = 0
    batch = max(1000, 10 * count)
    while n_accepted < count:
        pts = rng.uniform(box[:, 0], box[:, 1], size=(batch, S.n))
        draws += batch
        hits = pts[set_contains(S, pts)]
        accepted.append(hits)
        n_accepted += len(hits)
        if draws >= MIN_DRAWS_BEFORE_GIVING_UP and n_accepted / draws < MIN_ACCEPTANCE:
            raise SamplingError(
                f"acceptance rate {n_accepted / draws:.2e} after {draws} draws; "
                "set is too thin for rejection sampling"
            )
    return np.concatenate(accepted)[:count]


# --- Disturbances ---

@dataclass(frozen=True)
class DisturbanceSet:
    W: np.ndarray
    d_w: np.ndarray
    radius: float | None = None

    def __post_init__(self):
        W = np.atleast_2d(np.asarray(self.W, dtype=float))
        d_w = np.asarray(self.d_w, dtype=float).reshape(-1)
        if W.shape[0] != d_w.shape[0]:
            raise StructuralError(f"W has {W.shape[0]} rows but d_w has {d_w.shape[0]} entries")
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "d_w", d_w)
        self._check_bounded()

    @classmethod
    def linf_box(cls, n: int, epsilon_w: float) -> "DisturbanceSet":
        if epsilon_w < 0:
            raise StructuralError("epsilon_w must be non-negative")
        W = np.vstack([np.eye(n), -np.eye(n)])
        return cls(W, np.full(2 * n, float(epsilon_w)), radius=float(epsilon_w))

    @property
    def n(self) -> int:
        return self.W.shape[1]

    def _check_bounded(self):
        for i in range(self.n):
            for sign in (1.0, -1.0):
                c = np.zeros(self.n)
                c[i] = -sign
                res = linprog(c, A_ub=self.W, b_ub=self.d_w, bounds=[(None, None)] * self.n, method="highs")
                if res.status == 2:
                    raise UnsupportedSetError("disturbance polytope is empty")
                if res.status == 3:
                    raise UnsupportedSetError(f"disturbance polytope is unbounded along {'+' if sign > 0 else '-'}w{i + 1}")

    def contains(self, w, tol: float = 1e-12) -> bool:
        return bool(np.all(self.W @ np.asarray(w, dtype=float) <= self.d_w + tol))


# --- Ground truth ---

def project_on_dictionary(p: Polynomial, entries: PolyVector, label: str) -> np.ndarray:
    """Coefficients c with p == sum_j c_j * entries[j]; entries must be monomials."""
    index = {}
    for j, entry in enumerate(entries):
        if len(entry) != 1:
            raise StructuralError(f"dictionary {label} entry {entry} is not a single monomial")
        (mono, coeff), = entry.terms.items()
        index[mono] = (j, coeff)
    coeffs = np.zeros(len(entries))
    for mono, c in p.terms.items():
        if mono not in index:
            raise StructuralError(f"term {Polynomial.monomial(mono, c)} of {p} lies outside dictionary {label}")
        j, scale = index[mono]
        coeffs[j] = c / scale
    return coeffs


@dataclass(frozen=True)
class GroundTruthSystem:
    F: np.ndarray
    G: np.ndarray
    dictionary: Dictionary
    name: str = "system"
    variables: tuple[str, ...] = field(default=())

    def __post_init__(self):
        F = np.atleast_2d(np.asarray(self.F, dtype=float))
        G = np.atleast_2d(np.asarray(self.G, dtype=float))
        n = self.dictionary.n
        if F.shape != (n, self.dictionary.d_f):
            raise StructuralError(f"F has shape {F.shape}, expected {(n, self.dictionary.d_f)}")
        if G.shape != (n, self.dictionary.d_g):
            raise StructuralError(f"G has shape {G.shape}, expected {(n, self.dictionary.d_g)}")
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "G", G)
        if not self.variables:
            object.__setattr__(self, "variables", tuple(default_variables(n)))

    @classmethod
    def from_expressions(
        cls,
        name: str,
        f_texts: Sequence[str],
        g_texts: Sequence[str],
        dictionary: Dictionary,
        variables: Sequence[str] | None = None,
    ) -> "GroundTruthSystem":
        n = dictionary.n
        variables = list(variables) if variables is not None else default_variables(n)
        if len(f_texts) != n or len(g_texts) != n:
            raise StructuralError(f"need {n} drift and {n} input expressions")
        F = np.array([project_on_dictionary(parse_polynomial(t, variables), dictionary.phi, "phi") for t in f_texts])
        G = np.array([project_on_dictionary(parse_polynomial(t, variables), dictionary.gamma, "gamma") for t in g_texts])
        return cls(F, G, dictionary, name, tuple(variables))

    @property
    def n(self) -> int:
        return self.dictionary.n

    @property
    def theta(self) -> np.ndarray:
        """(vec(F^T), vec(G^T)), the parameter coordinates of the consistency polytope."""
        return np.concatenate([self.F.reshape(-1), self.G.reshape(-1)])

    def drift(self) -> PolyVector:
        phi = self.dictionary.phi
        return PolyVector([_combine(row, phi) for row in self.F], self.n)

    def input_gain(self) -> PolyVector:
        gamma = self.dictionary.gamma
        return PolyVector([_combine(row, gamma) for row in self.G], self.n)

    def rates(self, x, u):
        return eval_system(self, x, u)


def _combine(coeffs, entries: PolyVector) -> Polynomial:
    total = Polynomial.zero(entries.n)
    for c, p in zip(coeffs, entries):
        if c != 0.0:
            total = total + float(c) * p
    return total


def eval_system(sys: GroundTruthSystem, x, u):
    """F phi(x) + G gamma(x) u for one point or an (m, n) batch with (m,) inputs."""
    pts = np.asarray(x, dtype=float)
    phi = sys.dictionary.phi(pts)
    gamma = sys.dictionary.gamma(pts)
    if pts.ndim == 1:
        return sys.F @ phi + (sys.G @ gamma) * float(u)
    u = np.broadcast_to(np.asarray(u, dtype=float), (pts.shape[0],))
    return phi @ sys.F.T + (gamma @ sys.G.T) * u[:, None]


FLOW_F = ["x2", "-x1 + 1/3*x1^3 - x2"]
FLOW_G = ["0", "1"]
TWIST_F = [
    "-2.5*x1 + x2 - 0.5*x3 + 2*x1^3 + 2*x3^3",
    "-x1 + 1.5*x2 + 0.5*x3 - 2*x2^3 - 2*x3^3",
    "1.5*x1 + 2.5*x2 - 2*x3 - 2*x1^3 - 2*x2^3",
]
TWIST_G = ["0", "0", "1"]


def flow_system(dictionary: Dictionary | None = None) -> GroundTruthSystem:
    dictionary = dictionary or default_dictionary(2, 3, zero_at_origin=True, g_constant=True)
    return GroundTruthSystem.from_expressions("flow", FLOW_F, FLOW_G, dictionary)


def twist_system(dictionary: Dictionary | None = None) -> GroundTruthSystem:
    dictionary = dictionary or default_dictionary(3, 3, zero_at_origin=True, g_constant=True)
    return GroundTruthSystem.from_expressions("twist", TWIST_F, TWIST_G, dictionary)
