"""Data-consistency polytope in (f, g, w) coordinates and the LP oracles over it."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np
from scipy.optimize import linprog

from densafe.services.model import Dictionary, DisturbanceSet, GroundTruthSystem
from densafe.services.poly import Polynomial, PolyVector, StructuralError, build_r

MEMBERSHIP_TOL = 1e-9
TOL_RED = 1e-7

# linprog status codes
LP_OPTIMAL = 0
LP_INFEASIBLE = 2
LP_UNBOUNDED = 3


class InconsistentDataError(ValueError):
    """The polytope is empty: data and priors cannot both hold."""


class LPFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class Dataset:
    states: np.ndarray
    inputs: np.ndarray
    outputs: np.ndarray
    epsilon: float

    def __post_init__(self):
        states = np.atleast_2d(np.asarray(self.states, dtype=float))
        inputs = np.asarray(self.inputs, dtype=float).reshape(-1)
        outputs = np.atleast_2d(np.asarray(self.outputs, dtype=float))
        if states.shape != outputs.shape:
            raise StructuralError(f"states {states.shape} and derivatives {outputs.shape} disagree")
        if inputs.shape[0] != states.shape[0]:
            raise StructuralError(f"{inputs.shape[0]} inputs for {states.shape[0]} samples")
        if self.epsilon < 0:
            raise StructuralError("epsilon must be non-negative")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "outputs", outputs)

    @property
    def T(self) -> int:
        return self.states.shape[0]

    @property
    def n(self) -> int:
        return self.states.shape[1]

    def samples(self):
        return zip(self.states, self.inputs, self.outputs)

    def max_residual(self, system: GroundTruthSystem) -> float:
        predicted = system.rates(self.states, self.inputs)
        return float(np.max(np.abs(self.outputs - predicted))) if self.T else 0.0


def assemble_data_blocks(data: Dataset, dictionary: Dictionary):
    """A, B, xi with A vec(F^T) + B vec(G^T) = stacked F phi(x_s) + G gamma(x_s) u_s."""
    if data.T == 0:
        raise StructuralError("dataset is empty")
    if data.n != dictionary.n:
        raise StructuralError(f"dataset has dimension {data.n}, dictionary {dictionary.n}")
    n = data.n
    eye = np.eye(n)
    phi = dictionary.phi(data.states)
    gamma = dictionary.gamma(data.states)
    A = np.vstack([np.kron(eye, phi[s][None, :]) for s in range(data.T)])
    B = np.vstack([np.kron(eye, data.inputs[s] * gamma[s][None, :]) for s in range(data.T)])
    xi = data.outputs.reshape(-1)
    return A, B, xi


class FaceKind(str, Enum):
    DATA_UPPER = "data_upper"
    DATA_LOWER = "data_lower"
    DISTURBANCE = "disturbance"


@dataclass(frozen=True)
class FaceTag:
    kind: FaceKind
    index: int
    component: int

    def label(self) -> str:
        if self.kind is FaceKind.DISTURBANCE:
            return f"w[{self.index}]"
        sign = "+" if self.kind is FaceKind.DATA_UPPER else "-"
        return f"{sign}s{self.index}[{self.component}]"


@dataclass(frozen=True)
class BlockLayout:
    f: range
    g: range
    w: range

    @property
    def columns(self) -> int:
        return self.w.stop


@dataclass(frozen=True)
class ConsistencyPolytope:
    N: np.ndarray
    e: np.ndarray
    layout: BlockLayout
    tags: tuple[FaceTag, ...]

    @property
    def rows(self) -> int:
        return self.N.shape[0]

    @property
    def columns(self) -> int:
        return self.N.shape[1]

    def subset(self, rows: Sequence[int]) -> "ConsistencyPolytope":
        rows = np.asarray(rows, dtype=int)
        return ConsistencyPolytope(
            self.N[rows], self.e[rows], self.layout, tuple(self.tags[i] for i in rows)
        )


def assemble_P1(data: Dataset, dictionary: Dictionary, W: DisturbanceSet) -> ConsistencyPolytope:
    A, B, xi = assemble_data_blocks(data, dictionary)
    n, T = data.n, data.T
    if W.n != n:
        raise StructuralError(f"disturbance set has dimension {W.n}, state {n}")
    nf, ng = A.shape[1], B.shape[1]
    k = W.W.shape[0]

    top = np.hstack([A, B, np.zeros((n * T, n))])
    bottom = np.hstack([np.zeros((k, nf + ng)), W.W])
    N = np.vstack([top, -top, bottom])
    eps = np.full(n * T, float(data.epsilon))
    e = np.concatenate([eps + xi, eps - xi, W.d_w])

    tags = (
        [FaceTag(FaceKind.DATA_UPPER, s, i) for s in range(T) for i in range(n)]
        + [FaceTag(FaceKind.DATA_LOWER, s, i) for s in range(T) for i in range(n)]
        + [FaceTag(FaceKind.DISTURBANCE, j, j) for j in range(k)]
    )
    layout = BlockLayout(range(0, nf), range(nf, nf + ng), range(nf + ng, nf + ng + n))
    logging.info(f"Consistency polytope: {N.shape[1]} columns, {N.shape[0]} faces")
    return ConsistencyPolytope(N, e, layout, tuple(tags))


def membership(P1: ConsistencyPolytope, theta, tol: float = MEMBERSHIP_TOL):
    """(inside, worst violation max_i(N_i theta - e_i))."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (P1.columns,):
        raise StructuralError(f"theta has shape {theta.shape}, expected ({P1.columns},)")
    violation = float(np.max(P1.N @ theta - P1.e)) if P1.rows else -np.inf
    return violation <= tol, violation


def _maximize(c, N, e):
    return linprog(-np.asarray(c, dtype=float), A_ub=N, b_ub=e, bounds=[(None, None)] * N.shape[1], method="highs")


def feasible_point(P1: ConsistencyPolytope) -> np.ndarray:
    res = linprog(np.zeros(P1.columns), A_ub=P1.N, b_ub=P1.e, bounds=[(None, None)] * P1.columns, method="highs")
    if res.status == LP_INFEASIBLE:
        raise InconsistentDataError("data and priors are inconsistent: the consistency polytope is empty")
    if res.status != LP_OPTIMAL:
        raise LPFailure(f"feasibility LP failed: {res.message}")
    return res.x


def _interior_slacks(P1: ConsistencyPolytope) -> np.ndarray:
    """Row slacks at the Chebyshev center (or any feasible point if there is none)."""
    norms = np.linalg.norm(P1.N, axis=1)
    c = np.zeros(P1.columns + 1)
    c[-1] = -1.0
    A = np.hstack([P1.N, norms[:, None]])
    bounds = [(None, None)] * P1.columns + [(0.0, None)]
    res = linprog(c, A_ub=A, b_ub=P1.e, bounds=bounds, method="highs")
    center = res.x[:-1] if res.status == LP_OPTIMAL else feasible_point(P1)
    return P1.e - P1.N @ center


def reduce_faces(P1: ConsistencyPolytope, tol_red: float = TOL_RED):
    """Drop rows implied by the remaining ones. Returns (reduced polytope, kept row indices)."""
    feasible_point(P1)
    slacks = _interior_slacks(P1)
    order = sorted(range(P1.rows), key=lambda i: (-slacks[i], i))

    keep = np.ones(P1.rows, dtype=bool)
    uncertified = 0
    for i in order:
        keep[i] = False
        res = _maximize(P1.N[i], P1.N[keep], P1.e[keep])
        if res.status == LP_OPTIMAL and -res.fun <= P1.e[i] + tol_red:
            continue
        if res.status not in (LP_OPTIMAL, LP_UNBOUNDED):
            uncertified += 1
        keep[i] = True

    if uncertified:
        logging.warning(f"{uncertified} redundancy LPs did not finish; those faces were kept")
    kept = np.flatnonzero(keep)
    logging.info(f"Face reduction: {len(kept)} of {P1.rows} faces are nonredundant")
    return P1.subset(kept), kept


def compactness_check(P1: ConsistencyPolytope) -> bool:
    feasible_point(P1)
    for j in range(P1.columns):
        for sign in (1.0, -1.0):
            c = np.zeros(P1.columns)
            c[j] = sign
            res = _maximize(c, P1.N, P1.e)
            if res.status == LP_UNBOUNDED:
                return False
            if res.status != LP_OPTIMAL:
                raise LPFailure(f"boundedness LP along {'+' if sign > 0 else '-'}theta[{j}]: {res.message}")
    return True


@dataclass(frozen=True)
class OracleResult:
    lp_max: float
    margin: float
    theta: np.ndarray | None


def _oracle_lp(P1: ConsistencyPolytope, r_value: np.ndarray, rho_h: float, x) -> OracleResult:
    res = _maximize(r_value, P1.N, P1.e)
    if res.status == LP_UNBOUNDED:
        return OracleResult(np.inf, -np.inf, None)
    if res.status != LP_OPTIMAL:
        raise LPFailure(f"containment LP at x={np.asarray(x).tolist()}: {res.message}")
    lp_max = float(-res.fun)
    return OracleResult(lp_max, -rho_h - lp_max, res.x)


def containment_lp_oracle(
    P1: ConsistencyPolytope,
    rho: Polynomial,
    psi: Polynomial,
    dictionary: Dictionary,
    x,
    h: Polynomial,
) -> OracleResult:
    """lp_max = max r(x).theta over P1, margin = -rho(x) h(x) - lp_max.

    A positive margin certifies that every (f, g, w) consistent with the data
    satisfies the robust divergence inequality at x.
    """
    x = np.asarray(x, dtype=float)
    r = build_r(rho, psi, dictionary.phi, dictionary.gamma, dictionary.n)
    return _oracle_lp(P1, r(x), rho(x) * h(x), x)


def containment_sweep(
    P1: ConsistencyPolytope,
    rho: Polynomial,
    psi: Polynomial,
    dictionary: Dictionary,
    h: Polynomial,
    points,
    workers: int = 4,
):
    """Oracle over many points on a thread pool. Returns (lp_max, margins) arrays."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    r = build_r(rho, psi, dictionary.phi, dictionary.gamma, dictionary.n)
    R = r(pts)
    rho_h = rho(pts) * h(pts)

    def run(k):
        return _oracle_lp(P1, R[k], rho_h[k], pts[k])

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(pool.map(run, range(len(pts))))
    lp_max = np.array([res.lp_max for res in results])
    margins = np.array([res.margin for res in results])
    return lp_max, margins


@dataclass(frozen=True)
class FarkasResult:
    feasible: bool
    y: np.ndarray | None
    value: float


def farkas_multipliers(P1: ConsistencyPolytope, r, bound: float) -> FarkasResult:
    """Search y >= 0 with N^T y = r minimizing y^T e; feasible iff the optimum is below bound."""
    r = np.asarray(r, dtype=float)
    res = linprog(P1.e, A_eq=P1.N.T, b_eq=r, bounds=[(0.0, None)] * P1.rows, method="highs")
    if res.status == LP_INFEASIBLE:
        return FarkasResult(False, None, np.inf)
    if res.status == LP_UNBOUNDED:
        return FarkasResult(True, None, -np.inf)
    if res.status != LP_OPTIMAL:
        raise LPFailure(f"multiplier LP: {res.message}")
    value = float(res.fun)
    return FarkasResult(value < bound, res.x, value)


def r_at(rho: Polynomial, psi: Polynomial, dictionary: Dictionary, x) -> np.ndarray:
    r: PolyVector = build_r(rho, psi, dictionary.phi, dictionary.gamma, dictionary.n)
    return r(np.asarray(x, dtype=float))
