"""Data generation, closed-loop integration under bounded process noise, and safety audits."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from densafe.services.consistency import Dataset
from densafe.services.model import GroundTruthSystem, SemialgebraicSet, sample_set, set_contains
from densafe.services.poly import Polynomial
from densafe.services.synth import RationalController

HORIZON = "horizon"
BLOWUP = "blowup"
LEFT_BOX = "left-bounding-box"
NON_FINITE = "non-finite"


@dataclass(frozen=True)
class SimConfig:
    horizon: float = 10.0
    dt: float = 1e-3
    noise_hold: float = 0.05
    epsilon_w: float = 0.0
    trajectories: int = 30
    seed: int = 0
    blowup_threshold: float = 1e4
    box: tuple | None = None

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.noise_hold < self.dt:
            raise ValueError("noise_hold must be at least dt")
        if self.trajectories < 1:
            raise ValueError("at least one trajectory is required")
        if self.epsilon_w < 0:
            raise ValueError("epsilon_w must be non-negative")

    @property
    def steps(self) -> int:
        return int(round(self.horizon / self.dt))

    @property
    def hold_steps(self) -> int:
        return max(1, int(round(self.noise_hold / self.dt)))

    def box_array(self, n: int) -> np.ndarray:
        if self.box is None:
            return np.tile([-6.0, 6.0], (n, 1))
        return np.asarray(self.box, dtype=float).reshape(n, 2)


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    rho: np.ndarray
    disturbances: np.ndarray
    reason: str

    @property
    def end_state(self) -> np.ndarray:
        return self.states[-1]


# --- data ---

def generate_dataset(
    sys: GroundTruthSystem,
    T: int,
    epsilon: float,
    box,
    seed: int,
    input_bound: float = 1.0,
    input_policy: Callable | None = None,
) -> Dataset:
    """Uniform states in box, inputs from the policy, derivatives with L-inf noise <= epsilon."""
    if T < 1:
        raise ValueError("T must be at least 1")
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    rng = np.random.default_rng(seed)
    box = np.asarray(box, dtype=float).reshape(sys.n, 2)
    states = rng.uniform(box[:, 0], box[:, 1], size=(T, sys.n))
    if input_policy is None:
        inputs = rng.uniform(-input_bound, input_bound, size=T)
    else:
        inputs = np.asarray(input_policy(states, rng), dtype=float).reshape(T)
    noise = rng.uniform(-epsilon, epsilon, size=(T, sys.n))
    outputs = sys.rates(states, inputs) + noise
    data = Dataset(states, inputs, outputs, epsilon)
    residual = data.max_residual(sys)
    if residual > epsilon:
        raise AssertionError(f"dataset residual {residual} exceeds epsilon {epsilon}")
    logging.info(f"Generated {T} samples from {sys.name} with epsilon={epsilon}")
    return data


def sample_initial_conditions(X0: SemialgebraicSet, M: int, seed: int, box=None) -> np.ndarray:
    return sample_set(X0, M, X0.box if box is None else box, np.random.default_rng(seed))


# --- integration ---

def _rk4_step(sys: GroundTruthSystem, X, u, W, dt):
    def rates(Z):
        return sys.rates(Z, u) + W

    k1 = rates(X)
    k2 = rates(X + 0.5 * dt * k1)
    k3 = rates(X + 0.5 * dt * k2)
    k4 = rates(X + dt * k3)
    return X + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def simulate_batch(
    sys: GroundTruthSystem,
    controller: RationalController | None,
    x0s,
    cfg: SimConfig,
    rho: Polynomial | None = None,
) -> list[Trajectory]:
    """Fixed-step RK4 over many starts at once.

    Each trajectory draws its held disturbance from its own stream spawned
    from cfg.seed. The controller is sampled at the start of each step and the
    same w is used in all four stages.
    """
    X = np.atleast_2d(np.asarray(x0s, dtype=float)).copy()
    M, n = X.shape
    if n != sys.n:
        raise ValueError(f"initial states have dimension {n}, system has {sys.n}")
    steps, hold = cfg.steps, cfg.hold_steps
    box = cfg.box_array(n)
    if rho is None and controller is not None:
        rho = controller.rho
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(M)]

    states = np.full((steps + 1, M, n), np.nan)
    controls = np.full((steps + 1, M), np.nan)
    rhos = np.full((steps + 1, M), np.nan)
    dists = np.zeros((steps + 1, M, n))
    W = np.zeros((M, n))
    alive = np.ones(M, dtype=bool)
    last = np.full(M, steps)
    reasons = [HORIZON] * M

    for k in range(steps + 1):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        if k % hold == 0:
            for m in idx:
                W[m] = streams[m].uniform(-cfg.epsilon_w, cfg.epsilon_w, size=n)

        Xa = X[idx]
        if controller is None:
            u = np.zeros(idx.size)
            blow = np.zeros(idx.size, dtype=bool)
        else:
            u, blow, _ = controller.evaluate_batch(Xa)
        states[k, idx] = Xa
        controls[k, idx] = u
        dists[k, idx] = W[idx]
        if rho is not None:
            rhos[k, idx] = rho(Xa)

        finite = np.all(np.isfinite(Xa), axis=1)
        inside = np.all((Xa >= box[:, 0]) & (Xa <= box[:, 1]), axis=1)
        stop = ~finite | ~inside | blow
        for j in np.flatnonzero(stop):
            m = idx[j]
            reasons[m] = NON_FINITE if not finite[j] else (LEFT_BOX if not inside[j] else BLOWUP)
            last[m] = k
            alive[m] = False
        if k == steps:
            break

        go = ~stop
        if go.any():
            ids = idx[go]
            u_go = np.where(np.isnan(u[go]), 0.0, u[go])
            with np.errstate(over="ignore", invalid="ignore"):
                X[ids] = _rk4_step(sys, X[ids], u_go, W[ids], cfg.dt)

    times = np.arange(steps + 1) * cfg.dt
    out = []
    for m in range(M):
        end = last[m] + 1
        out.append(Trajectory(times[:end], states[:end, m], controls[:end, m], rhos[:end, m], dists[:end, m], reasons[m]))
    blowups = sum(r == BLOWUP for r in reasons)
    if blowups:
        logging.warning(f"{blowups} of {M} trajectories stopped on controller blowup")
    return out


def simulate(sys, controller, x0, cfg: SimConfig, rho: Polynomial | None = None) -> Trajectory:
    return simulate_batch(sys, controller, np.asarray(x0, dtype=float)[None, :], cfg, rho)[0]


# --- audits ---

@dataclass
class TrajectoryAudit:
    traj_id: int
    reason: str
    started_in_initial_set: bool
    entered_unsafe: bool
    first_violation_time: float | None
    min_rho: float | None
    min_boundary_increment: float | None


@dataclass
class SafetyAudit:
    trajectories: list = field(default_factory=list)

    @property
    def unsafe_count(self) -> int:
        return sum(t.entered_unsafe for t in self.trajectories)

    @property
    def blowup_count(self) -> int:
        return sum(t.reason == BLOWUP for t in self.trajectories)

    @property
    def left_box_count(self) -> int:
        return sum(t.reason == LEFT_BOX for t in self.trajectories)

    @property
    def min_rho(self) -> float | None:
        values = [t.min_rho for t in self.trajectories if t.min_rho is not None]
        return min(values) if values else None

    def histogram(self, bins: int = 10) -> dict:
        values = [t.min_rho for t in self.trajectories if t.min_rho is not None]
        if not values:
            return {"counts": [], "edges": []}
        counts, edges = np.histogram(values, bins=bins)
        return {"counts": counts.tolist(), "edges": edges.tolist()}

    def to_dict(self) -> dict:
        return {
            "trajectories": len(self.trajectories),
            "unsafe_count": self.unsafe_count,
            "blowup_count": self.blowup_count,
            "blowup_fraction": self.blowup_count / len(self.trajectories) if self.trajectories else 0.0,
            "left_box_count": self.left_box_count,
            "min_rho": self.min_rho,
            "min_rho_histogram": self.histogram(),
            "per_trajectory": [vars(t) for t in self.trajectories],
        }


def safety_audit(
    trajectories: Sequence[Trajectory],
    X0: SemialgebraicSet,
    Xu: SemialgebraicSet,
    rho: Polynomial | None = None,
    boundary_band: float = 1e-3,
) -> SafetyAudit:
    audit = SafetyAudit()
    for i, traj in enumerate(trajectories):
        pts = traj.states[np.all(np.isfinite(traj.states), axis=1)]
        times = traj.times[: len(traj.states)][np.all(np.isfinite(traj.states), axis=1)]
        unsafe = set_contains(Xu, pts) if len(pts) else np.zeros(0, dtype=bool)
        hit = np.flatnonzero(unsafe)
        min_rho = increment = None
        if rho is not None and len(pts):
            values = rho(pts)
            min_rho = float(np.min(values))
            near = np.abs(values[:-1]) <= boundary_band
            if near.any():
                increment = float(np.min(np.diff(values)[near]))
        audit.trajectories.append(TrajectoryAudit(
            traj_id=i,
            reason=traj.reason,
            started_in_initial_set=bool(set_contains(X0, traj.states[0])) if len(traj.states) else False,
            entered_unsafe=bool(hit.size),
            first_violation_time=float(times[hit[0]]) if hit.size else None,
            min_rho=min_rho,
            min_boundary_increment=increment,
        ))
    return audit


def rho_level_grid(rho: Polynomial, box, resolution: int) -> np.ndarray:
    """Rows (x1, ..., xn, rho) over a regular grid, for contour plotting of rho = 0."""
    box = np.asarray(box, dtype=float).reshape(rho.n, 2)
    axes = [np.linspace(lo, hi, resolution) for lo, hi in box]
    pts = np.stack([m.ravel() for m in np.meshgrid(*axes, indexing="ij")], axis=1)
    return np.column_stack([pts, rho(pts)])
