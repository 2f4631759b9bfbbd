"""Turns a ProblemConfig into the objects the services work on."""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass

import numpy as np

from densafe.config import ConfigError, ProblemConfig
from densafe.services.consistency import (
    ConsistencyPolytope,
    Dataset,
    assemble_P1,
    compactness_check,
    reduce_faces,
)
from densafe.services.model import (
    Dictionary,
    DisturbanceSet,
    GroundTruthSystem,
    SemialgebraicSet,
    SetMode,
    default_dictionary,
)
from densafe.services.sim import SimConfig, generate_dataset
from densafe.services.sosprog import Tolerances
from densafe.services.synth import AssemblyError, Degrees, SynthesisSpec, audit_points


@dataclass(frozen=True)
class Problem:
    cfg: ProblemConfig
    dictionary: Dictionary
    X0: SemialgebraicSet
    Xu: SemialgebraicSet
    W: DisturbanceSet

    @property
    def n(self) -> int:
        return self.cfg.state_dim


@dataclass(frozen=True)
class PolytopeSummary:
    columns: int
    faces: int
    nonredundant: int
    dim_f: int
    dim_g: int
    dim_w: int
    compact: bool

    def line(self) -> str:
        return f"columns={self.columns} faces={self.faces} nonredundant={self.nonredundant}"


def build_dictionary(cfg: ProblemConfig) -> Dictionary:
    return default_dictionary(
        cfg.state_dim,
        cfg.f_prior.degree,
        zero_at_origin=cfg.f_prior.zero_at_origin,
        g_constant=cfg.g_prior.constant,
        g_degree=cfg.g_prior.degree,
    )


def build_set(cfg: ProblemConfig, label: str) -> SemialgebraicSet:
    s = getattr(cfg, label)
    box = s.box if s.box is not None else cfg.bounding_box
    return SemialgebraicSet.from_strings(s.polys, cfg.variables, SetMode(s.mode), box=box)


def build_problem(cfg: ProblemConfig) -> Problem:
    return Problem(
        cfg=cfg,
        dictionary=build_dictionary(cfg),
        X0=build_set(cfg, "X0"),
        Xu=build_set(cfg, "Xu"),
        W=DisturbanceSet.linf_box(cfg.state_dim, cfg.epsilon_w),
    )


def build_system(problem: Problem) -> GroundTruthSystem:
    cfg = problem.cfg
    if not cfg.system.f:
        raise ConfigError("no ground-truth dynamics configured", "system")
    return GroundTruthSystem.from_expressions(cfg.name, cfg.system.f, cfg.system.g, problem.dictionary, cfg.variables)


def generate(problem: Problem, seed: int | None = None) -> Dataset:
    cfg = problem.cfg
    return generate_dataset(
        build_system(problem),
        cfg.samples,
        cfg.epsilon,
        cfg.sampling_box,
        cfg.seed if seed is None else seed,
        input_bound=cfg.input_bound,
    )


def check_dataset(problem: Problem, data: Dataset):
    if data.n != problem.n:
        raise ConfigError(f"dataset has state dimension {data.n}, config declares {problem.n}", "state_dim")


def build_polytope(problem: Problem, data: Dataset, tol_red: float):
    """Full P1, its reduction, kept face indices and the structural summary."""
    check_dataset(problem, data)
    P1 = assemble_P1(data, problem.dictionary, problem.W)
    compact = compactness_check(P1)
    if not compact:
        raise AssemblyError("the consistency polytope is unbounded; the data does not excite every coefficient")
    reduced, kept = reduce_faces(P1, tol_red)
    layout = P1.layout
    summary = PolytopeSummary(
        columns=P1.columns,
        faces=P1.rows,
        nonredundant=reduced.rows,
        dim_f=len(layout.f),
        dim_g=len(layout.g),
        dim_w=len(layout.w),
        compact=compact,
    )
    logging.info(f"Consistency polytope: {summary.line()}")
    return P1, reduced, tuple(int(i) for i in kept), summary


def synthesis_spec(problem: Problem, P1: ConsistencyPolytope, kept_rows=None, degrees=None) -> SynthesisSpec:
    cfg = problem.cfg
    d = degrees or cfg.degrees
    return SynthesisSpec(
        P1=P1,
        X0=problem.X0,
        Xu=problem.Xu,
        dictionary=problem.dictionary,
        degrees=Degrees(d.d_rho, d.d_psi, d.d1, d.d2),
        unsafe_inflation=cfg.synthesis.unsafe_inflation,
        localize_psi_bound=cfg.synthesis.localize_psi_bound,
        min_margin=cfg.synthesis.min_margin,
        kept_rows=tuple(kept_rows) if kept_rows is not None else None,
    )


def replay_spec(problem: Problem, data: Dataset, kept_rows, degrees, inflation: float, localize: bool) -> SynthesisSpec:
    """Rebuild the reduced polytope a certificate was solved against from the dataset alone."""
    check_dataset(problem, data)
    P1 = assemble_P1(data, problem.dictionary, problem.W)
    if kept_rows is not None:
        bad = [i for i in kept_rows if not 0 <= i < P1.rows]
        if bad:
            raise AssemblyError(f"certificate keeps faces {bad[:5]} but the polytope has {P1.rows} faces")
        P1 = P1.subset(list(kept_rows))
    spec = synthesis_spec(problem, P1, kept_rows, degrees)
    return dataclasses.replace(spec, unsafe_inflation=inflation, localize_psi_bound=localize)


def audit_box(cfg: ProblemConfig) -> np.ndarray:
    return np.asarray(cfg.audit.box if cfg.audit.box is not None else cfg.bounding_box, dtype=float)


def audit_inputs(cfg: ProblemConfig, spec: SynthesisSpec):
    """Grid (plus set samples) for the pointwise gates, uniform points for the LP oracle."""
    rng = np.random.default_rng(cfg.seed)
    box = audit_box(cfg)
    grid = audit_points(spec, box, cfg.audit.grid, cfg.audit.set_samples, rng)
    oracle = rng.uniform(box[:, 0], box[:, 1], size=(cfg.audit.oracle_points, cfg.state_dim))
    return grid, oracle


def tolerances(cfg: ProblemConfig) -> Tolerances:
    return Tolerances(cfg.solver.tol_feas, cfg.solver.tol_psd, cfg.solver.max_iter)


def sim_config(cfg: ProblemConfig, epsilon_w: float | None = None, seed: int | None = None) -> SimConfig:
    s = cfg.simulation
    return SimConfig(
        horizon=s.horizon,
        dt=s.dt,
        noise_hold=s.noise_hold,
        epsilon_w=cfg.epsilon_w if epsilon_w is None else epsilon_w,
        trajectories=s.trajectories,
        seed=cfg.seed if seed is None else seed,
        blowup_threshold=s.blowup_threshold,
        box=cfg.bounding_box,
    )
