"""Safe controller synthesis from data.

Builds the SOS program whose solution is a density function rho, a numerator
psi and nonnegative polynomial multipliers y(x) (one per face of the data
polytope). The controller is u = psi / rho. Every certificate returned by
``run_synthesis`` has passed both the coefficient-level check of ``sosprog``
and the pointwise audit of ``verify_theorem_conditions``.
"""
from __future__ import annotations

import dataclasses
import logging
import math
import re
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from densafe.services.consistency import ConsistencyPolytope, LPFailure, containment_sweep, farkas_multipliers, r_at
from densafe.services.model import Dictionary, SamplingError, SemialgebraicSet, sample_set, set_contains
from densafe.services.poly import Polynomial, PolyVector, build_r, r_entries
from densafe.services.sosprog import (
    SolveReport,
    SolverFailure,
    SolveStatus,
    SosProgram,
    SymPoly,
    Tolerances,
    UnknownPoly,
    VerificationSummary,
    compile,
    linear_combination,
    solve,
    verify_certificate,
)

GATE_TOL = 1e-6
RESIDUAL_TOL = 1e-6


class AssemblyError(ValueError):
    pass


@dataclass(frozen=True)
class GateResult:
    name: str
    passed: bool
    worst: float | None
    witness: tuple | None = None
    detail: str = ""
    checked: int = 0

    def describe(self) -> str:
        where = f" at x={list(self.witness)}" if self.witness is not None else ""
        return f"gate {self.name} {'passed' if self.passed else 'FAILED'}: {self.detail}{where}"

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "passed": self.passed,
            "worst": self.worst,
            "witness": list(self.witness) if self.witness is not None else None,
            "detail": self.detail,
            "checked": self.checked,
        }


class CertificateRejected(RuntimeError):
    def __init__(self, failures: Sequence[GateResult]):
        self.failures = list(failures)
        super().__init__("; ".join(f.describe() for f in self.failures))


@dataclass(frozen=True)
class Degrees:
    d_rho: int
    d_psi: int
    d1: int
    d2: int

    def escalated(self) -> "Degrees":
        return Degrees(self.d_rho, self.d_psi, self.d1 + 1, self.d2 + 1)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class SynthesisSpec:
    P1: ConsistencyPolytope
    X0: SemialgebraicSet
    Xu: SemialgebraicSet
    dictionary: Dictionary
    degrees: Degrees
    unsafe_inflation: float = 0.0
    localize_psi_bound: bool = False
    min_margin: float = 1e-6
    kept_rows: tuple | None = None

    @property
    def n(self) -> int:
        return self.dictionary.n

    @property
    def h(self) -> Polynomial:
        return self.Xu.reduced

    @property
    def h_hat(self) -> Polynomial:
        """Unsafe polynomial shifted by the inflation; equals h when the inflation is 0."""
        return self.h + self.unsafe_inflation

    @property
    def k(self) -> Polynomial:
        return self.X0.reduced

    def with_degrees(self, degrees: Degrees) -> "SynthesisSpec":
        return dataclasses.replace(self, degrees=degrees)

    def check_degrees(self):
        d = self.degrees
        need1 = max(self.dictionary.phi_degree + d.d_rho, self.dictionary.gamma_degree + d.d_psi)
        if 2 * d.d1 < need1:
            raise AssemblyError(f"A.2: 2*d1 = {2 * d.d1} is below max(deg phi + d_rho, deg gamma + d_psi) = {need1}")
        need2 = max(d.d_rho, d.d_psi)
        if 2 * d.d2 < need2:
            raise AssemblyError(f"A.3-A.6: 2*d2 = {2 * d.d2} is below max(d_rho, d_psi) = {need2}")


@dataclass
class SynthesisProgram:
    spec: SynthesisSpec
    program: SosProgram
    rho: UnknownPoly
    psi: UnknownPoly
    ys: list
    s1: UnknownPoly
    s2: UnknownPoly
    c1: int
    c2: int
    sigma3: UnknownPoly | None = None
    sigma4: UnknownPoly | None = None
    sigma5: UnknownPoly | None = None

    def structure(self) -> dict:
        sizes = self.program.block_sizes()
        return {
            "gram_blocks": len(sizes),
            "max_gram": max(sizes, default=0),
            "multipliers": len(self.ys),
            "equalities": len(self.program.rows),
            "scalars": self.program.n_vars,
        }


def _scalar_sym(var: int, n: int) -> SymPoly:
    return SymPoly({(0,) * n: {var: 1.0}}, n)


def assemble_algorithm1(spec: SynthesisSpec) -> SynthesisProgram:
    P1 = spec.P1
    n = spec.n
    if P1.rows == 0:
        raise AssemblyError("the consistency polytope has no faces")
    if P1.columns != spec.dictionary.columns:
        raise AssemblyError(f"polytope has {P1.columns} columns, dictionary expects {spec.dictionary.columns}")
    spec.check_degrees()
    d = spec.degrees
    h, h_hat, k = spec.h, spec.h_hat, spec.k

    prog = SosProgram(n, "synthesis", min_margin=spec.min_margin)
    rho = prog.declare_poly(d.d_rho, "rho")
    psi = prog.declare_poly(d.d_psi, "psi")
    ys = [prog.declare_sos(d.d1, f"y[{i}]") for i in range(P1.rows)]  # (A.7)
    s1 = prog.declare_sos(d.d2, "s1")  # (A.8)
    s2 = prog.declare_sos(d.d2, "s2")
    c1 = prog.declare_scalar("c1")  # (A.9)
    c2 = prog.declare_scalar("c2")
    prog.require_positive(c1, c2)

    # (A.1) coeff(y^T N - r) = 0, one block of equalities per column
    r = r_entries(rho.sym, psi.sym, spec.dictionary.phi, spec.dictionary.gamma, n)
    for j in range(P1.columns):
        column = P1.N[:, j]
        lhs = linear_combination(((float(column[i]), ys[i].sym) for i in np.flatnonzero(column)), n)
        prog.add_coeff_equality(lhs, r[j], tag=f"A.1[{j}]")

    rho_h = rho.sym * h_hat
    ye = linear_combination(((float(P1.e[i]), ys[i].sym) for i in range(P1.rows)), n)

    # (A.2) -rho h - y^T e - c1 in Sigma
    prog.add_sos(-rho_h - ye - _scalar_sym(c1, n), d.d1, tag="A.2", auto_degree=True)

    # (A.3), (A.4) |psi| <= -rho h, globally or only on {h <= 0}
    sigma3 = sigma4 = sigma5 = None
    a3 = -rho_h - psi.sym
    a4 = -rho_h + psi.sym
    if spec.localize_psi_bound:
        sigma3 = prog.declare_sos(d.d2, "sigma3")
        sigma4 = prog.declare_sos(d.d2, "sigma4")
        sigma5 = prog.declare_sos(d.d2, "sigma5")
        a3 = a3 + sigma3.sym * h_hat
        a4 = a4 + sigma4.sym * h_hat
    prog.add_sos(a3, d.d2, tag="A.3", auto_degree=True)
    prog.add_sos(a4, d.d2, tag="A.4", auto_degree=True)

    # (A.5) rho - s1 k in Sigma, (A.6) -rho - s2 h - c2 in Sigma
    prog.add_sos(rho.sym - s1.sym * k, d.d2, tag="A.5", auto_degree=True)
    prog.add_sos(-rho.sym - s2.sym * h - _scalar_sym(c2, n), d.d2, tag="A.6", auto_degree=True)
    if spec.localize_psi_bound:
        # (A.10) rho <= 0 on {h >= 0}, which keeps {rho > 0} inside the localized region
        prog.add_sos(-rho.sym - sigma5.sym * h_hat, d.d2, tag="A.10", auto_degree=True)

    a1 = SynthesisProgram(spec, prog, rho, psi, ys, s1, s2, c1, c2, sigma3, sigma4, sigma5)
    s = a1.structure()
    logging.info(f"Assembled synthesis program: {s['gram_blocks']} Gram blocks (max {s['max_gram']}), {s['equalities']} equalities")
    return a1


# --- certificates ---


@dataclass
class SafetyCertificate:
    rho: Polynomial
    psi: Polynomial
    y: PolyVector
    s1: Polynomial
    s2: Polynomial
    c1: float
    c2: float
    degrees: Degrees
    grams: dict = field(default_factory=dict)
    sigma3: Polynomial | None = None
    sigma4: Polynomial | None = None
    sigma5: Polynomial | None = None
    margin: float | None = None
    kept_rows: tuple | None = None
    unsafe_inflation: float = 0.0
    localize_psi_bound: bool = False
    verification: VerificationSummary | None = None
    solver_stats: dict = field(default_factory=dict)
    audit: "AuditReport | None" = None
    provenance: dict = field(default_factory=dict)


@dataclass(frozen=True)
class InfeasibleResult:
    degrees: Degrees
    report: SolveReport

    @property
    def message(self) -> str:
        return f"infeasible at degree (d1={self.degrees.d1}, d2={self.degrees.d2})"


def extract_certificate(a1: SynthesisProgram, report: SolveReport) -> SafetyCertificate:
    spec = a1.spec
    x = report.x
    grams = {blk.tag: Q for blk, Q in zip(a1.program.blocks, report.grams)}
    return SafetyCertificate(
        rho=report.poly(a1.rho),
        psi=report.poly(a1.psi),
        y=PolyVector([report.poly(y) for y in a1.ys], spec.n),
        s1=report.poly(a1.s1),
        s2=report.poly(a1.s2),
        c1=float(x[a1.c1]),
        c2=float(x[a1.c2]),
        degrees=spec.degrees,
        grams=grams,
        sigma3=report.poly(a1.sigma3) if a1.sigma3 is not None else None,
        sigma4=report.poly(a1.sigma4) if a1.sigma4 is not None else None,
        sigma5=report.poly(a1.sigma5) if a1.sigma5 is not None else None,
        margin=float(x[a1.program.margin_var]),
        kept_rows=spec.kept_rows,
        unsafe_inflation=spec.unsafe_inflation,
        localize_psi_bound=spec.localize_psi_bound,
        verification=report.verification,
        solver_stats=report.stats(),
    )


def replay_report(a1: SynthesisProgram, cert: SafetyCertificate) -> SolveReport:
    """Feed stored certificate numbers back into a freshly assembled program."""
    free = {}
    for unknown, poly in ((a1.rho, cert.rho), (a1.psi, cert.psi)):
        basis = set(unknown.basis)
        stray = [m for m in poly.terms if m not in basis]
        if stray:
            raise AssemblyError(f"{unknown.name} has terms {stray} beyond degree {unknown.degree}")
        for mono, var in zip(unknown.basis, unknown.handles):
            free[var] = poly.coeff(mono)
    free[a1.c1] = cert.c1
    free[a1.c2] = cert.c2
    margin = cert.margin if cert.margin is not None else min(cert.c1, cert.c2)
    free[a1.program.margin_var] = margin
    return a1.program.report_from_values(free, cert.grams)


_TAG_GATE = re.compile(r"^(A\.\d+|y|s1|s2|sigma3|sigma4|sigma5|c1|c2)")


def gates_from_offenders(summary: VerificationSummary) -> list[GateResult]:
    """Group sosprog offender lines by the synthesis constraint they belong to."""
    grouped: dict[str, list[str]] = {}
    for line in summary.offenders:
        m = _TAG_GATE.match(line)
        name = m.group(1) if m else "sosprog"
        if name in ("y", "s1", "s2", "sigma3", "sigma4", "sigma5"):
            name = "A.7" if name == "y" else "A.8"
        elif name in ("c1", "c2"):
            name = "A.9"
        grouped.setdefault(name, []).append(line)
    return [GateResult(name, False, None, None, lines[0], len(lines)) for name, lines in sorted(grouped.items())]


# --- theorem audit ---


@dataclass
class AuditReport:
    gates: dict
    points: int
    oracle_points: int
    min_margin: float | None = None
    max_lp: float | None = None
    lp_multiplier: dict | None = None

    @property
    def passed(self) -> bool:
        return all(g.passed for g in self.gates.values())

    @property
    def failures(self) -> list[GateResult]:
        return [g for g in self.gates.values() if not g.passed]

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "grid": self.points,
            "oracle_points": self.oracle_points,
            "worst_margins": {"lp_oracle": self.min_margin, "lp_max": self.max_lp},
            "lp_multiplier": self.lp_multiplier,
            "gates": {name: g.to_dict() for name, g in self.gates.items()},
        }


def _pointwise_gate(name: str, violation: np.ndarray, pts: np.ndarray, detail: str) -> GateResult:
    if violation.size == 0:
        return GateResult(name, True, float("-inf"), None, f"{detail} (no points)", 0)
    worst = int(np.argmax(violation))
    value = float(violation[worst])
    passed = value <= 0.0
    witness = tuple(float(v) for v in pts[worst]) if not passed else None
    return GateResult(name, passed, value, witness, f"{detail}, worst excess {value:.3e}", int(violation.size))


def audit_points(
    spec: SynthesisSpec,
    box,
    per_axis: int,
    set_samples: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Regular grid over box, augmented with samples from the initial and unsafe sets."""
    box = np.asarray(box, dtype=float)
    axes = [np.linspace(lo, hi, per_axis) for lo, hi in box]
    grid = np.stack([m.ravel() for m in np.meshgrid(*axes, indexing="ij")], axis=1)
    extra = []
    for label, S in (("X0", spec.X0), ("Xu", spec.Xu)):
        try:
            extra.append(sample_set(S, set_samples, S.box, rng))
        except SamplingError as e:
            logging.warning(f"No audit samples from {label}: {e}")
    return np.vstack([grid] + extra) if extra else grid


def lp_multiplier_at(cert: SafetyCertificate, spec: SynthesisSpec, x, certified: float) -> dict | None:
    """Smallest y^T e over y >= 0 with N^T y = r(x), next to the certified y(x)^T e."""
    x = np.asarray(x, dtype=float)
    bound = float(-cert.rho(x) * spec.h_hat(x))
    try:
        result = farkas_multipliers(spec.P1, r_at(cert.rho, cert.psi, spec.dictionary, x), bound)
    except LPFailure as e:
        logging.warning(f"Multiplier LP failed at x={x.tolist()}: {e}")
        return None
    return {
        "x": x.tolist(),
        "lp_value": result.value if np.isfinite(result.value) else None,
        "certified_value": certified,
        "bound": bound,
        "feasible": result.feasible,
    }


def verify_theorem_conditions(
    cert: SafetyCertificate,
    spec: SynthesisSpec,
    grid,
    oracle_points=None,
    workers: int = 4,
    tol: float = GATE_TOL,
) -> AuditReport:
    pts = np.atleast_2d(np.asarray(grid, dtype=float))
    P1 = spec.P1
    h, h_hat = spec.h, spec.h_hat
    gates: dict[str, GateResult] = {}

    # 18a: y^T N - r vanishes coefficientwise
    if len(cert.y) != P1.rows:
        gates["18a"] = GateResult("18a", False, float("inf"), None,
                                  f"{len(cert.y)} multipliers for a polytope with {P1.rows} faces")
    else:
        r = build_r(cert.rho, cert.psi, spec.dictionary.phi, spec.dictionary.gamma, spec.n)
        worst, where = 0.0, ""
        for j in range(P1.columns):
            residual = -r[j]
            for i in np.flatnonzero(P1.N[:, j]):
                residual = residual + float(P1.N[i, j]) * cert.y[i]
            if residual.max_abs_coeff() > worst:
                worst = residual.max_abs_coeff()
                mono = max(residual.terms, key=lambda m: abs(residual.terms[m]))
                where = f"column {j}, monomial {mono}"
        gates["18a"] = GateResult("18a", worst <= RESIDUAL_TOL, worst, None,
                                  f"max coefficient residual {worst:.3e} {where}".strip())

    rho_v = cert.rho(pts)
    psi_v = cert.psi(pts)
    h_hat_v = h_hat(pts)

    # 18b: y^T e + rho h <= -c1
    lp_multiplier = None
    if len(cert.y) == P1.rows:
        ye = Polynomial.zero(spec.n)
        for i in range(P1.rows):
            if P1.e[i] != 0.0:
                ye = ye + float(P1.e[i]) * cert.y[i]
        ye_v = ye(pts)
        violation = ye_v + rho_v * h_hat_v + cert.c1 - tol
        gates["18b"] = _pointwise_gate("18b", violation, pts, "y^T e + rho h <= -c1")
        if violation.size:
            tight = int(np.argmax(violation))
            lp_multiplier = lp_multiplier_at(cert, spec, pts[tight], float(ye_v[tight]))

    # 18c: |psi| <= -rho h; a localized certificate is still checked wherever rho >= 0
    if spec.localize_psi_bound:
        mask = (h_hat_v <= 0.0) | (rho_v >= 0.0)
    else:
        mask = np.ones(len(pts), dtype=bool)
    gates["18c"] = _pointwise_gate("18c", (np.abs(psi_v) + rho_v * h_hat_v - tol)[mask], pts[mask],
                                   "|psi| <= -rho h")

    # 18d: rho >= 0 on X0, 18e: rho < 0 on Xu
    in0 = set_contains(spec.X0, pts)
    gates["18d"] = _pointwise_gate("18d", (-rho_v - tol)[in0], pts[in0], "rho >= 0 on the initial set")
    inu = set_contains(spec.Xu, pts)
    gates["18e"] = _pointwise_gate("18e", rho_v[inu] + 1e-12, pts[inu], "rho < 0 on the unsafe set")

    # Containment oracle: max over P1 of r.theta stays below -rho h
    opts = pts if oracle_points is None else np.atleast_2d(np.asarray(oracle_points, dtype=float))
    lp_max, margins = containment_sweep(P1, cert.rho, cert.psi, spec.dictionary, h_hat, opts, workers)
    gates["lp-oracle"] = _pointwise_gate("lp-oracle", -margins, opts, "containment margin > 0")

    report = AuditReport(
        gates, len(pts), len(opts),
        min_margin=float(np.min(margins)) if margins.size else None,
        max_lp=float(np.max(lp_max)) if lp_max.size else None,
        lp_multiplier=lp_multiplier,
    )
    for g in report.failures:
        logging.warning(g.describe())
    return report


# --- driver ---


def run_synthesis(
    spec: SynthesisSpec,
    adapter=None,
    tolerances: Tolerances | None = None,
    escalate_cap: int | None = None,
    grid=None,
    oracle_points=None,
    workers: int = 4,
):
    """Solve, verify and audit. Returns a SafetyCertificate or an InfeasibleResult."""
    tolerances = tolerances or Tolerances()
    degrees = spec.degrees
    while True:
        current = spec.with_degrees(degrees)
        a1 = assemble_algorithm1(current)
        problem = compile(a1.program)
        report = solve(problem, adapter, tolerances)

        if report.status is SolveStatus.NUMERICAL_FAILURE:
            raise SolverFailure(f"solver {report.solver} ended with {report.raw_status} at degrees {degrees.as_dict()}")
        if report.status is SolveStatus.INFEASIBLE:
            if escalate_cap is not None and degrees.d1 < escalate_cap:
                logging.info(f"Infeasible at (d1={degrees.d1}, d2={degrees.d2}), escalating")
                degrees = degrees.escalated()
                continue
            return InfeasibleResult(degrees, report)

        summary = verify_certificate(a1.program, report, tolerances.tol_feas, tolerances.tol_psd)
        if not summary.sound:
            raise CertificateRejected(gates_from_offenders(summary))
        cert = extract_certificate(a1, report)
        if grid is not None:
            cert.audit = verify_theorem_conditions(cert, current, grid, oracle_points, workers)
            if not cert.audit.passed:
                raise CertificateRejected(cert.audit.failures)
        logging.info(f"Certificate found: c1={cert.c1:.3e}, c2={cert.c2:.3e}")
        return cert


# --- controller ---


@dataclass(frozen=True)
class ControlValue:
    u: float
    blowup: bool
    x: tuple
    rho: float
    psi: float


@dataclass(frozen=True)
class RationalController:
    psi: Polynomial
    rho: Polynomial
    blowup_threshold: float = 1e4

    def __call__(self, x) -> ControlValue:
        x = np.asarray(x, dtype=float)
        rho, psi = self.rho(x), self.psi(x)
        if rho == 0.0:
            return ControlValue(math.nan, True, tuple(x.tolist()), rho, psi)
        u = psi / rho
        if not abs(u) < self.blowup_threshold:
            return ControlValue(math.nan, True, tuple(x.tolist()), rho, psi)
        return ControlValue(u, False, tuple(x.tolist()), rho, psi)

    def evaluate_batch(self, X):
        """(u, blowup mask, rho) for an (m, n) batch; u is nan where blown up."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        rho, psi = self.rho(X), self.psi(X)
        with np.errstate(divide="ignore", invalid="ignore"):
            u = psi / rho
        blowup = (rho == 0.0) | ~(np.abs(u) < self.blowup_threshold)
        return np.where(blowup, np.nan, u), blowup, rho


def make_controller(cert: SafetyCertificate, blowup_threshold: float = 1e4) -> RationalController:
    return RationalController(cert.psi, cert.rho, blowup_threshold)


# --- complexity ---


@dataclass(frozen=True)
class ComplexityReport:
    n: int
    dim_f: int
    dim_g: int
    d_r: int
    naive_dim: int
    naive_gram: int
    dual_gram: int
    blocks: int | None = None

    def line(self) -> str:
        return f"{self.naive_gram} -> {self.dual_gram}"


def complexity_report(n: int, dim_f: int, dim_g: int, d_r: int, blocks: int | None = None) -> ComplexityReport:
    """Largest Gram side: Putinar over (x, f, g, w) versus the multiplier form over x only."""
    naive_dim = dim_f + dim_g + 2 * n
    return ComplexityReport(
        n, dim_f, dim_g, d_r, naive_dim,
        math.comb(d_r + naive_dim, d_r),
        math.comb(n + d_r, d_r),
        blocks,
    )


def complexity_for_spec(spec: SynthesisSpec) -> ComplexityReport:
    d = spec.dictionary
    blocks = spec.P1.rows + 2 + 5 + (4 if spec.localize_psi_bound else 0)
    return complexity_report(d.n, d.n * d.d_f, d.n * d.d_g, spec.degrees.d1, blocks)
