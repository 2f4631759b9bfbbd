import dataclasses
import math

import numpy as np
import pytest

from densafe.services.consistency import assemble_P1, containment_lp_oracle, reduce_faces
from densafe.services.poly import Polynomial, PolyVector, parse_polynomial
from densafe.services.sosprog import (
    AdapterResult,
    SolverFailure,
    SolveStatus,
    VerificationSummary,
    verify_certificate,
)
from densafe.services.synth import (
    AssemblyError,
    Degrees,
    InfeasibleResult,
    SafetyCertificate,
    SynthesisSpec,
    assemble_algorithm1,
    audit_points,
    complexity_for_spec,
    complexity_report,
    gates_from_offenders,
    make_controller,
    replay_report,
    run_synthesis,
    verify_theorem_conditions,
)

X = ["x"]


class FakeAdapter:
    def __init__(self, status):
        self.status = status
        self.calls = []

    def solve(self, problem, tolerances=None):
        self.calls.append(problem.max_block)
        return AdapterResult(self.status, None, [], None, "fake", 0, 0.0, self.status.value)


def hand_certificate(spec, rho, psi="0"):
    zero = Polynomial.zero(1)
    return SafetyCertificate(
        rho=parse_polynomial(rho, X),
        psi=parse_polynomial(psi, X),
        y=PolyVector([zero] * spec.P1.rows, 1),
        s1=zero,
        s2=zero,
        c1=0.0,
        c2=0.0,
        degrees=spec.degrees,
    )


@pytest.mark.parametrize(
    "n, dim_f, dim_g, d_r, naive, dual",
    [
        (2, 18, 2, 4, 20475, 15),
        (2, 6, 6, 3, 969, 10),
        (3, 57, 3, 4, math.comb(70, 4), 35),
        (2, 18, 2, 0, 1, 1),
    ],
)
def test_complexity_counts(n, dim_f, dim_g, d_r, naive, dual):
    cx = complexity_report(n, dim_f, dim_g, d_r)
    assert cx.naive_dim == dim_f + dim_g + 2 * n
    assert (cx.naive_gram, cx.dual_gram) == (naive, dual)
    assert cx.line() == f"{naive} -> {dual}"


def test_degree_escalation():
    d = Degrees(4, 4, 4, 2)
    assert d.escalated() == Degrees(4, 4, 5, 3)
    assert d.as_dict() == {"d_rho": 4, "d_psi": 4, "d1": 4, "d2": 2}


def test_degree_check(toy_spec):
    with pytest.raises(AssemblyError, match="A.2"):
        assemble_algorithm1(toy_spec.with_degrees(Degrees(2, 2, 1, 1)))
    with pytest.raises(AssemblyError, match="A.3-A.6"):
        assemble_algorithm1(toy_spec.with_degrees(Degrees(4, 2, 3, 1)))


def test_column_mismatch(toy_spec, flow_dictionary):
    with pytest.raises(AssemblyError):
        assemble_algorithm1(dataclasses.replace(toy_spec, dictionary=flow_dictionary))


def test_toy_assembly_structure(toy_spec):
    a1 = assemble_algorithm1(toy_spec)
    s = a1.structure()
    rows = toy_spec.P1.rows
    # y per face, s1, s2, three localizers, then A.2 to A.6 and A.10
    assert s["gram_blocks"] == rows + 2 + 3 + 6
    assert s["multipliers"] == rows
    assert s["max_gram"] == 3
    tags = [b.tag for b in a1.program.blocks]
    assert tags[:2] == ["y[0]", "y[1]"]
    assert {"s1", "s2", "sigma3", "sigma4", "sigma5", "A.2"} <= set(tags)
    assert tags[-5:] == ["A.3", "A.4", "A.5", "A.6", "A.10"]
    assert complexity_for_spec(toy_spec).blocks == s["gram_blocks"]


def test_flow_assembly_structure(flow_data, flow_dictionary, flow_W, flow_X0, flow_Xu):
    reduced, kept = reduce_faces(assemble_P1(flow_data, flow_dictionary, flow_W))
    spec = SynthesisSpec(reduced, flow_X0, flow_Xu, flow_dictionary, Degrees(4, 4, 4, 2),
                         unsafe_inflation=0.2, localize_psi_bound=True, kept_rows=tuple(kept))
    s = assemble_algorithm1(spec).structure()
    assert s["max_gram"] == 15
    assert s["gram_blocks"] == len(kept) + 11
    cx = complexity_for_spec(spec)
    assert cx.line() == "20475 -> 15"


def test_gates_accept_sign_pattern(toy_spec):
    # rho = -(h + inflation): positive on X0, negative on Xu
    cert = hand_certificate(toy_spec, "x^2 - 1.1")
    grid = np.linspace(-8, 8, 161)[:, None]
    audit = verify_theorem_conditions(cert, toy_spec, grid, oracle_points=grid[::20], workers=1)
    assert audit.gates["18c"].passed
    assert audit.gates["18d"].passed
    assert audit.gates["18e"].passed
    # zero multipliers cannot reproduce r
    assert not audit.gates["18a"].passed
    assert not audit.passed


def test_audit_reports_multiplier_lp(toy_spec):
    cert = hand_certificate(toy_spec, "x^2 - 1.1")
    grid = np.linspace(-8, 8, 161)[:, None]
    audit = verify_theorem_conditions(cert, toy_spec, grid, oracle_points=grid[::20], workers=1)
    m = audit.lp_multiplier
    assert m is not None
    assert m["certified_value"] == 0.0
    x = np.array(m["x"])
    assert m["bound"] == pytest.approx(-cert.rho(x) * toy_spec.h_hat(x))
    # LP duality: the cheapest multiplier equals the worst consistent model
    oracle = containment_lp_oracle(toy_spec.P1, cert.rho, cert.psi, toy_spec.dictionary, x, toy_spec.h_hat)
    assert m["lp_value"] == pytest.approx(oracle.lp_max, abs=1e-6)
    assert audit.to_dict()["lp_multiplier"] == m


def test_gates_reject_wrong_sign(toy_spec):
    cert = hand_certificate(toy_spec, "1.1 - x^2")
    grid = np.linspace(-8, 8, 161)[:, None]
    audit = verify_theorem_conditions(cert, toy_spec, grid, oracle_points=grid[::40], workers=1)
    for name in ("18d", "18e"):
        gate = audit.gates[name]
        assert not gate.passed
        assert gate.witness is not None
    assert audit.gates["18e"].witness[0] == pytest.approx(0.0, abs=1.0)
    assert audit.to_dict()["passed"] is False


def test_localized_bound_checked_where_rho_is_nonnegative(toy_spec):
    # rho >= 0 reaches into the inflation band, where psi is left free
    cert = hand_certificate(toy_spec, "x^2 - 1.05", psi="0.011 - 0.01*x^2")
    grid = np.linspace(-8, 8, 1601)[:, None]
    audit = verify_theorem_conditions(cert, toy_spec, grid, oracle_points=grid[::400], workers=1)
    gate = audit.gates["18c"]
    assert not gate.passed
    assert 1.05 - 1e-9 <= gate.witness[0] ** 2 < 1.1
    assert audit.gates["18d"].passed
    assert audit.gates["18e"].passed

    # the localized program also asks for rho <= 0 on {h >= 0}
    a1 = assemble_algorithm1(toy_spec)
    assert "A.10" in {b.tag for b in a1.program.blocks}
    assert a1.sigma5 is not None

    plain = assemble_algorithm1(dataclasses.replace(toy_spec, localize_psi_bound=False))
    assert plain.sigma5 is None
    assert "A.10" not in {b.tag for b in plain.program.blocks}


def test_multiplier_count_mismatch(toy_spec):
    cert = hand_certificate(toy_spec, "x^2 - 1.1")
    cert.y = PolyVector([Polynomial.zero(1)], 1)
    audit = verify_theorem_conditions(cert, toy_spec, np.zeros((1, 1)), workers=1)
    assert not audit.gates["18a"].passed
    assert "18b" not in audit.gates


def test_offenders_grouped_by_constraint():
    summary = VerificationSummary(
        sound=False, min_eigenvalue=-1.0, worst_block="y[3]", max_sos_residual=1.0, worst_sos="A.2",
        max_eq_residual=0.0, worst_eq=None, min_positive=-1.0,
        offenders=[
            "A.2: coefficient residual 1e-3 at monomial (0,)",
            "y[3]: Gram min eigenvalue -1e-2",
            "sigma3: Gram min eigenvalue -1e-4",
            "A.1[4]: equality residual 1e-5 at monomial (1,)",
            "c1: required positive, got -1e-3",
            "A.2: coefficient residual 1e-6 at monomial (2,)",
        ],
    )
    gates = {g.name: g for g in gates_from_offenders(summary)}
    assert sorted(gates) == ["A.1", "A.2", "A.7", "A.8", "A.9"]
    assert gates["A.2"].checked == 2
    assert not any(g.passed for g in gates.values())


def test_audit_points_include_set_samples(toy_spec):
    pts = audit_points(toy_spec, [[-8.0, 8.0]], 5, 10, np.random.default_rng(0))
    assert pts.shape == (25, 1)
    assert np.sum((pts[:, 0] >= -3.0) & (pts[:, 0] <= -2.0)) >= 10


def test_infeasible_after_escalation(toy_spec):
    adapter = FakeAdapter(SolveStatus.INFEASIBLE)
    result = run_synthesis(toy_spec, adapter, escalate_cap=4)
    assert isinstance(result, InfeasibleResult)
    assert result.degrees == Degrees(2, 2, 4, 3)
    assert len(adapter.calls) == 3
    assert "d1=4" in result.message


def test_numerical_failure_raises(toy_spec):
    with pytest.raises(SolverFailure):
        run_synthesis(toy_spec, FakeAdapter(SolveStatus.NUMERICAL_FAILURE))


def test_controller_blowup():
    rho = parse_polynomial("x", X)
    psi = parse_polynomial("1", X)
    controller = make_controller(SafetyCertificate(rho, psi, PolyVector([], 1), rho, rho, 1.0, 1.0,
                                                   Degrees(1, 0, 1, 1)))
    assert controller([0.5]).u == pytest.approx(2.0)
    assert controller([0.0]).blowup
    assert controller([1e-5]).blowup
    assert math.isnan(controller([0.0]).u)
    u, blowup, rho_v = controller.evaluate_batch([[0.0], [2.0], [1e-6]])
    assert blowup.tolist() == [True, False, True]
    assert u[1] == pytest.approx(0.5)
    assert rho_v[1] == pytest.approx(2.0)


@pytest.mark.slow
def test_toy_synthesis_end_to_end(toy_spec):
    grid = np.linspace(-8, 8, 81)[:, None]
    cert = run_synthesis(toy_spec, grid=grid, oracle_points=grid[::4], workers=2)
    assert isinstance(cert, SafetyCertificate)
    assert cert.c1 > 0 and cert.c2 > 0
    assert cert.audit.passed
    assert cert.rho([-2.5]) >= -1e-6
    assert cert.rho([0.0]) < 0

    # stored numbers verify against a freshly assembled program
    a1 = assemble_algorithm1(toy_spec)
    assert verify_certificate(a1.program, replay_report(a1, cert)).sound

    # a corrupted density is caught
    bad = dataclasses.replace(cert, rho=cert.rho + 0.5)
    summary = verify_certificate(a1.program, replay_report(a1, bad))
    assert not summary.sound
    assert {g.name for g in gates_from_offenders(summary)} & {"A.1", "A.2", "A.5", "A.6"}
