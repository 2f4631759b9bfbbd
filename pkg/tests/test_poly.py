import numpy as np
import pytest

from densafe.services.model import TWIST_F, default_dictionary
from densafe.services.poly import (
    Polynomial,
    PolyVector,
    StructuralError,
    basis_size,
    build_r,
    divergence,
    monomial_basis,
    parse_polynomial,
    scale_field,
)
from densafe.services.poly_parser import ParseError

XY = ["x1", "x2"]


def p(text, variables=XY):
    return parse_polynomial(text, variables)


def random_poly(rng, n, degree, integer=False):
    basis = monomial_basis(n, 0, degree)
    if integer:
        coeffs = rng.integers(-4, 5, size=len(basis))
    else:
        coeffs = rng.normal(size=len(basis))
    return Polynomial({mono: float(c) for mono, c in zip(basis, coeffs)}, n)


def combination(weights, polys, n):
    return sum((float(w) * q for w, q in zip(weights, polys)), Polynomial.zero(n))


def random_expression(rng, names):
    terms = []
    for _ in range(int(rng.integers(1, 6))):
        coeff = round(float(rng.uniform(0.01, 50.0)), int(rng.integers(0, 4)))
        factors = [f"{name}^{int(e)}" for name, e in zip(names, rng.integers(0, 4, size=len(names))) if e]
        kind = int(rng.integers(0, 4))
        if kind == 0:
            body = "*".join([repr(coeff)] + factors)
        elif kind == 1:
            body = "*".join([f"{int(rng.integers(1, 9))}/{int(rng.integers(1, 9))}"] + factors)
        elif kind == 2:
            body = f"({names[0]} - {coeff})^{int(rng.integers(1, 4))}"
        else:
            body = f"{coeff}*({names[-1]} + {names[0]})*{names[0]}"
        terms.append(("- " if rng.integers(0, 2) else "+ ") + body)
    return " ".join(terms).lstrip("+ ")


def test_parse_collects_terms():
    q = p("x1^2 + 2*x1*x2 - 3 + x1*x1")
    assert q.coeff((2, 0)) == 2.0
    assert q.coeff((1, 1)) == 2.0
    assert q.coeff((0, 0)) == -3.0
    assert q.degree == 2


def test_parse_ratio_and_parentheses():
    q = p("-x1 + 1/3*x1^3 - (x2 + 1)^2")
    assert q.coeff((3, 0)) == pytest.approx(1 / 3)
    assert q.coeff((0, 2)) == -1.0
    assert q.coeff((0, 1)) == -2.0
    assert q.coeff((0, 0)) == -1.0


@pytest.mark.parametrize("text", ["x1 +", "y + 1", "x1^-1", "x1^1.5", "1/0", "(x1 + 1", "2 x1", ""])
def test_parse_errors(text):
    with pytest.raises(ParseError):
        p(text)


def test_parse_error_reports_position():
    with pytest.raises(ParseError) as info:
        p("x1 + y")
    assert info.value.position == 5


def test_printed_form_parses_back():
    q = p("0.3*x1^3 - 2*x1*x2 + 7 - x2")
    assert p(q.to_string(XY)) == q


def test_print_parse_fixpoint_on_generated_expressions():
    rng = np.random.default_rng(4)
    names = ["x1", "x2", "x3"]
    for _ in range(50):
        text = random_expression(rng, names)
        first = parse_polynomial(text, names)
        printed = first.to_string(names)
        second = parse_polynomial(printed, names)
        assert second == first, text
        assert second.to_string(names) == printed


def test_zero_polynomial_and_threshold():
    z = Polynomial.zero(2)
    assert z.degree == -1
    assert z.is_zero()
    tiny = Polynomial({(1, 0): 1e-13, (0, 1): 1.0}, 2)
    assert len(tiny) == 1
    assert (p("x1") - p("x1")).is_zero()


def test_dimension_mismatch_raises():
    with pytest.raises(StructuralError):
        Polynomial.variable(0, 2) + Polynomial.variable(0, 3)


def test_batch_evaluation_matches_pointwise():
    q = p("x1^3 - 2*x1*x2^2 + 0.5")
    pts = np.random.default_rng(0).normal(size=(20, 2))
    batch = q(pts)
    assert batch.shape == (20,)
    for x, value in zip(pts, batch):
        assert q(x) == pytest.approx(value)


def test_product_rule():
    a = p("x1^2*x2 - x2 + 3")
    b = p("x1 - 2*x2^3")
    for i in range(2):
        lhs = (a * b).derivative(i)
        rhs = a.derivative(i) * b + a * b.derivative(i)
        assert lhs.approx_equal(rhs)


def test_gradient_against_finite_differences():
    q = p("x1^3*x2 - 4*x1*x2^2 + x2^4 - 1")
    rng = np.random.default_rng(1)
    h = 1e-5
    for x in rng.uniform(-2, 2, size=(10, 2)):
        grad = q.gradient()(x)
        for i in range(2):
            e = np.zeros(2)
            e[i] = h
            fd = (q(x + e) - q(x - e)) / (2 * h)
            assert grad[i] == pytest.approx(fd, rel=1e-6, abs=1e-6)


def test_twist_divergence():
    field = PolyVector([parse_polynomial(t, ["x1", "x2", "x3"]) for t in TWIST_F])
    expected = parse_polynomial("-3 + 6*x1^2 - 6*x2^2", ["x1", "x2", "x3"])
    assert divergence(field).approx_equal(expected)


def test_divergence_of_scaled_field_expands():
    rho = p("1 + x1^2 - x2")
    f = PolyVector([p("x2"), p("-x1 + x1^3 - x2")])
    lhs = divergence(scale_field(rho, f))
    rhs = rho.gradient().dot(f) + rho * divergence(f)
    assert lhs.approx_equal(rhs)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_divergence_product_rule_is_exact(n):
    rng = np.random.default_rng(n)
    for _ in range(10):
        rho = random_poly(rng, n, int(rng.integers(0, 5)), integer=True)
        f = PolyVector([random_poly(rng, n, int(rng.integers(0, 5)), integer=True) for _ in range(n)], n)
        assert divergence(scale_field(rho, f)) == rho.gradient().dot(f) + rho * divergence(f)


def test_evaluation_is_a_ring_homomorphism():
    rng = np.random.default_rng(8)
    for n in (1, 2, 3):
        for _ in range(10):
            a = random_poly(rng, n, 3)
            b = random_poly(rng, n, 2)
            for x in rng.uniform(-1.5, 1.5, size=(5, n)):
                assert (a * b)(x) == pytest.approx(a(x) * b(x), rel=1e-10, abs=1e-10)
                assert (a + b)(x) == pytest.approx(a(x) + b(x), rel=1e-10, abs=1e-10)


def test_r_reproduces_divergence_of_the_closed_loop_field():
    # div(rho F phi + psi G gamma + rho w) == -r . (vec(F^T), vec(G^T), w)
    rng = np.random.default_rng(21)
    for _ in range(20):
        n = int(rng.integers(1, 4))
        dictionary = default_dictionary(n, int(rng.integers(1, 4)), g_constant=False,
                                        g_degree=int(rng.integers(0, 2)))
        phi, gamma = dictionary.phi, dictionary.gamma
        rho = random_poly(rng, n, 2)
        psi = random_poly(rng, n, 2)
        F = rng.normal(size=(n, dictionary.d_f))
        G = rng.normal(size=(n, dictionary.d_g))
        w = rng.normal(size=n)
        field = PolyVector([
            rho * combination(F[i], phi, n) + psi * combination(G[i], gamma, n) + float(w[i]) * rho
            for i in range(n)
        ], n)
        theta = np.concatenate([F.reshape(-1), G.reshape(-1), w])
        r = build_r(rho, psi, phi, gamma, n)
        div = divergence(field)
        for x in rng.uniform(-1.5, 1.5, size=(5, n)):
            assert div(x) == pytest.approx(-(r(x) @ theta), rel=1e-9, abs=1e-9)


def test_r_entry_order():
    x = ["x"]
    phi = PolyVector([parse_polynomial("x", x)])
    gamma = PolyVector([Polynomial.constant(1.0, 1)])
    r = build_r(parse_polynomial("x^2", x), Polynomial.constant(1.0, 1), phi, gamma, 1)
    assert len(r) == 3
    assert r[0].approx_equal(parse_polynomial("-3*x^2", x))
    assert r[1].is_zero()
    assert r[2].approx_equal(parse_polynomial("-2*x", x))


def test_monomial_basis_order_and_size():
    assert monomial_basis(2, 0, 2) == [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]
    assert len(monomial_basis(2, 0, 4)) == basis_size(2, 4) == 15
    assert len(monomial_basis(2, 1, 3)) == 9
