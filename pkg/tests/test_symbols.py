import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qmlab.symbols import (
    DomainError,
    ParseError,
    PhasePoint,
    builtin_symbol,
    eval_jet,
    parse_base_function,
    parse_symbol,
    poisson_bracket,
)

from _oracles import fd_gradient, fd_hessian, fd_third, rel_err

RNG = np.random.default_rng(20260809)


def random_point(n, scale=0.7):
    return PhasePoint(RNG.uniform(-scale, scale, n), RNG.uniform(-scale, scale, n))


# --- parsing ---------------------------------------------------------------


def test_parse_model_symbol_matches_builtin():
    parsed = parse_symbol("xi1 - x2 - xi2^2", 2)
    builtin = builtin_symbol("model-fold", 2)
    for _ in range(20):
        pt = random_point(2, 2.0)
        assert parsed(pt) == pytest.approx(builtin(pt), abs=1e-15)


def test_parse_zero_symbol():
    zero = parse_symbol("0", 3)
    assert zero(random_point(3)) == 0.0


def test_flat_elliptic_value():
    p = parse_symbol("xi1^2 + xi2^2 - 1", 2)
    assert p(PhasePoint([0.0, 0.0], [1.0, 0.0])) == 0.0


def test_parse_errors_carry_position():
    with pytest.raises(ParseError) as err:
        parse_symbol("xi1 * * 2", 2)
    assert err.value.position == 6
    with pytest.raises(ParseError, match="exceeds dimension"):
        parse_symbol("xi3 + x1", 2)
    with pytest.raises(ParseError, match="unknown identifier"):
        parse_symbol("foo(x1)", 2)
    with pytest.raises(ParseError, match="expected"):
        parse_symbol("(x1 + xi1", 2)
    with pytest.raises(ParseError):
        parse_symbol("x1 + ?", 2)


def test_arity_tags():
    assert parse_symbol("x1 + x2^2", 2).arity == "base"
    assert parse_symbol("x1 + xi2", 2).arity == "phase"
    with pytest.raises(ParseError):
        parse_base_function("xi1", 2)


def test_domain_errors():
    pt = PhasePoint([-1.0, 0.0], [0.0, 0.0])
    with pytest.raises(DomainError):
        parse_symbol("log(x1)", 2)(pt)
    with pytest.raises(DomainError):
        parse_symbol("sqrt(x1)", 2)(pt)
    with pytest.raises(DomainError):
        parse_symbol("1 / (x1 + 1)", 2)(pt)


# --- jets ------------------------------------------------------------------


def test_model_gradient_at_origin():
    p = builtin_symbol("model-fold", 4)
    jet = eval_jet(p, PhasePoint(np.zeros(4), np.zeros(4)), 1)
    # d_xi p = (1, 0, ..., 0, -2 xi_n)|_0 and d_xn p = -1
    expected = np.zeros(8)
    expected[3] = -1.0
    expected[4] = 1.0
    assert np.allclose(jet.gradient, expected, atol=1e-15)


def test_model_dxn_is_minus_one_everywhere():
    p = builtin_symbol("model-fold", 3)
    for _ in range(10):
        jet = eval_jet(p, random_point(3, 2.0), 1)
        assert jet.gradient[2] == pytest.approx(-1.0, abs=1e-15)


def test_pure_square_hessian():
    f = parse_symbol("xi2^2", 2)
    jet = eval_jet(f, random_point(2), 2)
    want = np.zeros((4, 4))
    want[3, 3] = 2.0
    assert np.allclose(jet.hessian, want, atol=1e-15)


def test_order_out_of_range():
    p = builtin_symbol("model-fold", 2)
    with pytest.raises(ValueError):
        eval_jet(p, random_point(2), 4)


SMOOTH_TEXT = "exp(x1/2) * sin(xi2) + log(2 + x2^2) - sqrt(1 + xi1^2) + cos(x1 * xi2)"


@pytest.mark.parametrize(
    "fn",
    [
        builtin_symbol("model-fold", 2),
        builtin_symbol("model-fold", 3),
        builtin_symbol("flat-elliptic", 2),
        parse_symbol(SMOOTH_TEXT, 2),
    ],
    ids=["model2", "model3", "flat2", "smooth"],
)
def test_jets_match_richardson_differences(fn):
    def g(env):
        return fn.eval_phase(env)

    n_points = 100 if fn.n == 2 else 25
    for _ in range(n_points):
        pt = random_point(fn.n)
        env = pt.env()
        jet = eval_jet(fn, pt, 3)
        assert rel_err(jet.gradient, fd_gradient(g, env)) < 1e-6
        assert rel_err(jet.hessian, fd_hessian(g, env)) < 1e-6
        assert rel_err(jet.third, fd_third(g, env)) < 1e-4


def test_jet_tensors_symmetric():
    fn = parse_symbol(SMOOTH_TEXT, 2)
    for _ in range(10):
        jet = eval_jet(fn, random_point(2), 3)
        assert np.max(np.abs(jet.hessian - jet.hessian.T)) <= 1e-12
        t = jet.third
        for perm in ((0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)):
            assert np.max(np.abs(t - np.transpose(t, perm))) <= 1e-12


# --- Poisson brackets -------------------------------------------------------


def test_bracket_model_examples():
    p = builtin_symbol("model-fold", 2)
    r = parse_base_function("x2", 2)
    rdot = poisson_bracket(p, r)
    rddot = poisson_bracket(p, rdot)
    for _ in range(10):
        pt = random_point(2, 1.5)
        assert rdot(pt) == pytest.approx(-2.0 * pt.xi[1], abs=1e-12)
        assert rddot(pt) == pytest.approx(-2.0, abs=1e-12)


def test_bracket_antisymmetry_and_self():
    p = builtin_symbol("model-fold", 2)
    q = parse_symbol(SMOOTH_TEXT, 2)
    pq = poisson_bracket(p, q)
    qp = poisson_bracket(q, p)
    pp = poisson_bracket(p, p)
    for _ in range(20):
        pt = random_point(2)
        assert abs(pq(pt) + qp(pt)) <= 1e-10
        assert abs(pp(pt)) <= 1e-10


def test_bracket_dimension_mismatch():
    with pytest.raises(ValueError, match="dimension mismatch"):
        poisson_bracket(builtin_symbol("model-fold", 2), builtin_symbol("model-fold", 3))


coords = st.floats(min_value=-1.0, max_value=1.0, allow_nan=False)


@given(st.lists(coords, min_size=4, max_size=4))
@settings(max_examples=50, deadline=None)
def test_bracket_leibniz(vals):
    f = builtin_symbol("model-fold", 2)
    g = parse_symbol("x1 + xi2^2", 2)
    h = parse_symbol("xi1 * x2 - 1", 2)
    gh = parse_symbol(f"({g.text}) * ({h.text})", 2)
    pt = PhasePoint(vals[:2], vals[2:])
    lhs = poisson_bracket(f, gh)(pt)
    rhs = g(pt) * poisson_bracket(f, h)(pt) + h(pt) * poisson_bracket(f, g)(pt)
    assert abs(lhs - rhs) <= 1e-10


# --- print / parse round-trip ----------------------------------------------

_atoms = st.sampled_from(["x1", "x2", "xi1", "xi2", "1", "2", "0.5", "3.25"])


def _combine(children):
    a, b = children
    op = RNG.choice(["+", "-", "*"])
    return f"({a}) {op} ({b})"


_exprs = st.recursive(
    _atoms,
    lambda sub: st.one_of(
        st.tuples(sub, sub).map(lambda ab: f"({ab[0]}) + ({ab[1]})"),
        st.tuples(sub, sub).map(lambda ab: f"({ab[0]}) - ({ab[1]})"),
        st.tuples(sub, sub).map(lambda ab: f"({ab[0]}) * ({ab[1]})"),
        sub.map(lambda a: f"-({a})"),
        sub.map(lambda a: f"sin(({a}))"),
        sub.map(lambda a: f"exp(-(({a}))^2)"),
        sub.map(lambda a: f"({a}) ^ 2"),
        sub.map(lambda a: f"({a}) / (2 + (({a}))^2)"),
    ),
    max_leaves=6,
)


@given(_exprs, st.lists(coords, min_size=4, max_size=4))
@settings(max_examples=80, deadline=None)
def test_parse_print_roundtrip(text, vals):
    fn = parse_symbol(text, 2)
    reparsed = parse_symbol(fn.to_text(), 2)
    pt = PhasePoint(vals[:2], vals[2:])
    assert abs(fn(pt) - reparsed(pt)) <= 1e-12 * max(1.0, abs(fn(pt)))


def test_builtin_texts():
    assert builtin_symbol("model-fold", 3).to_text() == "xi1 - x3 - xi2 ^ 2 - xi3 ^ 2"
    with pytest.raises(ValueError, match="unknown builtin"):
        builtin_symbol("nope", 2)
    with pytest.raises(ValueError):
        builtin_symbol("model-fold", 1)


def test_phase_point_validation():
    with pytest.raises(ValueError):
        PhasePoint([0.0, np.inf], [0.0, 0.0])
    with pytest.raises(ValueError):
        PhasePoint([0.0, 0.0, 0.0], [0.0, 0.0])
