import numpy as np
import pytest

from qmlab.eikonal import (
    EikonalError,
    MapJet,
    NormalizationError,
    classify_fold_map,
    classify_projections,
    fold_report,
    hj_residual_max,
    oscillatory_phase_projections,
    phase_fold_quantities_closed,
    phase_fold_quantities_numeric,
    solve_phase,
)
from qmlab.flow import r_derivatives
from qmlab.geometry import ImplicitReducedSymbol, reduced_from_expression
from qmlab.symbols import PhasePoint, builtin_symbol, parse_base_function, parse_symbol

A_ZERO = reduced_from_expression("0", 2)
A_FREE = reduced_from_expression("xi2^2", 2)
A_MODEL = reduced_from_expression("x2 + xi2^2", 2)

T_GRID = np.linspace(-0.2, 0.2, 9)
X_GRID = np.linspace(-0.4, 0.4, 7).reshape(-1, 1)
NU_GRID = np.linspace(-0.04, 0.04, 5)


def model_phase(t, xbar, nu):
    # solves d_t phi = xbar + (d_xbar phi)^2, phi(0) = xbar nu (checked by hand)
    return xbar * nu + xbar * t + nu**2 * t + nu * t**2 + t**3 / 3.0


# --- solve_phase -------------------------------------------------------------


def test_phase_constant_symbol():
    table = solve_phase(A_ZERO, [0.0], T_GRID, X_GRID, NU_GRID, tol=1e-12)
    for k, nu in enumerate(table.nu_values):
        want = np.outer(np.ones_like(T_GRID), X_GRID[:, 0] * nu)
        assert np.max(np.abs(table.values[k] - want)) < 1e-12
    assert not table.caustic.any()


def test_phase_free_quadratic():
    table = solve_phase(A_FREE, [0.3], T_GRID, X_GRID, nu_values=[0.25, 0.3, 0.35], tol=1e-12)
    for k, nu in enumerate(table.nu_values):
        want = X_GRID[:, 0][None, :] * nu + T_GRID[:, None] * nu**2
        assert np.max(np.abs(table.values[k] - want)) < 1e-10
    assert hj_residual_max(table, A_FREE) < 1e-8


def test_phase_model_matches_closed_form_and_residual():
    table = solve_phase(A_MODEL, [0.0], T_GRID, X_GRID, NU_GRID, tol=1e-12)
    for k, nu in enumerate(table.nu_values):
        want = model_phase(T_GRID[:, None], X_GRID[:, 0][None, :], nu)
        assert np.max(np.abs(table.values[k] - want)) < 1e-10
    assert hj_residual_max(table, A_MODEL) < 1e-6
    assert table.jac_min > 0.9  # the model flow map is a shear, det = 1


def test_phase_initial_condition_exact():
    table = solve_phase(A_MODEL, [0.02], T_GRID, X_GRID, nu_values=[0.02], tol=1e-10)
    i0 = int(np.argmin(np.abs(table.t_values)))
    assert np.array_equal(table.values[0, i0, :], X_GRID[:, 0] * 0.02)


def test_phase_caustic_flagged_not_fatal():
    # a = xbar^2 + nu^2 focuses: det d xbar / d xbar0 = cos(2t) vanishes at pi/4
    a = reduced_from_expression("x2^2 + xi2^2", 2)
    t = np.array([0.0, 0.2, 0.4, 0.6, np.pi / 4])
    table = solve_phase(a, [0.0], t, np.array([[0.0]]), nu_values=[0.0], tol=1e-10)
    assert not table.caustic[0, :4, 0].any()
    assert table.caustic[0, 4, 0]
    assert table.jac_min < 1e-4


def test_phase_xibar_length_validation():
    with pytest.raises(ValueError):
        solve_phase(A_MODEL, [0.0, 0.0], T_GRID, X_GRID)


# --- fold quantities ---------------------------------------------------------


def test_closed_quantities_model():
    d3_tnn, d3_ttn = phase_fold_quantities_closed(A_MODEL, [0.0, 0.0], [0.0])
    assert d3_tnn == pytest.approx(2.0, abs=1e-12)
    assert d3_ttn == pytest.approx(2.0, abs=1e-12)


def test_closed_quantities_model_n3():
    a = reduced_from_expression("x3 + xi2^2 + xi3^2", 3)
    d3_tnn, d3_ttn = phase_fold_quantities_closed(a, [0.0, 0.0, 0.0], [0.0, 0.0])
    assert d3_tnn == pytest.approx(2.0, abs=1e-12)
    assert d3_ttn == pytest.approx(2.0, abs=1e-12)


def test_closed_quantities_flat_elliptic():
    a = ImplicitReducedSymbol(builtin_symbol("flat-elliptic", 2), tau_seed=1.0)
    d3_tnn, d3_ttn = phase_fold_quantities_closed(a, [0.1, -0.2], [0.0])
    assert d3_tnn == pytest.approx(-1.0, abs=1e-9)
    assert d3_ttn == pytest.approx(0.0, abs=1e-9)


def test_closed_quantities_degenerate_a():
    a = reduced_from_expression("x2", 2)
    d3_tnn, d3_ttn = phase_fold_quantities_closed(a, [0.0, 0.0], [0.0])
    assert d3_tnn == 0.0
    assert classify_projections(d3_tnn, d3_ttn)[0] == "Degenerate"


def test_closed_quantities_reject_unnormalized_base():
    with pytest.raises(NormalizationError):
        phase_fold_quantities_closed(A_MODEL, [0.0, 0.0], [0.3])


@pytest.mark.parametrize(
    "a,want_tnn,want_ttn",
    [
        (A_MODEL, 2.0, 2.0),
        (A_FREE, 2.0, 0.0),
        (A_ZERO, 0.0, 0.0),
    ],
    ids=["model", "free", "zero"],
)
def test_numeric_quantities_match_closed(a, want_tnn, want_ttn):
    offsets = 1e-2 * np.arange(-2, 3)
    table = solve_phase(a, [0.0], offsets, np.array([[0.0]]), nu_values=offsets, tol=1e-12)
    d3_tnn, d3_ttn = phase_fold_quantities_numeric(table, base_xbar=[0.0])
    assert d3_tnn == pytest.approx(want_tnn, abs=2e-4)
    assert d3_ttn == pytest.approx(want_ttn, abs=2e-4)


def test_numeric_quantities_flat_elliptic_vs_closed():
    a = ImplicitReducedSymbol(builtin_symbol("flat-elliptic", 2), tau_seed=1.0)
    offsets = 1e-2 * np.arange(-2, 3)
    table = solve_phase(a, [0.0], offsets, np.array([[0.0]]), nu_values=offsets, tol=1e-12)
    d3_tnn, d3_ttn = phase_fold_quantities_numeric(table, base_xbar=[0.0])
    closed = phase_fold_quantities_closed(a, [0.0, 0.0], [0.0])
    assert d3_tnn == pytest.approx(closed[0], rel=1e-3)
    assert abs(d3_ttn - closed[1]) < 1e-3


def test_numeric_quantities_insufficient_stencil():
    offsets = 1e-2 * np.arange(-1, 2)
    table = solve_phase(A_MODEL, [0.0], offsets, np.array([[0.0]]), nu_values=offsets)
    with pytest.raises(EikonalError, match="stencil"):
        phase_fold_quantities_numeric(table, base_xbar=[0.0])


# --- classify_fold_map --------------------------------------------------------


def test_classify_identity_nondegenerate():
    jet = MapJet(np.eye(2), np.zeros(2))
    assert classify_fold_map(jet).kind == "Nondegenerate"


def test_classify_simple_fold():
    # F(x, y) = (x, y^2) at y = 0: det dF = 2y, kernel d_y, D_v det = 2
    jet = MapJet(np.array([[1.0, 0.0], [0.0, 0.0]]), np.array([0.0, 2.0]))
    got = classify_fold_map(jet)
    assert got.kind == "Fold"
    assert abs(got.transversality) == pytest.approx(2.0)


def test_classify_cubic_degenerate():
    # F(x, y) = (x, y^3) at y = 0: det dF = 3y^2 vanishes to second order
    jet = MapJet(np.array([[1.0, 0.0], [0.0, 0.0]]), np.zeros(2))
    assert classify_fold_map(jet).kind == "Degenerate"


def test_classify_rank_deficit():
    jet = MapJet(np.zeros((2, 2)), np.array([1.0, 1.0]))
    got = classify_fold_map(jet)
    assert got.kind == "Degenerate"
    assert "rank" in got.reason


def test_classify_invariant_under_coordinate_permutations():
    base = MapJet(np.array([[1.0, 0.0], [0.3, 0.0]]), np.array([0.1, 2.0]))
    kind = classify_fold_map(base).kind
    P = np.array([[0.0, 1.0], [1.0, 0.0]])
    for Pout in (np.eye(2), P):
        for Pin in (np.eye(2), P):
            jet = MapJet(Pout @ base.dF @ Pin, Pin.T @ base.det_gradient)
            assert classify_fold_map(jet).kind == kind


# --- projections and the consistency triangle ---------------------------------


def test_projection_classification_examples():
    assert classify_projections(2.0, 2.0) == ("Fold", "Fold")
    assert classify_projections(2.0, 0.0) == ("Fold", "Degenerate")
    assert classify_projections(0.0, 0.0) == ("Degenerate", "Degenerate")


def test_fold_report_model():
    a = ImplicitReducedSymbol(builtin_symbol("model-fold", 2))
    report = fold_report(a, [0.0, 0.0], [0.0])
    assert report.pi_left == "Fold"
    assert report.pi_right == "Fold"
    assert report.d3_tnn == pytest.approx(2.0, abs=1e-10)
    assert report.d3_ttn == pytest.approx(2.0, abs=1e-10)
    assert report.e0 == pytest.approx(1.0, abs=1e-12)
    assert report.rddot_from_phase == pytest.approx(-2.0, abs=1e-9)
    assert report.d3_tnn_numeric == pytest.approx(2.0, rel=1e-3)
    assert report.d3_ttn_numeric == pytest.approx(2.0, rel=1e-3)
    assert "numeric-HJ" in report.methods
    rdot, rddot = r_derivatives(
        builtin_symbol("model-fold", 2),
        parse_base_function("x2", 2),
        PhasePoint([0.0, 0.0], [0.0, 0.0]),
    )
    assert rdot == pytest.approx(0.0, abs=1e-12)
    assert report.rddot_from_phase == pytest.approx(rddot, rel=1e-3)


def test_fold_report_flat_elliptic_negative_control():
    a = ImplicitReducedSymbol(builtin_symbol("flat-elliptic", 2), tau_seed=1.0)
    report = fold_report(a, [0.0, 0.0], [0.0])
    assert report.pi_left == "Fold"
    assert report.pi_right == "Degenerate"
    assert abs(report.d3_ttn_numeric) < 1e-3


def test_consistency_triangle_perturbed_symbol():
    # independent routes: -e0 * d3_ttn from jets of a vs iterated brackets of p
    p = parse_symbol("xi1 - x2 - xi2^2 - 0.4 * x1 * xi2", 2)
    a = ImplicitReducedSymbol(p)
    report = fold_report(a, [0.0, 0.0], [0.0], numeric=False)
    _, rddot = r_derivatives(p, parse_base_function("x2", 2), PhasePoint([0.0, 0.0], [0.0, 0.0]))
    assert rddot == pytest.approx(-2.4, abs=1e-12)
    assert report.rddot_from_phase == pytest.approx(rddot, rel=1e-12)


def test_fold_quantities_gauge_invariant():
    plain = ImplicitReducedSymbol(builtin_symbol("model-fold", 2))
    gauged = ImplicitReducedSymbol(parse_symbol("(1 + x1^2 / 4 + xi1^2 / 8) * (xi1 - x2 - xi2^2)", 2))
    q_plain = phase_fold_quantities_closed(plain, [0.0, 0.0], [0.0])
    q_gauged = phase_fold_quantities_closed(gauged, [0.0, 0.0], [0.0])
    assert q_plain == pytest.approx(q_gauged, abs=1e-9)


def test_fold_report_requires_t0_base():
    with pytest.raises(NormalizationError):
        fold_report(A_MODEL, [0.5, 0.0], [0.0], numeric=False)


# --- oscillatory phase projections ---------------------------------------------


def test_cubic_oscillatory_phase_is_double_fold():
    psi = parse_base_function("(x1 - x2)^3 / 3", 2)
    left, right = oscillatory_phase_projections(psi, 0.3, 0.3)
    assert classify_fold_map(left).kind == "Fold"
    assert classify_fold_map(right).kind == "Fold"


def test_bilinear_oscillatory_phase_nondegenerate():
    psi = parse_base_function("-(x1 * x2)", 2)
    left, right = oscillatory_phase_projections(psi, 0.1, -0.2)
    assert classify_fold_map(left).kind == "Nondegenerate"
    assert classify_fold_map(right).kind == "Nondegenerate"
