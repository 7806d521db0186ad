import numpy as np
import pytest

from qmlab.flow import (
    FlowError,
    integrate_flow,
    observable_along_flow,
    r_derivatives,
    trajectory_to_csv,
)
from qmlab.symbols import PhasePoint, builtin_symbol, parse_base_function, parse_symbol, poisson_bracket

MODEL2 = builtin_symbol("model-fold", 2)
FLAT2 = builtin_symbol("flat-elliptic", 2)
ORIGIN2 = PhasePoint([0.0, 0.0], [0.0, 0.0])


def test_model_flow_matches_closed_form():
    # closed form from the folding model: t=s, y'=0, r=-s^2, tau=0, eta'=0, nu=s
    p = builtin_symbol("model-fold", 3)
    init = PhasePoint(np.zeros(3), np.zeros(3))
    traj = integrate_flow(p, init, (0.0, 1.0), tol=1e-12)
    s = traj.s
    expected = np.stack([s, np.zeros_like(s), -(s**2), np.zeros_like(s), np.zeros_like(s), s], axis=1)
    assert np.max(np.abs(traj.states - expected)) < 1e-8
    assert traj.max_drift <= 10 * 1e-12 * (1 + 1.0)


def test_flat_elliptic_straight_line():
    init = PhasePoint([0.0, 0.0], [1.0, 0.0])
    traj = integrate_flow(FLAT2, init, (0.0, 0.5), tol=1e-12)
    expected_x = np.stack([2 * traj.s, np.zeros_like(traj.s)], axis=1)
    assert np.max(np.abs(traj.states[:, :2] - expected_x)) < 1e-9
    assert np.max(np.abs(traj.states[:, 2:] - np.array([1.0, 0.0]))) < 1e-9


def test_degenerate_span():
    traj = integrate_flow(MODEL2, ORIGIN2, (0.0, 0.0))
    assert len(traj) == 1
    assert traj.s[0] == 0.0
    assert np.allclose(traj.states[0], 0.0)


def test_negative_span_and_time_reversal():
    init = PhasePoint([0.2, -0.1], [0.05, 0.3])
    tol = 1e-11
    fwd = integrate_flow(MODEL2, init, (0.0, 1.0), tol=tol)
    end = fwd.point(len(fwd) - 1)
    back = integrate_flow(MODEL2, end, (1.0, 0.0), tol=tol)
    final = back.states[-1]
    start = np.concatenate([init.x, init.xi])
    assert np.max(np.abs(final - start)) <= 100 * tol


def test_hamiltonian_conservation_random_inits():
    rng = np.random.default_rng(7)
    for p in (MODEL2, FLAT2):
        for _ in range(3):
            init = PhasePoint(rng.uniform(-0.5, 0.5, 2), rng.uniform(-0.5, 0.5, 2))
            traj = integrate_flow(p, init, (0.0, 2.0), tol=1e-10)
            assert traj.max_drift <= 10 * 1e-10 * (1 + 2.0)


def test_observable_conservation_and_model_rows():
    p = builtin_symbol("model-fold", 3)
    init = PhasePoint(np.zeros(3), np.zeros(3))
    traj = integrate_flow(p, init, (0.0, 1.0), tol=1e-12)

    along_p = observable_along_flow(traj, p)
    assert max(abs(v) for _, v in along_p) <= 1e-10

    r = parse_base_function("x3", 3)
    along_r = observable_along_flow(traj, r)
    assert max(abs(v + s**2) for s, v in along_r) < 1e-8

    nu = parse_symbol("xi3", 3)
    along_nu = observable_along_flow(traj, nu)
    assert max(abs(v - s) for s, v in along_nu) < 1e-8


def test_observable_dimension_mismatch():
    traj = integrate_flow(MODEL2, ORIGIN2, (0.0, 0.1))
    with pytest.raises(ValueError):
        observable_along_flow(traj, builtin_symbol("model-fold", 3))


def test_derivative_along_flow_matches_bracket():
    # d/ds g(x(s), xi(s)) equals {p, g} on the trajectory
    g = parse_symbol("x1 * xi2 + x2^2", 2)
    bracket = poisson_bracket(MODEL2, g)
    init = PhasePoint([0.1, 0.2], [0.0, -0.3])
    traj = integrate_flow(MODEL2, init, (0.0, 1.0), tol=1e-12, sample_count=2001)
    values = np.array([v for _, v in observable_along_flow(traj, g)])
    ds = traj.s[1] - traj.s[0]
    fd = (values[2:] - values[:-2]) / (2 * ds)
    bracket_vals = np.array([bracket(traj.point(k)) for k in range(1, len(traj) - 1)])
    rel = np.abs(fd - bracket_vals) / np.maximum(np.abs(bracket_vals), 1.0)
    assert np.max(rel) < 1e-5


@pytest.mark.parametrize(
    "p_text,r_text,x,xi,expected",
    [
        ("xi1 - x2 - xi2^2", "x2", [0.0, 0.0], [0.0, 0.0], (0.0, -2.0)),
        ("xi1^2 + xi2^2 - 1", "x2", [0.0, 0.0], [1.0, 0.0], (0.0, 0.0)),
        ("xi1^2 + xi2^2 - 1", "x2 - x1^2 / 2", [0.0, 0.0], [1.0, 0.0], (0.0, -4.0)),
    ],
)
def test_r_derivatives_examples(p_text, r_text, x, xi, expected):
    p = parse_symbol(p_text, 2)
    r = parse_base_function(r_text, 2)
    rdot, rddot = r_derivatives(p, r, PhasePoint(x, xi))
    assert rdot == pytest.approx(expected[0], abs=1e-12)
    assert rddot == pytest.approx(expected[1], abs=1e-12)


def test_r_derivatives_match_flow_derivatives():
    p = parse_symbol("xi1 - x2 - xi2^2 + x1 * xi2 / 4", 2)
    r = parse_base_function("x2 - x1^2 / 3", 2)
    pt = PhasePoint([0.1, -0.2], [0.3, 0.15])
    rdot, rddot = r_derivatives(p, r, pt)

    back = integrate_flow(p, pt, (0.0, -0.05), tol=1e-12, sample_count=251)
    fwd = integrate_flow(p, pt, (0.0, 0.05), tol=1e-12, sample_count=251)
    s = np.concatenate([back.s[::-1], fwd.s[1:]])
    rvals = np.array(
        [v for _, v in observable_along_flow(back, r)][::-1]
        + [v for _, v in observable_along_flow(fwd, r)][1:]
    )
    coeffs = np.polyfit(s, rvals, 4)
    got_rdot, got_rddot = coeffs[-2], 2.0 * coeffs[-3]
    assert abs(got_rdot - rdot) / max(abs(rdot), 1.0) < 1e-5
    assert abs(got_rddot - rddot) / max(abs(rddot), 1.0) < 1e-5


def test_tolerance_validation_and_failure():
    with pytest.raises(ValueError):
        integrate_flow(MODEL2, ORIGIN2, (0.0, 1.0), tol=0.0)
    # blow-up inside the span surfaces as FlowError or domain error
    p = parse_symbol("xi1 + 1 / (1 - x1)", 2)
    with pytest.raises(Exception):
        integrate_flow(p, PhasePoint([0.0, 0.0], [1.0, 0.0]), (0.0, 5.0), tol=1e-10)


def test_csv_export(tmp_path):
    traj = integrate_flow(MODEL2, ORIGIN2, (0.0, 0.3), sample_count=11)
    path = tmp_path / "traj.csv"
    trajectory_to_csv(traj, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "s,x1,x2,xi1,xi2,p_drift"
    assert len(lines) == 12
    first = lines[1].split(",")
    assert float(first[0]) == 0.0
    assert all(abs(float(v)) < 1e-15 for v in first[1:])
