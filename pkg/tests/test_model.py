from __future__ import annotations

import csv

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from contact_hjb.errors import ModelError, RangeError
from contact_hjb.model import (
    DualLagrangian,
    QuadraticContactHamiltonian,
    QuadraticLagrangian,
    TabulatedHamiltonian,
    TabulatedLagrangian,
    check_convexity,
    check_coercivity,
    hamiltonian_eval,
    lagrangian,
    lagrangian_eval,
    legendre_transform,
    validate_lipschitz,
)


@pytest.fixture
def e1():
    return QuadraticContactHamiltonian("-3*u", "0.5*x^2", lam=3.0)


def test_hamiltonian_value(e1):
    # -3*0.5 + 0.5^2/2 + 1/2
    assert hamiltonian_eval(e1, 1.0, 0.5, 0.5) == pytest.approx(-0.875)


def test_lagrangian_value(e1):
    # evaluated in the fixed order -g + v^2/(2a) - V
    assert lagrangian_eval(lagrangian(e1), 1.0, 0.5, 0.5) == 1.5 + 0.125 - 0.5


def test_lambda_estimated_when_missing():
    assert QuadraticContactHamiltonian("-3*u").lam == pytest.approx(3.0)
    assert QuadraticContactHamiltonian("sin(u)").lam == pytest.approx(1.0, abs=1e-4)


def test_invalid_models():
    with pytest.raises(ModelError):
        QuadraticContactHamiltonian("x*u")
    with pytest.raises(ModelError):
        QuadraticContactHamiltonian("u", "u")
    with pytest.raises(ModelError):
        QuadraticContactHamiltonian(a=-1.0)
    with pytest.raises(ModelError):
        QuadraticContactHamiltonian(lam=-1.0)


def test_torus_model_uses_y():
    H = QuadraticContactHamiltonian("-u", "cos(x)*cos(y)", lam=1.0, dim=2)
    x = np.array([[0.0, 0.0], [np.pi, 0.0]])
    np.testing.assert_allclose(H.potential(x), [1.0, -1.0])
    p = np.array([[1.0, 1.0], [0.0, 0.0]])
    np.testing.assert_allclose(H.evaluate(x, 0.0, p), [2.0, -1.0])


def test_lipschitz_report(e1):
    rep = validate_lipschitz(e1, 21)
    assert rep.passed and rep.max_slope == pytest.approx(3.0)
    bad = QuadraticContactHamiltonian("u^2", lam=1.0)
    rep = validate_lipschitz(bad, 21)
    assert not rep.passed
    assert rep.max_slope > 1.0 and set(rep.witness) == {"x", "p", "u", "u2"}


def test_strict_monotonicity(e1):
    assert e1.strictly_decreasing_in_u()
    assert not QuadraticContactHamiltonian("3*u", lam=3.0).strictly_decreasing_in_u()
    assert QuadraticLagrangian(e1).strictly_increasing_in_u()
    assert not DualLagrangian(QuadraticLagrangian(e1)).strictly_increasing_in_u()


def test_dual_lagrangian_flips_arguments(e1):
    L = lagrangian(e1)
    D = DualLagrangian(L)
    assert D.value(0.3, 0.2, 0.7) == L.value(0.3, -0.2, -0.7)


def test_coercivity_and_convexity(e1):
    check_convexity(e1)
    assert check_coercivity(e1)


def test_legendre_matches_closed_form(e1):
    v = np.linspace(-4, 4, 81)
    p = np.linspace(-8, 8, 1601)
    row = legendre_transform(e1, 0.5, 0.25, v, p)
    exact = lagrangian(e1).value(0.5, 0.25, v)
    assert not row.edge_active.any()
    np.testing.assert_allclose(row.values, exact, atol=1e-12)
    np.testing.assert_allclose(row.argmax_p, v, atol=1e-12)


def test_legendre_flags_edge(e1):
    row = legendre_transform(e1, 0.0, 0.0, np.array([0.0, 7.9, 9.0]), np.linspace(-8, 8, 161))
    assert row.edge_active.tolist() == [False, False, True]
    assert row.values[2] == np.inf and np.isfinite(row.raw[2])


def test_legendre_rejects_asymmetric_grid(e1):
    with pytest.raises(ModelError):
        legendre_transform(e1, 0.0, 0.0, np.zeros(1), np.linspace(-1, 2, 11))


@given(st.floats(-1, 1), st.floats(-2, 2), st.floats(-3, 3))
def test_fenchel_young(x, u, v):
    H = QuadraticContactHamiltonian("-2*u + 0.3*sin(u)", "cos(3*x)", a=0.7, lam=2.3)
    L = lagrangian(H)
    p = np.linspace(-5, 5, 41)
    assert np.all(L.value(x, u, v) + H.evaluate(x, u, p) >= p * v - 1e-12)


def write_table(path, fn, xs, us, ps):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "u", "p", "H"])
        for x in xs:
            for u in us:
                for p in ps:
                    w.writerow([x, u, p, fn(x, u, p)])


@pytest.fixture
def abs_table(tmp_path):
    path = tmp_path / "h.csv"
    xs = np.linspace(-0.75, 1.0, 8)
    write_table(path, lambda x, u, p: -u + abs(p), xs, [-2.0, 0.0, 2.0], np.linspace(-4, 4, 9))
    return path


def test_tabulated_evaluation(abs_table):
    H = TabulatedHamiltonian.from_csv(abs_table, lam=1.0)
    assert H.p_max == 4.0
    assert H.evaluate(0.1, 0.5, -1.5) == pytest.approx(-0.5 + 1.5)
    # u is extrapolated linearly
    assert H.evaluate(0.1, 3.0, 0.0) == pytest.approx(-3.0)
    # x is periodic
    assert H.evaluate(-1.9, 0.0, 2.0) == pytest.approx(H.evaluate(0.1, 0.0, 2.0))
    with pytest.raises(RangeError):
        H.evaluate(0.0, 0.0, 4.5)
    assert H.strictly_decreasing_in_u()


def test_tabulated_legendre_domain(abs_table):
    H = TabulatedHamiltonian.from_csv(abs_table, lam=1.0)
    v = np.linspace(-2, 2, 9)
    L = TabulatedLagrangian(H, v, p_count=81)
    vals = L.value(0.3, 0.0, v)
    inside = np.abs(v) <= 1.0
    # L = u on |v| <= 1 (the kink at |v| = 1 ties and goes to p = 0), +inf outside
    np.testing.assert_allclose(vals[inside], 0.0, atol=1e-12)
    assert np.all(np.isinf(vals[~inside]))
    assert L.value(0.3, 1.0, 0.5) == pytest.approx(1.0)
    assert L.strictly_increasing_in_u()


def test_tabulated_needs_velocity_grid(abs_table):
    with pytest.raises(ModelError):
        lagrangian(TabulatedHamiltonian.from_csv(abs_table, lam=1.0))


def test_tabulated_incomplete_and_bad_header(tmp_path):
    path = tmp_path / "h.csv"
    path.write_text("x,u,p,H\n0,0,-1,1\n0,0,0,0\n0,0,1,1\n0,1,0,0\n")
    with pytest.raises(ModelError):
        TabulatedHamiltonian.from_csv(path, lam=1.0)
    path.write_text("x,u,q,H\n0,0,0,0\n")
    with pytest.raises(ModelError):
        TabulatedHamiltonian.from_csv(path, lam=1.0)


def test_nonconvex_table_reports_triple(tmp_path):
    path = tmp_path / "h.csv"
    write_table(path, lambda x, u, p: -u - p * p, [0.0, 1.0], [0.0, 1.0], np.linspace(-2, 2, 5))
    H = TabulatedHamiltonian.from_csv(path, lam=1.0)
    with pytest.raises(ModelError, match="p triple"):
        check_convexity(H)
