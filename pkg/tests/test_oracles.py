import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from plap_lab import (PreconditionError, ValidationError,
                      ellipse_boundary_integrals, matrix_inequality_gap,
                      matrix_inequality_sweep, p_ball_constant, radial_exact,
                      radial_fd_solve)
from plap_lab.oracles import looser_inequality_gap, radial_lu_p


# ----------------------------------------------------------------- radial

def test_radial_exact_center_values():
    assert radial_exact(2, 2.0, 1.0).u(0.0) == pytest.approx(0.25)
    assert radial_exact(3, 2.0, 1.0).u(0.0) == pytest.approx(1 / 6)
    prof = radial_exact(2, 3.0, 1.0)
    assert prof.u(0.0) == pytest.approx(2 / (3 * np.sqrt(2)))
    assert prof.du(1.0) == pytest.approx(-1 / np.sqrt(2))


def test_radial_boundary_derivative_formula():
    # u'(R) = -(R/n)^{1/(p-1)}
    for n, p, R in [(2, 1.5, 1.0), (2, 4.0, 2.0), (4, 2.5, 0.7)]:
        prof = radial_exact(n, p, R)
        assert prof.du(R) == pytest.approx(-((R / n) ** (1 / (p - 1))), rel=1e-12)
        assert prof.u(R) == pytest.approx(0.0, abs=1e-14)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(2, 5), p=st.floats(1.1, 6.0), R=st.floats(0.3, 3.0))
def test_radial_profile_satisfies_ode(n, p, R):
    prof = radial_exact(n, p, R)
    r = np.linspace(R / 1000, R, 1000)
    assert np.abs(prof.ode_residual(r)).max() <= 1e-10


def test_p_ball_constant_values():
    assert p_ball_constant(2, 2.0, 1.0) == pytest.approx(0.125)
    assert p_ball_constant(2, 3.0, 1.0) == pytest.approx(0.23570226039551584)
    assert p_ball_constant(2, 2.0, 1e-8) < 1e-15


@settings(max_examples=40, deadline=None)
@given(n=st.integers(2, 4), p=st.floats(1.2, 5.0), R=st.floats(0.5, 2.0),
       frac=st.floats(0.01, 0.999))
def test_p_function_constant_along_radius(n, p, R, frac):
    # ((p-1)/p)|u'|^p + u/n is the same at every radius of the exact profile
    prof = radial_exact(n, p, R)
    r = frac * R
    value = (p - 1) / p * np.abs(prof.du(r)) ** p + prof.u(r) / n
    assert value == pytest.approx(p_ball_constant(n, p, R), rel=1e-12)


def test_radial_lu_p_vanishes_on_balls():
    for n, p in [(2, 2.0), (3, 2.0), (2, 3.0), (3, 4.0), (2, 1.5)]:
        prof = radial_exact(n, p, 1.0)
        r = np.linspace(0.05, 0.999, 500)
        assert np.abs(radial_lu_p(prof, r)).max() <= 1e-8


def test_radial_fd_matches_exact():
    for n, p in [(2, 2.0), (3, 4.0), (2, 1.5)]:
        fd = radial_fd_solve(n, p, 1.0, 10_000)
        exact = radial_exact(n, p, 1.0)
        r = np.linspace(0, 1, 500)
        assert np.abs(fd.u(r) - exact.u(r)).max() <= 1e-6


def test_radial_fd_boundary_slope_p15():
    fd = radial_fd_solve(2, 1.5, 1.0, 10_000)
    # u'(R) = -(R/n)^{1/(p-1)} = -(1/2)^2
    assert fd.du(1.0) == pytest.approx(-0.25, abs=1e-5)


def test_radial_fd_grid_precondition():
    with pytest.raises(PreconditionError):
        radial_fd_solve(2, 2.0, 1.0, 50)


# ----------------------------------------------------------------- ellipse

def test_ellipse_integrals_circle_degenerates():
    ei = ellipse_boundary_integrals(1.0, 1.0)
    assert ei.volume == pytest.approx(np.pi)
    assert ei.perimeter == pytest.approx(2 * np.pi)
    assert ei.inv_curvature_integral == pytest.approx(2 * np.pi)
    assert ei.h0 == pytest.approx(1.0)
    assert ei.max_curvature == 1.0 and ei.min_curvature == 1.0


def test_ellipse_integrals_two_one():
    ei = ellipse_boundary_integrals(2.0, 1.0)
    # int 1/H ds = (1/(ab)) ((3 pi/4)(a^4 + b^4) + (pi/2) a^2 b^2) = 7.375 pi
    assert ei.inv_curvature_integral == pytest.approx(7.375 * np.pi, rel=1e-10)
    assert ei.inv_curvature_integral >= 2 * ei.volume  # Heintze-Karcher
    assert ei.perimeter == pytest.approx(9.688448220547677, abs=1e-6)
    assert ei.h0 == pytest.approx(0.7709822125950201, rel=1e-8)
    assert ei.max_curvature == pytest.approx(2.0)
    assert ei.min_curvature == pytest.approx(0.25)


def test_ellipse_integrals_validation():
    with pytest.raises(ValidationError):
        ellipse_boundary_integrals(1.0, 2.0)


# ------------------------------------------------------ matrix inequality

def test_matrix_gap_hand_witnesses():
    # n=2, p=2, H=diag(1,2), g=e1: both sides equal 7
    gap = matrix_inequality_gap(2, 2.0, np.diag([1.0, 2.0]), np.array([1.0, 0.0]))
    assert abs(gap) <= 1e-12
    # n=3, p=2, H=diag(1,1,2), g=e1: LHS 8, RHS 7.5
    gap = matrix_inequality_gap(3, 2.0, np.diag([1.0, 1.0, 2.0]), np.array([1.0, 0.0, 0.0]))
    assert gap == pytest.approx(0.5, abs=1e-12)


@pytest.mark.parametrize("p", [1.2, 2.0, 3.0, 5.5])
def test_matrix_gap_identity_hessian(p):
    gap = matrix_inequality_gap(2, p, np.eye(2), np.array([1.0, 0.0]))
    assert abs(gap) <= 1e-12


def test_matrix_gap_preconditions():
    with pytest.raises(PreconditionError):
        matrix_inequality_gap(2, 2.0, np.eye(2), np.zeros(2))
    with pytest.raises(PreconditionError):
        matrix_inequality_gap(7, 2.0, np.eye(7), np.ones(7))
    with pytest.raises(PreconditionError):
        matrix_inequality_gap(2, 0.9, np.eye(2), np.ones(2))


@settings(max_examples=200, deadline=None)
@given(
    n=st.integers(2, 6),
    p=st.floats(1.05, 6.0),
    data=st.data(),
)
def test_matrix_gap_nonnegative_property(n, p, data):
    h = data.draw(arrays(float, (n, n), elements=st.floats(-3, 3)))
    g = data.draw(arrays(float, (n,), elements=st.floats(-2, 2)))
    if np.linalg.norm(g) < 1e-6:
        g = np.eye(n)[0]
    g = g / np.linalg.norm(g)
    assert matrix_inequality_gap(n, p, h, g) >= -1e-12
    assert looser_inequality_gap(n, p, h, g) >= -1e-12


def test_sweep_small_deterministic():
    a = matrix_inequality_sweep(samples=20_000, seed=11)
    b = matrix_inequality_sweep(samples=20_000, seed=11)
    assert a.min_gap == b.min_gap
    assert a.min_gap >= -1e-12
    assert a.min_gap_loose >= -1e-12
    assert a.samples == 20_000
    w = a.witness
    # the reported witness reproduces its gap through the scalar oracle
    assert matrix_inequality_gap(w.n, w.p, w.hess, w.gvec) == pytest.approx(w.gap, abs=1e-12)
