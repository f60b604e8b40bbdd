import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rvm.kinematics import (
    angle_between,
    angle_to_axis_pm,
    antiparallel_angle,
    azimuth,
    flux_density,
    k_good,
    k_good_sq,
    lorentz_force,
    one_minus_vhat_sq,
    one_plus_vhat_dot,
    p0,
    p_hat,
    singular_kernel,
    split_lorentz_force,
    transverse_radius,
    unit,
)

E1, E2, E3 = np.eye(3)
finite = st.floats(-1e3, 1e3, allow_nan=False)
vec = arrays(float, 3, elements=finite)
nonzero_vec = vec.filter(lambda v: np.linalg.norm(v) > 1e-3)


def test_rest_momentum():
    assert p0(np.zeros(3)) == 1.0
    assert np.array_equal(p_hat(np.zeros(3)), np.zeros(3))


def test_p_hat_examples():
    p = np.array([0.0, 0.0, np.sqrt(3.0)])
    assert p0(p) == pytest.approx(2.0, rel=1e-15)
    assert np.allclose(p_hat(p), [0, 0, np.sqrt(3.0) / 2], rtol=1e-15, atol=0)
    q = np.array([3.0, 4.0, 0.0])
    assert p0(q) == pytest.approx(np.sqrt(26.0), rel=1e-15)
    assert np.allclose(p_hat(q), q / np.sqrt(26.0), rtol=1e-15)


def test_angle_examples():
    a = angle_between(E3, E3)
    assert a.angle == 0 and a.angle_pm == 0
    a = angle_between(E1, E3)
    assert a.angle == pytest.approx(np.pi / 2) and a.angle_pm == pytest.approx(np.pi / 2)
    a = angle_between(E3, -E3)
    assert a.angle == pytest.approx(np.pi) and a.angle_pm == pytest.approx(0.0)


def test_angle_clamps_roundoff():
    u = unit(np.array([1.0, 1e-9, 0.0]))
    a = angle_between(u, u * (1 + 1e-16))
    assert np.isfinite(a.angle)


def test_singular_kernel_examples():
    p = np.array([0.0, 0.0, np.sqrt(3.0)])
    assert singular_kernel(np.zeros(3), E1, 1.0) == 1.0
    assert singular_kernel(p, -E3, 1.0) == pytest.approx(1.0 / (1.0 - np.sqrt(3.0) / 2), rel=1e-13)
    assert singular_kernel(p, -E3, 1.0) == pytest.approx(7.4641016151377544, rel=1e-13)
    assert singular_kernel(p, E1, 1.0) == pytest.approx(1.0, rel=1e-15)
    with pytest.raises(ValueError):
        singular_kernel(p, E1, 3.0)


def test_k_good_examples():
    E, B = E1, E2
    assert k_good(np.zeros(3), np.zeros(3), E3) == 0.0
    assert k_good_sq(E, B, E3) == pytest.approx(8.0)
    assert flux_density(E, B, E3) == pytest.approx(2.0)


def test_lorentz_force_examples():
    E = np.array([1.0, 0.0, 0.0])
    assert np.array_equal(lorentz_force(E, np.zeros(3), np.array([1.0, 2.0, 3.0])), E)
    B = np.array([0.0, 0.0, 2.0])
    assert np.allclose(lorentz_force(np.zeros(3), B, np.array([0.0, 0.0, 5.0])), 0.0)
    out = lorentz_force(E, E3, np.array([0.0, np.sqrt(3.0), 0.0]))
    assert np.allclose(out, [1.0 + np.sqrt(3.0) / 2, 0.0, 0.0], rtol=1e-15)


def _ope_reference(p, omega):
    mp = mpmath.mp
    mp.dps = 50
    pv = [mpmath.mpf(float(c)) for c in p]
    wv = [mpmath.mpf(float(c)) for c in omega]
    wn = mpmath.sqrt(sum(c * c for c in wv))
    e = mpmath.sqrt(1 + sum(c * c for c in pv))
    return float(1 + sum(a * b for a, b in zip(pv, wv)) / (wn * e))


@pytest.mark.parametrize("radius, tilt", [(1e3, 1e-6), (1e6, 1e-9), (10.0, 0.0), (1e-3, 0.3)])
def test_one_plus_vhat_dot_near_singularity(radius, tilt):
    d = unit(np.array([0.3, -0.2, 0.9]))
    omega = unit(-d + tilt * unit(np.cross(d, E1)))
    p = radius * d
    assert one_plus_vhat_dot(p, omega) == pytest.approx(_ope_reference(p, omega), rel=1e-12)


def test_azimuth_range_and_convention():
    assert azimuth(np.array([0.0, 0.0, 5.0])) == 0.0
    assert azimuth(np.array([0.0, -1.0, 0.0])) == pytest.approx(1.5 * np.pi)
    assert azimuth(np.array([1.0, -1e-300, 0.0])) < 2 * np.pi


def test_unit_rejects_zero():
    with pytest.raises(ValueError):
        unit(np.zeros(3))


@given(vec)
def test_p_hat_strictly_subluminal(p):
    assert p0(p) >= 1.0
    assert np.linalg.norm(p_hat(p)) < 1.0


@given(vec)
def test_one_minus_vhat_sq_identity(p):
    assert one_minus_vhat_sq(p) * p0(p) ** 2 == pytest.approx(1.0, rel=1e-12)


@given(vec, nonzero_vec)
def test_basic_inequalities(p, w):
    omega = unit(w)
    ope = one_plus_vhat_dot(p, omega)
    v = p_hat(p)
    slack = 1e-12
    assert np.all((omega + v) ** 2 <= 2 * ope + slack)
    assert np.sum(np.cross(v, omega) ** 2) <= 2 * ope * (1 + slack) + slack
    assert 1.0 / ope <= 2 * p0(p) ** 2 * (1 + 1e-12)


@given(nonzero_vec, nonzero_vec)
def test_singularity_by_angle(p, w):
    omega = unit(w)
    alpha = antiparallel_angle(p, omega)
    if alpha > 1e-150:
        bound = max(1.0, 0.5 * np.pi**2 / alpha**2)
        assert 1.0 / one_plus_vhat_dot(p, omega) <= bound * (1 + 1e-12)


@given(nonzero_vec)
def test_momentum_by_axis_angle(p):
    beta = angle_to_axis_pm(p)
    if beta > 0:
        assert np.linalg.norm(p) <= 0.5 * np.pi * transverse_radius(p) / beta * (1 + 1e-12)
    assert 0.0 <= beta <= np.pi / 2


@given(nonzero_vec)
def test_angle_pm_folding(w):
    u = unit(w)
    a = angle_between(u, E3)
    assert a.angle_pm == pytest.approx(min(a.angle, np.pi - a.angle))
    assert 0.0 <= a.angle_pm <= np.pi / 2


@settings(max_examples=200)
@given(vec, nonzero_vec, vec, vec)
def test_lorentz_split_recombines_and_bounds(p, w, E, B):
    omega = unit(w)
    good, bad = split_lorentz_force(E, B, p, omega)
    F = lorentz_force(E, B, p)
    scale = 1.0 + np.linalg.norm(E) + np.linalg.norm(B)
    assert np.allclose(good + bad, F, rtol=0, atol=1e-12 * scale)
    ope = one_plus_vhat_dot(p, omega)
    assert np.linalg.norm(bad) <= 2 * np.sqrt(2) * np.sqrt(ope) * np.linalg.norm(B) + 1e-12 * scale
    good_bound = abs(omega @ E) + abs(omega @ B) + np.linalg.norm(B + np.cross(omega, E))
    assert np.linalg.norm(good) <= good_bound + 1e-12 * scale


@given(vec, vec, nonzero_vec)
def test_flux_identity(E, B, w):
    omega = unit(w)
    scale = 0.5 * (E @ E + B @ B)
    assert abs(0.25 * k_good_sq(E, B, omega) - flux_density(E, B, omega)) <= 1e-12 * max(scale, 1e-300)
