"""Momentum-space geometry and the singular kernels of the light-cone integrals.

Natural units (m = c = 1). Vectors are numpy arrays whose trailing axis has
length 3, so every function here works on a single vector or on a batch.
The distinguished plane for the transverse radius and azimuth is {p3 = 0}.
"""
from typing import NamedTuple

import numpy as np

E3 = np.array([0.0, 0.0, 1.0])

# exponents of (1 + vhat.omega) that occur in the field representation
KERNEL_EXPONENTS = (0.5, 1.0, 1.5, 2.0)


class AngleResult(NamedTuple):
    angle: np.ndarray
    angle_pm: np.ndarray


def _dot(a, b):
    return np.sum(a * b, axis=-1)


def norm(v):
    return np.sqrt(_dot(v, v))


def unit(v):
    """Normalize ``v`` along the last axis (a Direction)."""
    v = np.asarray(v, dtype=float)
    n = norm(v)
    if np.any(n == 0):
        raise ValueError("cannot normalize a zero vector")
    return v / n[..., None]


def p0(p):
    p = np.asarray(p, dtype=float)
    return np.sqrt(1.0 + _dot(p, p))


def p_hat(p):
    """Relativistic velocity p / p0."""
    p = np.asarray(p, dtype=float)
    return p / p0(p)[..., None]


def one_minus_vhat_sq(p):
    # 1 - |p/p0|^2 without cancellation: (1 - |vhat|)(1 + |vhat|)
    p = np.asarray(p, dtype=float)
    e = p0(p)
    r = norm(p)
    return (1.0 + r / e) / (e * (e + r))


def one_plus_vhat_dot(p, omega):
    """1 + p_hat . omega, evaluated without cancellation near p_hat = -omega.

    omega is read as the exact direction omega / |omega|. On the branch
    p.omega < 0 this uses p0 (1 + p_hat.omega) = (1 + |p x omega|^2) / (p0 - p.omega),
    which keeps full relative accuracy up to |p| ~ 1e8.
    """
    p = np.asarray(p, dtype=float)
    omega = np.asarray(omega, dtype=float)
    e = p0(p)
    wn = norm(omega)
    pw = _dot(p, omega) / wn
    cross = np.cross(p, omega)
    num = 1.0 + _dot(cross, cross) / (wn * wn)
    with np.errstate(divide="ignore", invalid="ignore"):
        stable = num / (e * (e - pw))
    direct = 1.0 + pw / e
    return np.where(pw < 0.0, stable, direct)


def transverse_radius(p):
    p = np.asarray(p, dtype=float)
    return np.hypot(p[..., 0], p[..., 1])


def azimuth(p):
    """gamma(p) in [0, 2 pi); zero where the transverse radius vanishes."""
    p = np.asarray(p, dtype=float)
    g = np.arctan2(p[..., 1], p[..., 0])
    g = np.where(g < 0.0, g + 2.0 * np.pi, g)
    # arctan2 can round -tiny up to exactly 2 pi
    g = np.where(g >= 2.0 * np.pi, 0.0, g)
    return np.where(transverse_radius(p) > 0.0, g, 0.0)


def angle_between(u, v):
    """Angle between unit vectors and its +/- folded version in [0, pi/2]."""
    c = np.clip(_dot(np.asarray(u, float), np.asarray(v, float)), -1.0, 1.0)
    a = np.arccos(c)
    return AngleResult(a, np.minimum(a, np.pi - a))


def angle_to_axis_pm(p):
    """Angle between p/|p| and the +/- e3 axis, robust for nearly axial p."""
    p = np.asarray(p, dtype=float)
    a = np.arctan2(transverse_radius(p), np.abs(p[..., 2]))
    return a


def antiparallel_angle(p, omega):
    """Angle between p/|p| and -omega (atan2 form, accurate near zero)."""
    p = np.asarray(p, dtype=float)
    m = -np.asarray(omega, dtype=float)
    return np.arctan2(norm(np.cross(p, m)), _dot(p, m))


def singular_kernel(p, omega, a):
    """(1 + p_hat . omega)^(-a) for a in {1/2, 1, 3/2, 2}."""
    if float(a) not in KERNEL_EXPONENTS:
        raise ValueError(f"kernel exponent must be one of {KERNEL_EXPONENTS}, got {a}")
    return one_plus_vhat_dot(p, omega) ** (-float(a))


def k_good_sq(E, B, omega):
    """Squared good-component combination controlled by the cone flux."""
    E = np.asarray(E, dtype=float)
    B = np.asarray(B, dtype=float)
    omega = np.asarray(omega, dtype=float)
    eo = _dot(E, omega)
    bo = _dot(B, omega)
    u = E - np.cross(omega, B)
    w = B + np.cross(omega, E)
    return eo**2 + bo**2 + _dot(u, u) + _dot(w, w)


def k_good(E, B, omega):
    return np.sqrt(k_good_sq(E, B, omega))


def flux_density(E, B, omega):
    """Electromagnetic energy flux through the cone, 1/2(|E|^2+|B|^2) + omega.(E x B)."""
    E = np.asarray(E, dtype=float)
    B = np.asarray(B, dtype=float)
    return 0.5 * (_dot(E, E) + _dot(B, B)) + _dot(omega, np.cross(E, B))


def lorentz_force(E, B, p):
    return np.asarray(E, dtype=float) + np.cross(p_hat(p), B)


def split_lorentz_force(E, B, p, omega):
    """Split E + p_hat x B into a good part and a bad part.

    The good part only involves omega.E, omega.B and B + omega x E; the bad
    part is bounded by 2 sqrt(2) (1 + p_hat.omega)^(1/2) |B|.
    """
    E = np.asarray(E, dtype=float)
    B = np.asarray(B, dtype=float)
    omega = np.asarray(omega, dtype=float)
    v = p_hat(p)
    ope = one_plus_vhat_dot(p, omega)
    eo = _dot(omega, E)[..., None]
    bo = _dot(omega, B)[..., None]
    good = omega * eo - np.cross(omega, (np.cross(omega, E) + B) + bo * v)
    bad = omega * _dot(np.cross(omega, v), B)[..., None] + ope[..., None] * np.cross(omega, B)
    return good, bad
