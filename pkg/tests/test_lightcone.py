import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rvm.kinematics import k_good_sq, one_minus_vhat_sq, one_plus_vhat_dot, p_hat
from rvm.lightcone import (
    GaussianBump,
    LinearPath,
    OscillatingPath,
    build_cone,
    cone_flux,
    gs_terms,
    omega_from_angles,
    pallard_integral,
    pallard_jacobian,
    pallard_jacobian_check,
)
from rvm.particles import Ensemble, deposit_energy_momentum
from rvm.simulator import History, Snapshot, run
from rvm.config import RunConfig

DIMS = (16, 16, 16)
DX = 1.0


def _uniform_history(E, B, times=(0.0, 2.0), particles=None):
    hist = History()
    for t in times:
        Ef = np.broadcast_to(np.asarray(E, float)[:, None, None, None], (3,) + DIMS).copy()
        Bf = np.broadcast_to(np.asarray(B, float)[:, None, None, None], (3,) + DIMS).copy()
        if particles is not None:
            eps, mom = deposit_energy_momentum(particles, DIMS, DX)
        else:
            eps, mom = np.zeros(DIMS), np.zeros((3,) + DIMS)
        hist.append(Snapshot(t, 0, Ef, Bf, np.zeros(DIMS), np.zeros((3,) + DIMS), eps, mom, DX,
                             particles=particles))
    return hist


def test_cone_measure_and_convergence():
    exact = 4 * np.pi / 3
    errs = [abs(build_cone(1.0, np.zeros(3), n, n, n).weights.sum() - exact) / exact
            for n in (16, 32, 64)]
    assert errs[-1] < 1e-3
    assert np.allclose(np.log2(np.array(errs[:-1]) / errs[1:]), 2.0, atol=0.1)


@given(st.floats(0.1, 5.0))
def test_cone_measure_scales_as_t_cubed(t):
    cone = build_cone(t, np.zeros(3), 32, 32, 32)
    assert cone.weights.sum() == pytest.approx(4 * np.pi * t**3 / 3, rel=1e-3)


def test_empty_and_invalid_cones():
    cone = build_cone(0.0, np.zeros(3), 8, 8, 8)
    assert cone.empty and cone.integrate(np.zeros(cone.shape)) == 0.0
    with pytest.raises(ValueError):
        build_cone(1.0, np.zeros(3), 4, 8, 8)
    with pytest.raises(ValueError, match="half the box"):
        build_cone(9.0, np.zeros(3), 8, 8, 8, lengths=np.full(3, 16.0))


def test_nodes_stay_within_one_period():
    L = np.full(3, 16.0)
    cone = build_cone(8.0, np.array([3.0, 4.0, 5.0]), 8, 8, 8, lengths=L)
    for k in range(cone.s.size):
        d = cone.points(k) - cone.x
        assert np.all(np.linalg.norm(d, axis=-1) <= 0.5 * L.min())


def test_kg_integral_closed_form():
    # E = e1, B = e2: K_g^2 = 4 + 4 omega_3, so int K_g^2 dsigma = 16 pi t^3 / 3
    cone = build_cone(1.0, np.zeros(3), 32, 32, 32)
    om = cone.omega
    E = np.broadcast_to([1.0, 0.0, 0.0], om.shape)
    B = np.broadcast_to([0.0, 1.0, 0.0], om.shape)
    vals = np.broadcast_to(k_good_sq(E, B, om), cone.shape)
    assert cone.integrate(vals) == pytest.approx(16 * np.pi / 3, rel=1e-3)
    fk, ff = cone_flux(_uniform_history([1, 0, 0], [0, 1, 0]), build_cone(1.0, np.full(3, 8.0), 32, 32, 32))
    assert fk == pytest.approx(4 * np.pi / 3, rel=1e-3) and ff == 0.0


def test_static_electric_flux_against_dense_oracle():
    hist = _uniform_history([1.0, 0.0, 0.0], [0.0, 0.0, 0.0])
    fk, ff = cone_flux(hist, build_cone(1.0, np.full(3, 8.0), 16, 16, 16))
    # independent oracle: 10x denser plain angular sum of 1/4 (|E.w|^2 + |E|^2 + |w x E|^2)
    n = 160
    th = (np.arange(n) + 0.5) * np.pi / n
    ph = (np.arange(2 * n) + 0.5) * np.pi / n
    T, PH = np.meshgrid(th, ph, indexing="ij")
    w1 = np.sin(T) * np.cos(PH)
    integrand = 0.25 * (w1**2 + 1.0 + (1 - w1**2))
    ang = np.sum(integrand * np.sin(T)) * (np.pi / n) ** 2
    oracle = ang / 3.0
    assert fk == pytest.approx(oracle, rel=1e-3)
    assert fk == pytest.approx(2 * np.pi / 3, rel=1e-3)
    assert ff == 0.0


def test_vacuum_flux_is_zero():
    sim = run(RunConfig(nx=8, ny=8, nz=8, steps=10).validate())
    assert cone_flux(sim.history, build_cone(2.0, np.full(3, 4.0), 8, 8, 8)) == (0.0, 0.0)


def test_short_history_names_earliest_time():
    hist = _uniform_history([0, 0, 0], [0, 0, 0], times=(1.0, 2.0))
    with pytest.raises(ValueError, match="earliest covered time is 1.0"):
        cone_flux(hist, build_cone(1.5, np.zeros(3), 8, 8, 8))


def test_flux_bounded_by_energy_on_simulation():
    cfg = RunConfig(nx=16, ny=16, nz=16, steps=20, snapshot_stride=5, distribution="two_stream",
                    n_particles=5000, density=0.05).validate()
    sim = run(cfg, store_particles=True)
    e0 = sim.history[0].total_energy()
    fk, ff = cone_flux(sim.history, build_cone(5.0, np.full(3, 8.0), 16, 16, 16))
    assert fk + ff <= e0 * 1.05


def test_gs_terms_without_particles_are_zero():
    hist = _uniform_history([1, 0, 0], [0, 1, 0], particles=Ensemble.empty())
    terms = gs_terms(hist, build_cone(1.0, np.full(3, 8.0), 8, 8, 8))
    for name in ("E_T", "B_T", "E_S1", "B_S1", "E_S2", "B_S2"):
        assert not np.any(getattr(terms, name))


def _direct_t_terms(cone, ens):
    """Node-by-node sum of the printed E_T, B_T kernels with the CIC weight."""
    L = np.array(DIMS) * DX
    ET, BT = np.zeros(3), np.zeros(3)
    for k in range(cone.s.size):
        r = cone.t - cone.s[k]
        for i in range(cone.theta.size):
            for j in range(cone.phi.size):
                om = omega_from_angles(cone.theta[i], cone.phi[j])
                y = cone.x + r * om
                for x, p, w in zip(ens.x, ens.p, ens.w):
                    d = x - y
                    d -= L * np.round(d / L)
                    shape = np.prod(np.maximum(0.0, 1 - np.abs(d) / DX)) / DX**3
                    if shape == 0:
                        continue
                    v = p_hat(p)
                    ope = one_plus_vhat_dot(p, om)
                    q = w * shape * cone.weights[k, i, j] / r**2
                    ET += q * -(om + v) * one_minus_vhat_sq(p) / ope**2
                    BT += q * np.cross(om, v) * one_minus_vhat_sq(p) / ope**2
    return ET, BT


def test_gs_terms_single_particle_matches_direct_sum():
    ens = Ensemble(np.array([[8.3, 9.1, 7.6]]), np.array([[0.4, -0.2, 0.7]]), np.array([1.0]))
    hist = _uniform_history([0, 0, 0], [0, 0, 0], particles=ens)
    cone = build_cone(1.2, np.full(3, 8.0), 8, 8, 8)
    terms = gs_terms(hist, cone)
    ET, BT = _direct_t_terms(cone, ens)
    assert np.linalg.norm(ET) > 0
    assert np.allclose(terms.E_T, ET, rtol=1e-12, atol=0)
    assert np.allclose(terms.B_T, BT, rtol=1e-12, atol=0)
    for name in ("E_S1", "B_S1", "E_S2", "B_S2"):
        assert not np.any(getattr(terms, name))
    assert np.linalg.norm(terms.E_T) <= 2 * terms.env_T


def test_envelope_ratios_on_random_fields():
    rng = np.random.default_rng(4)
    n = 3000
    ens = Ensemble(rng.uniform(0, 16, (n, 3)), rng.normal(scale=3, size=(n, 3)), rng.uniform(size=n))
    hist = _uniform_history([0.3, -1.0, 0.5], [1.2, 0.4, -0.7], particles=ens)
    terms = gs_terms(hist, build_cone(1.5, np.full(3, 8.0), 8, 8, 8), workers=2)
    assert terms.pairs > 0
    assert terms.ratio_T <= 1 and terms.ratio_S1 <= 1 and terms.ratio_S2 <= 1


def test_gs_terms_need_particles():
    hist = _uniform_history([0, 0, 0], [0, 0, 0])
    with pytest.raises(ValueError, match="no particles"):
        gs_terms(hist, build_cone(1.0, np.full(3, 8.0), 8, 8, 8))


def test_pallard_jacobian_examples():
    assert pallard_jacobian(np.zeros(3), 2.0, 0.5, 0.7, 1.1) == pytest.approx(1.5**2 * np.sin(0.7))
    assert pallard_jacobian(np.array([0, 0, 0.5]), 2.0, 0.5, 0.0, 0.3) == 0.0


def test_pallard_jacobian_vs_finite_differences():
    assert pallard_jacobian_check(1000, seed=1) < 1e-6


def test_pallard_integral_cases():
    still = LinearPath(np.zeros(3), np.zeros(3))
    assert pallard_integral(still, GaussianBump(np.zeros(3), 0.3, amplitude=0.0), 1.0) == (0.0, 0.0)
    with pytest.raises(ValueError):
        pallard_integral(LinearPath(np.zeros(3), np.array([1.0, 0, 0])), GaussianBump(np.zeros(3), 0.3), 1.0)
    bump = GaussianBump(np.zeros(3), 0.3)
    a = pallard_integral(still, bump, 1.0)
    b = pallard_integral(still, bump, 1.0, 64, 64, 48, 48)
    assert abs((b[0] / b[1]) / (a[0] / a[1]) - 1) < 0.2
    ratios = [np.divide(*pallard_integral(OscillatingPath(np.zeros(3), 1 - 10.0**-k, 3.0), bump, 1.0))
              for k in range(1, 5)]
    assert max(ratios) / min(ratios) < 2.0


def test_gaussian_l2_norm_closed_form():
    bump = GaussianBump(np.zeros(3), 0.4, amplitude=1.5)
    h = 0.02
    ax = np.arange(-3, 3, h) + h / 2
    X, Y, Z = np.meshgrid(ax, ax, ax, indexing="ij")
    vals = bump(np.array(0.0), np.stack([X, Y, Z], -1))
    assert np.sqrt(np.sum(vals**2) * h**3) == pytest.approx(float(bump.l2_norm(0.0)), rel=1e-6)
