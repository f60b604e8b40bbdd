import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rvm.grid import FieldGrid
from rvm.particles import (
    BLOCK_SIZE,
    Ensemble,
    boris_momentum,
    deposit_charge,
    deposit_current,
    deposit_energy_momentum,
    wrap,
)


def test_boris_constant_electric_field_exact():
    p = boris_momentum(np.zeros((1, 3)), np.array([[0.1, 0.0, 0.0]]), np.zeros((1, 3)), 0.01)
    assert np.allclose(p, [[0.001, 0.0, 0.0]], rtol=1e-15, atol=0)


def test_boris_magnetic_rotation_preserves_norm():
    p = np.array([[0.3, -1.2, 0.7]])
    B = np.array([[0.0, 0.0, 2.5]])
    p_start = np.linalg.norm(p)
    for _ in range(1000):
        p = boris_momentum(p, np.zeros((1, 3)), B, 0.05)
    assert abs(np.linalg.norm(p) - p_start) / p_start < 1e-12


def test_single_particle_total_charge():
    dims, dx = (4, 4, 4), 0.5
    ens = Ensemble(np.array([[1.0, 0.5, 1.5]]), np.zeros((1, 3)), np.array([1.0]))
    rho = deposit_charge(ens, dims, dx)
    assert rho.sum() * dx**3 == pytest.approx(4 * np.pi, rel=1e-14)
    J, _ = deposit_current(ens.x, ens.x.copy(), ens.w, dims, dx, 0.1)
    assert not J.any()


def test_empty_deposits_are_zero():
    e = Ensemble.empty()
    assert not deposit_charge(e, (4, 4, 4), 1.0).any()
    J, rho = deposit_current(e.x, e.x, e.w, (4, 4, 4), 1.0, 0.1)
    assert not J.any() and not rho.any()


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_charge_conserving_current(seed):
    rng = np.random.default_rng(seed)
    dims, dx, dt = (6, 5, 7), 0.8, 0.3
    g = FieldGrid(dims, dx)
    n = 200
    x0 = rng.uniform(size=(n, 3)) * g.lengths
    step = rng.uniform(-1, 1, (n, 3)) * dt * 0.57
    x1 = x0 + step
    w = rng.uniform(0.1, 1.0, n)
    rho0 = deposit_charge(Ensemble(x0, np.zeros((n, 3)), w), dims, dx)
    g.J, rho1 = deposit_current(x0, x1, w, dims, dx, dt)
    rho1_direct = deposit_charge(Ensemble(wrap(x1, g.lengths), np.zeros((n, 3)), w), dims, dx)
    scale = np.abs(rho0).max()
    assert np.max(np.abs(rho1 - rho1_direct)) < 1e-12 * scale
    assert np.max(np.abs((rho1 - rho0) / dt + g.div_J())) < 1e-11 * scale / dt


def test_block_order_is_worker_independent():
    rng = np.random.default_rng(9)
    n = 3 * BLOCK_SIZE + 17
    ens = Ensemble(rng.uniform(0, 8, (n, 3)), rng.normal(size=(n, 3)), rng.uniform(size=n))
    a = deposit_energy_momentum(ens, (8, 8, 8), 1.0, workers=1)
    b = deposit_energy_momentum(ens, (8, 8, 8), 1.0, workers=3)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_energy_density_integrates_to_kinetic_energy():
    rng = np.random.default_rng(10)
    ens = Ensemble(rng.uniform(0, 4, (500, 3)), rng.normal(size=(500, 3)), rng.uniform(size=500))
    eps, _ = deposit_energy_momentum(ens, (4, 4, 4), 1.0)
    assert eps.sum() == pytest.approx(ens.kinetic_energy(), rel=1e-12)


def test_negative_weights_rejected():
    with pytest.raises(ValueError):
        Ensemble(np.zeros((1, 3)), np.zeros((1, 3)), np.array([-1.0]))


def test_wrap_stays_in_box():
    L = np.array([2.0, 3.0, 4.0])
    x = wrap(np.array([[-1e-17, 3.0, 8.5]]), L)
    assert np.all(x >= 0) and np.all(x < L)
