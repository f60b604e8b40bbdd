import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from rvm import estimates as es
from rvm.distributions import AnalyticDistribution

E1 = np.array([1.0, 0.0, 0.0])
E3 = np.array([0.0, 0.0, 1.0])


def _spherical_oracle(density, r_max, omega_axis_cos, a):
    """2 pi int int r^2 sin(th) f(r) / (p0 (1 + r cos(th) / p0)^a) over omega = e3."""

    def fn(th, r):
        e = np.sqrt(1 + r * r)
        return 2 * np.pi * r * r * np.sin(th) * density(r) / (e * (1 + r * np.cos(th) / e) ** a)

    return integrate.dblquad(fn, 0, r_max, 0, np.pi, epsabs=1e-12, epsrel=1e-12)[0]


def test_zero_distribution():
    d = AnalyticDistribution.pancake(2.0, 5.0, amplitude=0.0)
    assert es.momentum_integral(d, E3, 1.0) == 0.0


def test_ball_normalization_against_spherical_oracle():
    # huge temperature: f is 1 on |p| <= 1 to within 1e-12
    d = AnalyticDistribution.maxwellian(1e6, 1.0)
    val = es.momentum_integral(d, E3, 0.0, grid=es.QuadratureGrid(64, 16, 160, 0))
    exact = 2 * np.pi * (np.sqrt(2.0) - np.arcsinh(1.0))
    assert exact == pytest.approx(_spherical_oracle(lambda r: 1.0, 1.0, 1, 0), rel=1e-10)
    assert val == pytest.approx(exact, rel=2e-3)


def test_second_order_convergence():
    d = AnalyticDistribution.maxwellian(0.5, 4.0)
    ref = _spherical_oracle(lambda r: np.exp(-r * r / 0.5), 4.0, 1, 1)
    errs = [abs(es.kernel_integral(d, E3, 1.0, 1.0, es.QuadratureGrid(8 * f, 8 * f, 16 * f, 0)).value - ref)
            for f in (1, 2, 4)]
    orders = np.log2(np.array(errs[:-1]) / errs[1:])
    assert np.all(orders > 1.8)


def test_refined_integral_matches_oracle_near_singularity():
    d = AnalyticDistribution.maxwellian(1.0, 6.0)
    ref = _spherical_oracle(lambda r: np.exp(-r * r / 2), 6.0, 1, 1)
    val = es.kernel_integral(d, E3, 1.0, 1.0, es.QuadratureGrid().scaled(2)).value
    assert val == pytest.approx(ref, rel=5e-3)


def test_rejects_unsupported_exponent():
    with pytest.raises(ValueError):
        es.momentum_integral(AnalyticDistribution.pancake(2.0, 5.0), E3, 2.0)


def test_pancake_fitted_constant_stable_across_resolutions():
    d = AnalyticDistribution.pancake_for_support(20.0, 2.0)
    law = d.a_value() ** 4 * np.log(20.0) / (np.pi / 2) ** 2
    c1 = es.momentum_integral(d, E1, 1.0) / law
    c2 = es.momentum_integral(d, E1, 1.0, grid=es.QuadratureGrid().scaled(2)) / law
    assert abs(c2 / c1 - 1) < 0.01


@settings(max_examples=10, deadline=None)
@given(st.floats(0.05, np.pi / 2))
def test_region_split_is_exact(beta):
    d = AnalyticDistribution.pancake_for_support(20.0, 2.0)
    res = es.kernel_integral(d, es.direction_at_angle(beta), 1.0, 1.0, split_angle=beta)
    assert res.region_I + res.region_II == pytest.approx(res.value, rel=1e-12)


def test_momentum_sweep_passes():
    p_sweep, _, _ = es.main_estimate_scaling(angles=())
    assert p_sweep.passed and p_sweep.spread == pytest.approx(1.3365, abs=1e-3)


def test_angle_sweep_follows_finite_P_logarithm():
    # at P = 40 the needle's integral tracks log(P beta / kappa) / beta^2, not log P / beta^2
    P, kappa = 40.0, 2.0
    _, a_sweep, _ = es.main_estimate_scaling(P_values=())
    assert a_sweep.spread == pytest.approx(5.151, abs=1e-2)
    beta = np.asarray(a_sweep.params)
    A = AnalyticDistribution.pancake_for_support(P, kappa).a_value()
    scaled = a_sweep.values * beta**2 / (A**4 * np.log(P * beta / kappa))
    assert scaled[1:].max() / scaled[1:].min() < 1.25


def test_field_checks():
    t_rep = es.field_T_bound_check()
    assert t_rep.extra["sqrtP_decreasing"]
    s_rep = es.field_S2_check()
    assert s_rep.passed and s_rep.extra["cauchy_schwarz"]


def test_bootstrap_closed_form_and_preconditions():
    rep = es.bootstrap_verify(es.BootstrapProblem(2.0, np.ones(1)))
    exact = es.bootstrap_closed_form(2.0, rep.t)
    assert np.max(np.abs(np.exp(rep.log_h) - exact) / exact) < 1e-6
    assert es.bootstrap_closed_form(2.0, 1.0) == pytest.approx(2.0 ** np.exp(2.0))
    with pytest.raises(ValueError, match="C1 must exceed 1"):
        es.BootstrapProblem(0.5, np.ones(1))
    with pytest.raises(ValueError):
        es.BootstrapProblem(2.0, np.ones(1), delta0=1.0)


def test_default_delta0():
    assert es.default_delta0(2.0) == pytest.approx(8 * (np.log(4.0) + 1))
    assert es.default_delta0(1.01) >= 1.0


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(1.0, 4.0))
def test_bootstrap_bound_monotone_in_delta0(seed, factor):
    g = es.random_g_profiles(1, seed)[0]
    base = es.BootstrapProblem(2.0, g)
    big = es.BootstrapProblem(2.0, g, delta0=base.delta0 * factor)
    r0, r1 = es.bootstrap_verify(base), es.bootstrap_verify(big)
    assert r0.passed and r1.passed
    assert np.all(r1.log_bound >= r0.log_bound)


def test_random_profiles_respect_integral_cap():
    for g in es.random_g_profiles(50, seed=1):
        assert np.all(g >= 0) and np.mean(g) <= 3.0


def test_kernel_suite_small_and_reproducible():
    a = es.verify_kernel_inequalities(20000, seed=5)
    b = es.verify_kernel_inequalities(20000, seed=5)
    assert [r.name for r in a] == list(es.INEQUALITIES)
    assert all(r.passed for r in a)
    assert [r.worst_slack for r in a] == [r.worst_slack for r in b]


def test_kernel_suite_extreme_momentum_shell():
    for r in es.verify_kernel_inequalities(50000, seed=6, fixed_radius=1e6):
        assert r.passed, (r.name, r.witness)


def test_first_sample_is_at_rest():
    p, omega, E, B = es.sample_inputs(5, np.random.default_rng(0), first_at_rest=True)
    assert not p[0].any()
    assert np.allclose(np.linalg.norm(omega, axis=1), 1.0)
