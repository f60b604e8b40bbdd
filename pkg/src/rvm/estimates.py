"""Numerical verification of the particle-density, field and bootstrap estimates.

Everything here works with analytic, spatially uniform momentum
distributions (:mod:`rvm.distributions`) and brute-force quadrature, so each
check compares a computed integral against the closed-form scaling it is
supposed to obey. Constants hidden in "lesssim" are fitted at the smallest
family member and judged by their spread across the family.
"""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .distributions import AnalyticDistribution
from .kinematics import (
    E3,
    angle_to_axis_pm,
    antiparallel_angle,
    k_good_sq,
    flux_density,
    lorentz_force,
    norm,
    one_minus_vhat_sq,
    one_plus_vhat_dot,
    p0 as _p0,
    p_hat,
    transverse_radius,
)
from .lightcone import build_cone, omega_from_angles

TWO_PI = 2.0 * np.pi
EPS = np.finfo(float).eps
SPREAD_LIMIT = 2.0
DEFAULT_KAPPA = 2.0
P_SWEEP = (10.0, 20.0, 40.0, 80.0)
ANGLE_SWEEP = (np.pi / 2, np.pi / 4, np.pi / 8, np.pi / 16)
FIELD_P_SWEEP = (10.0, 20.0, 40.0)


def direction_at_angle(beta, azimuth=0.0):
    """Unit vector at polar angle beta from e3."""
    return omega_from_angles(beta, azimuth)


# -- momentum integrals ------------------------------------------------------


@dataclass
class QuadratureGrid:
    """Base cell counts in (s, gamma, p3); s in [0, 1] maps onto [u_lo, u_hi]."""

    n_s: int = 16
    n_gamma: int = 32
    n_p3: int = 128
    max_level: int = 4

    def scaled(self, factor):
        return QuadratureGrid(int(self.n_s * factor), int(self.n_gamma * factor),
                              int(self.n_p3 * factor), self.max_level)


@dataclass
class IntegralResult:
    value: float
    region_I: float = 0.0
    region_II: float = 0.0
    cells: int = 0
    refined: int = 0


def _cell_values(dist, omega, a, p0_power, s0, s1, g0, g1, z0, z1):
    sm, gm, zm = 0.5 * (s0 + s1), 0.5 * (g0 + g1), 0.5 * (z0 + z1)
    lo, hi = dist.u_bounds(gm, zm)
    width = hi - lo
    u = lo + sm * width
    p = np.stack([u * np.cos(gm), u * np.sin(gm), zm], axis=-1)
    ope = one_plus_vhat_dot(p, omega)
    e = _p0(p)
    vol = (s1 - s0) * (g1 - g0) * (z1 - z0) * u * width
    integrand = dist.density_cyl(u, gm, zm) * e ** (-p0_power) * ope ** (-a)
    diam = np.sqrt(((s1 - s0) * width) ** 2 + (u * (g1 - g0)) ** 2 + (z1 - z0) ** 2)
    return p, ope, integrand * vol, diam


def kernel_integral(dist, omega, a, p0_power=1.0, grid=None, p_max=None, split_angle=None):
    """int f(p) p0^(-p0_power) (1 + vhat.omega)^(-a) dp by refined midpoint cells.

    Cells whose midpoint has 1 + vhat.omega < 10 / P^2 and whose angular size
    seen from the origin exceeds 1/P are split 2x2x2, up to grid.max_level
    times (P = p_max, default 2 + sup|p| of the support). With split_angle
    beta, the result also carries the parts over region I (within beta/2 of
    the +/- e3 axis) and region II (the rest); both come from the same cells.
    """
    grid = grid or QuadratureGrid()
    omega = np.asarray(omega, dtype=float)
    P = p_max if p_max is not None else dist.momentum_support()
    threshold = 10.0 / P**2
    s_e = np.linspace(0.0, 1.0, grid.n_s + 1)
    g_e = np.linspace(0.0, TWO_PI, grid.n_gamma + 1)
    z_e = np.linspace(-dist.pz, dist.pz, grid.n_p3 + 1)
    S0, G0, Z0 = np.meshgrid(s_e[:-1], g_e[:-1], z_e[:-1], indexing="ij")
    S1, G1, Z1 = np.meshgrid(s_e[1:], g_e[1:], z_e[1:], indexing="ij")
    cells = [c.ravel() for c in (S0, S1, G0, G1, Z0, Z1)]
    total = reg1 = reg2 = 0.0
    n_cells = refined = 0
    for level in range(grid.max_level + 1):
        p, ope, contrib, diam = _cell_values(dist, omega, a, p0_power, *cells)
        r = norm(p)
        with np.errstate(divide="ignore"):
            ang = np.where(r > 0, diam / r, np.inf)
        split = (ope < threshold) & (ang > 1.0 / P)
        if level == grid.max_level:
            split[:] = False
        keep = ~split
        total += float(np.sum(contrib[keep]))
        if split_angle is not None:
            in_I = angle_to_axis_pm(p[keep]) <= 0.5 * split_angle
            reg1 += float(np.sum(contrib[keep][in_I]))
            reg2 += float(np.sum(contrib[keep][~in_I]))
        n_cells += int(keep.sum())
        if not split.any():
            break
        refined += int(split.sum())
        s0, s1, g0, g1, z0, z1 = (c[split] for c in cells)
        sm, gm, zm = 0.5 * (s0 + s1), 0.5 * (g0 + g1), 0.5 * (z0 + z1)
        new = [[], [], [], [], [], []]
        for sa, sb in ((s0, sm), (sm, s1)):
            for ga, gb in ((g0, gm), (gm, g1)):
                for za, zb in ((z0, zm), (zm, z1)):
                    for lst, arr in zip(new, (sa, sb, ga, gb, za, zb)):
                        lst.append(arr)
        cells = [np.concatenate(lst) for lst in new]
    return IntegralResult(total, reg1, reg2, n_cells, refined)


def momentum_integral(dist, omega, a, grid=None, p_max=None):
    """int f / (p0 (1 + vhat.omega)^a) dp; a = 0 gives the normalization int f / p0."""
    if float(a) not in (0.0, 0.5, 1.0):
        raise ValueError("momentum_integral exponent must be 0, 1/2 or 1")
    return kernel_integral(dist, omega, a, 1.0, grid, p_max).value


# -- sweep reports -------------------------------------------------------------


@dataclass
class SweepReport:
    """Computed values against a scaling law over a one-parameter family."""

    name: str
    params: np.ndarray
    values: np.ndarray
    laws: np.ndarray
    limit: float = SPREAD_LIMIT
    extra: dict = field(default_factory=dict)

    @property
    def ratios(self):
        return np.asarray(self.values) / np.asarray(self.laws)

    @property
    def fitted_C(self):
        return float(self.ratios[0])

    @property
    def spread(self):
        r = self.ratios
        return float(np.max(r) / np.min(r))

    @property
    def passed(self):
        return bool(np.all(np.isfinite(self.ratios)) and self.spread <= self.limit)

    def row(self):
        return {"name": self.name, "samples": len(self.params), "worst_slack": "",
                "fitted_C": self.fitted_C, "spread": self.spread, "pass": self.passed}


def main_estimate_scaling(P_values=P_SWEEP, kappa=DEFAULT_KAPPA, angles=ANGLE_SWEEP,
                          P_fixed=40.0, grid=None):
    """P-sweep at omega = e3 against P^2 log P and angle sweep against A^4 log P / beta^2."""
    vals, laws = [], []
    for P in P_values:
        dist = AnalyticDistribution.pancake_for_support(P, kappa)
        vals.append(momentum_integral(dist, E3, 1.0, grid))
        laws.append(P**2 * np.log(P))
    p_sweep = SweepReport("main_estimate_P", np.array(P_values), np.array(vals), np.array(laws))

    dist = AnalyticDistribution.pancake_for_support(P_fixed, kappa)
    A = dist.a_value()
    vals, laws, reg = [], [], []
    for beta in angles:
        res = kernel_integral(dist, direction_at_angle(beta), 1.0, 1.0, grid, split_angle=beta)
        vals.append(res.value)
        laws.append(A**4 * np.log(P_fixed) / beta**2)
        reg.append((res.region_I, res.region_II))
    reg = np.array(reg).reshape(-1, 2)
    a_sweep = SweepReport("main_estimate_angle", np.array(angles), np.array(vals), np.array(laws))
    region = SweepReport("main_estimate_region_I", np.array(angles), reg[:, 0],
                         A**2 * np.log(P_fixed) / np.array(angles) ** 2, limit=np.inf,
                         extra={"region_II": reg[:, 1], "total": np.array(vals)})
    return p_sweep, a_sweep, region


# -- field estimates ---------------------------------------------------------------


def _angular_profile(dist, thetas, a, p0_power, grid):
    """Momentum integral at omega(theta, 0); axisymmetric distributions only."""
    if not dist.axisymmetric:
        raise ValueError("angular profile needs an axisymmetric distribution")
    return np.array([kernel_integral(dist, direction_at_angle(th), a, p0_power, grid).value
                     for th in thetas])


def _field_cone(P, t, n_cone):
    return build_cone(t, np.zeros(3), n_cone, n_cone, n_cone, theta_min_width=0.25 / P)


def field_T_integral(dist, t=1.0, n_cone=16, grid=None):
    """Cone integral of int f / ((t - s)^2 p0^2 (1 + vhat.omega)^(3/2)) dp, f frozen in time."""
    cone = _field_cone(dist.momentum_support(), t, n_cone)
    prof = _angular_profile(dist, cone.theta, 1.5, 2.0, grid)
    w = cone.weights / ((cone.t - cone.s) ** 2)[:, None, None]
    return float(np.sum(w * prof[None, :, None]))


def field_T_bound_check(P_values=FIELD_P_SWEEP, kappa=DEFAULT_KAPPA, t=1.0, n_cone=16, grid=None):
    """Sweep in P against log P + log^2 P int_0^t A^4; the integral should grow sub-polynomially."""
    vals, laws = [], []
    for P in P_values:
        dist = AnalyticDistribution.pancake_for_support(P, kappa)
        A = dist.a_value()
        vals.append(field_T_integral(dist, t, n_cone, grid))
        laws.append(np.log(P) + np.log(P) ** 2 * A**4 * t)
    rep = SweepReport("field_T", np.array(P_values), np.array(vals), np.array(laws))
    half = np.array(vals) / np.sqrt(P_values)
    rep.extra["ratio_to_sqrtP"] = half
    rep.extra["sqrtP_decreasing"] = bool(np.all(np.diff(half) < 0))
    return rep


def synthetic_good_field(cone):
    """Positive test profile K(s, theta, phi) normalized so that int K^2 dsigma = 1."""
    th = cone.theta[None, :, None]
    ph = cone.phi[None, None, :]
    s = cone.s[:, None, None]
    K = (1.0 + 0.5 * np.cos(th) + 0.25 * np.sin(th) * np.cos(ph)) * (1.0 + s / max(cone.t, 1e-300))
    K = np.broadcast_to(K, cone.shape)
    return K / np.sqrt(np.sum(cone.weights * K**2))


@dataclass
class S2Result:
    norm: float
    product_integral: float
    cauchy_schwarz_bound: float


def field_S2_integral(dist, t=1.0, n_cone=16, grid=None):
    """L^2 cone norm (sin theta dtheta dphi ds) of int f / (p0 (1 + vhat.omega)) dp,
    with the Cauchy-Schwarz pair for a normalized synthetic K_g."""
    cone = _field_cone(dist.momentum_support(), t, n_cone)
    prof = _angular_profile(dist, cone.theta, 1.0, 1.0, grid)
    ang = cone.angular_weights[None] * cone.ds[:, None, None]
    M = np.broadcast_to(prof[None, :, None], cone.shape)
    l2 = float(np.sqrt(np.sum(ang * M**2)))
    K = synthetic_good_field(cone)
    r = (cone.t - cone.s)[:, None, None]
    product = float(np.sum(cone.weights / r * K * M))
    bound = float(np.sqrt(np.sum(cone.weights * K**2))) * l2
    return S2Result(l2, product, bound)


def field_S2_check(P_values=FIELD_P_SWEEP, kappa=DEFAULT_KAPPA, t=1.0, n_cone=16, grid=None):
    vals, laws, cs = [], [], []
    for P in P_values:
        dist = AnalyticDistribution.pancake_for_support(P, kappa)
        res = field_S2_integral(dist, t, n_cone, grid)
        vals.append(res.norm)
        laws.append(P * np.log(P))
        cs.append(res.product_integral <= res.cauchy_schwarz_bound)
    rep = SweepReport("field_S2", np.array(P_values), np.array(vals), np.array(laws))
    rep.extra["cauchy_schwarz"] = bool(all(cs))
    A = AnalyticDistribution.pancake_for_support(P_values[0], kappa).a_value()
    rep.extra["full_law"] = np.array(laws) * (1.0 + np.sqrt(A**8 * t))
    return rep


# -- bootstrap -------------------------------------------------------------------


def default_delta0(C1):
    return max(1.0, 4.0 * C1 * (np.log(2.0 * C1) + 1.0))


@dataclass
class BootstrapProblem:
    """h' = C1 g h log h, h(0) = C1, with g piecewise constant on uniform cells of [0, T]."""

    C1: float
    g: np.ndarray
    T: float = 1.0
    delta0: Optional[float] = None

    def __post_init__(self):
        if not self.C1 > 1:
            raise ValueError("C1 must exceed 1")
        self.g = np.atleast_1d(np.asarray(self.g, dtype=float))
        if np.any(self.g < 0) or not np.all(np.isfinite(self.g)):
            raise ValueError("g must be finite and non-negative")
        if self.delta0 is None:
            self.delta0 = default_delta0(self.C1)
        if self.delta0 < 4.0 * self.C1 * (np.log(2.0 * self.C1) + 1.0):
            raise ValueError("delta0 below the closing value 4 C1 (log(2 C1) + 1)")


@dataclass
class BootstrapReport:
    t: np.ndarray
    log_h: np.ndarray
    log_bound: np.ndarray
    G: np.ndarray

    @property
    def margin(self):
        """min over grid times of log(bound) - log(h)."""
        return float(np.min(self.log_bound - self.log_h))

    @property
    def passed(self):
        return self.margin >= 0


def bootstrap_verify(prob, substeps=64):
    """RK4 for u = log h, u' = C1 g u (equivalent to the equality ODE for h > 1).

    Working with log h keeps the double-exponential bound representable:
    log bound = log(2 C1) + exp(delta0 int_0^t g).
    """
    n = prob.g.size
    h_cell = prob.T / n
    dt = h_cell / substeps
    u = np.log(prob.C1)
    ts, us, Gs = [0.0], [u], [0.0]
    G = 0.0
    for i in range(n):
        rate = prob.C1 * prob.g[i]
        for j in range(substeps):
            k1 = rate * u
            k2 = rate * (u + 0.5 * dt * k1)
            k3 = rate * (u + 0.5 * dt * k2)
            k4 = rate * (u + dt * k3)
            u = u + dt * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
            ts.append(i * h_cell + (j + 1) * dt)
            us.append(u)
            Gs.append(G + prob.g[i] * (j + 1) * dt)
        G += prob.g[i] * h_cell
    t = np.array(ts)
    log_h = np.array(us)
    Garr = np.array(Gs)
    with np.errstate(over="ignore"):
        log_bound = np.log(2.0 * prob.C1) + np.exp(prob.delta0 * Garr)
    return BootstrapReport(t, log_h, log_bound, Garr)


def bootstrap_closed_form(C1, t):
    """h(t) = C1^(exp(C1 t)) for g = 1."""
    return C1 ** np.exp(C1 * np.asarray(t, dtype=float))


def random_g_profiles(count, seed, pieces=8, T=1.0, max_integral=3.0):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        g = rng.exponential(size=pieces)
        g *= rng.uniform(0.0, max_integral) / (np.sum(g) * T / pieces)
        out.append(g)
    return out


# -- kernel inequalities -----------------------------------------------------------


INEQUALITIES = (
    "one_minus_vhat_sq_identity",
    "omega_plus_vhat_component",
    "vhat_cross_omega",
    "singularity_by_p0",
    "singularity_by_angle",
    "momentum_by_axis_angle",
    "tangential_projection",
    "lorentz_force_split",
    "flux_identity",
)


@dataclass
class InequalityResult:
    name: str
    samples: int = 0
    worst_slack: float = np.inf
    violations: int = 0
    witness: Optional[dict] = None

    @property
    def passed(self):
        return self.violations == 0

    def row(self):
        return {"name": self.name, "samples": self.samples, "worst_slack": self.worst_slack,
                "fitted_C": "", "spread": "", "pass": self.passed}


def sample_inputs(n, rng, p_max=1e3, first_at_rest=False):
    """Random (p, omega, E, B) with |p| <= p_max; a third of the omegas are
    nearly antiparallel to p to probe the kernel singularity."""
    d = rng.normal(size=(n, 3))
    d /= norm(d)[:, None]
    mode = rng.integers(0, 3, n)
    r = np.where(mode == 0, p_max * rng.uniform(size=n),
                 np.exp(rng.uniform(np.log(1e-6), np.log(p_max), n)))
    r = np.where(mode == 2, p_max * rng.uniform(size=n) ** 0.25, r)
    p = d * r[:, None]
    w = rng.normal(size=(n, 3))
    w /= norm(w)[:, None]
    near = rng.uniform(size=n) < 1.0 / 3.0
    tilt = 10.0 ** rng.uniform(-9, 0, n)
    anti = -d + tilt[:, None] * w
    anti /= norm(anti)[:, None]
    omega = np.where(near[:, None], anti, w)
    scale = 10.0 ** rng.uniform(-3, 3, (n, 2))
    E = rng.normal(size=(n, 3)) * scale[:, :1]
    B = rng.normal(size=(n, 3)) * scale[:, 1:]
    if first_at_rest and n:
        p[0] = 0.0
    return p, omega, E, B


def _inequality_terms(p, omega, E, B):
    """(lhs, rhs, round-off allowance, applicable mask) for every inequality."""
    e = _p0(p)
    v = p_hat(p)
    r = norm(p)
    ope = one_plus_vhat_dot(p, omega)
    out = {}
    ulp = 8.0 * EPS

    oms = one_minus_vhat_sq(p)
    out["one_minus_vhat_sq_identity"] = (np.abs(oms * e**2 - 1.0), np.zeros_like(r), 1e-12 + 0 * r, r >= 0)

    comp = (omega + v) ** 2
    mag = (np.abs(omega) + np.abs(v))
    allowance = ulp * (2.0 * np.sqrt(comp) * mag + mag**2 * EPS) + ulp * 2.0 * ope[:, None]
    out["omega_plus_vhat_component"] = (np.max(comp - allowance, axis=1), 2.0 * ope,
                                        np.zeros_like(r), r >= 0)

    cr = np.cross(v, omega)
    lhs = np.sum(cr * cr, axis=1)
    out["vhat_cross_omega"] = (lhs, 2.0 * ope, ulp * (lhs + 2.0 * ope), r >= 0)

    inv = 1.0 / ope
    out["singularity_by_p0"] = (inv, 2.0 * e**2, ulp * (inv + 2.0 * e**2), r >= 0)

    nz = r > 0
    alpha = antiparallel_angle(p, omega)
    with np.errstate(divide="ignore"):
        # 1 - cos a >= 2 a^2 / pi^2 only covers a <= pi/2; beyond it 1 + vhat.omega >= 1
        rhs = np.where(alpha > 0, np.maximum(1.0, 0.5 * np.pi**2 / alpha**2), np.inf)
    out["singularity_by_angle"] = (inv, rhs, ulp * inv, nz & (alpha > 0))

    rho = transverse_radius(p)
    beta = angle_to_axis_pm(p)
    with np.errstate(divide="ignore", invalid="ignore"):
        rhs = np.where(beta > 0, 0.5 * np.pi * rho / beta, np.inf)
    out["momentum_by_axis_angle"] = (r, rhs, ulp * r, nz & (beta > 0))

    tang = np.abs(omega - np.sum(omega * v, axis=1)[:, None] * v)
    bound = (np.sqrt(2.0) + 2.0) * np.sqrt(ope)
    out["tangential_projection"] = (np.max(tang - ulp * (1.0 + np.abs(omega)), axis=1), bound,
                                    np.zeros_like(r), r >= 0)

    lf = norm(lorentz_force(E, B, p))
    eo = np.abs(np.sum(omega * E, axis=1))
    bo = np.abs(np.sum(omega * B, axis=1))
    good = norm(B + np.cross(omega, E))
    rhs = eo + bo + good + 2.0 * np.sqrt(2.0) * np.sqrt(ope) * norm(B)
    out["lorentz_force_split"] = (lf, rhs, ulp * (norm(E) + norm(B)) * 4.0, r >= 0)

    kq = 0.25 * k_good_sq(E, B, omega)
    fl = flux_density(E, B, omega)
    scale = 0.5 * (np.sum(E * E, axis=1) + np.sum(B * B, axis=1))
    with np.errstate(invalid="ignore", divide="ignore"):
        rel = np.where(scale > 0, np.abs(kq - fl) / scale, 0.0)
    out["flux_identity"] = (rel, np.zeros_like(r), 1e-12 + 0 * r, r >= 0)
    return out


def verify_kernel_inequalities(sample_count, seed=0, p_max=1e3, chunk=250_000, fixed_radius=None):
    """Check every explicit-constant kernel inequality on seeded random samples.

    worst_slack is the smallest (rhs + allowance - lhs) / max(|rhs|, allowance)
    seen; a negative value is a violation and its witness is recorded.
    fixed_radius puts every momentum on the sphere |p| = fixed_radius.
    """
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    rng = np.random.default_rng(seed)
    results = {name: InequalityResult(name) for name in INEQUALITIES}
    done = 0
    while done < sample_count:
        n = min(chunk, sample_count - done)
        p, omega, E, B = sample_inputs(n, rng, p_max, first_at_rest=(done == 0 and fixed_radius is None))
        if fixed_radius is not None:
            p = p / np.maximum(norm(p), 1e-300)[:, None] * fixed_radius
        terms = _inequality_terms(p, omega, E, B)
        for name, (lhs, rhs, tol, mask) in terms.items():
            res = results[name]
            res.samples += int(mask.sum())
            if not mask.any():
                continue
            lhs_m, rhs_m, tol_m = lhs[mask], rhs[mask], tol[mask]
            denom = np.maximum(np.abs(rhs_m), np.maximum(tol_m, 1e-300))
            with np.errstate(invalid="ignore"):
                slack = np.where(np.isinf(rhs_m), np.inf, (rhs_m + tol_m - lhs_m) / denom)
            bad = ~(slack >= 0)
            k = int(np.argmin(np.where(np.isnan(slack), -np.inf, slack)))
            res.worst_slack = min(res.worst_slack, float(slack[k]))
            if bad.any():
                res.violations += int(bad.sum())
                if res.witness is None:
                    j = np.flatnonzero(mask)[np.flatnonzero(bad)[0]]
                    res.witness = {"p": p[j].tolist(), "omega": omega[j].tolist(),
                                   "E": E[j].tolist(), "B": B[j].tolist()}
        done += n
    return [results[name] for name in INEQUALITIES]
