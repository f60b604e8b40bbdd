"""Backward light-cone quadrature, cone flux, field-decomposition terms and
the path-integral geometry behind the L^2 field estimate.

A cone with apex (t, x) is parametrized by (s, theta, phi) with
y = x + (t - s) omega, omega = (sin theta cos phi, sin theta sin phi, cos theta)
and measure (t - s)^2 sin theta ds dtheta dphi. Nodes are midpoints, so the
apex s = t is never evaluated.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .grid import interpolate_fields, interpolate_staggered
from .kinematics import k_good_sq, one_minus_vhat_sq, one_plus_vhat_dot, p0 as _p0, p_hat, split_lorentz_force
from .particles import wrap

SQRT2 = np.sqrt(2.0)
# node-wise constants: matrix norms of the S kernels are <= 5/(1+vhat.omega)
# for E and <= 7/(1+vhat.omega) for B, the bad force part is
# <= 2 sqrt2 (1+vhat.omega)^(1/2) |B| and each T kernel is <= sqrt2 times the envelope
T_CONSTANT = 2.0
S1_CONSTANT = 24.0 * SQRT2
S2_CONSTANT = 12.0
NODE_ORIGIN = np.zeros(3)


def omega_from_angles(theta, phi):
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    st = np.sin(theta)
    return np.stack(np.broadcast_arrays(st * np.cos(phi), st * np.sin(phi), np.cos(theta)), axis=-1)


def _midpoints(edges):
    edges = np.asarray(edges, dtype=float)
    return 0.5 * (edges[1:] + edges[:-1]), np.diff(edges)


def graded_theta_edges(ntheta, min_width):
    """Uniform theta cells with the two polar cells split dyadically down to min_width."""
    base = np.linspace(0.0, np.pi, ntheta + 1)
    w = np.pi / ntheta
    near = []
    while w > min_width:
        w *= 0.5
        near.append(w)
    near = np.array(near[::-1])
    return np.unique(np.concatenate([base, near, np.pi - near]))


@dataclass
class ConeQuadrature:
    """Midpoint nodes over (s, theta, phi) with the cone measure."""

    t: float
    x: np.ndarray
    s: np.ndarray
    ds: np.ndarray
    theta: np.ndarray
    dtheta: np.ndarray
    phi: np.ndarray
    dphi: np.ndarray

    @property
    def empty(self):
        return self.s.size == 0

    @property
    def shape(self):
        return (self.s.size, self.theta.size, self.phi.size)

    @property
    def omega(self):
        """Unit normals, shape (ntheta, nphi, 3)."""
        return omega_from_angles(self.theta[:, None], self.phi[None, :])

    @property
    def angular_weights(self):
        """sin theta dtheta dphi, shape (ntheta, nphi)."""
        return (np.sin(self.theta) * self.dtheta)[:, None] * self.dphi[None, :]

    @property
    def weights(self):
        """(t - s)^2 sin theta ds dtheta dphi, shape (ns, ntheta, nphi)."""
        radial = (self.t - self.s) ** 2 * self.ds
        return radial[:, None, None] * self.angular_weights[None]

    def points(self, k):
        """Spatial points y of the nodes at time level k, shape (ntheta, nphi, 3)."""
        return self.x + (self.t - self.s[k]) * self.omega

    def integrate(self, values):
        return float(np.sum(self.weights * values))


def build_cone(t, x, ns, ntheta, nphi, lengths=None, theta_min_width=None):
    """Midpoint quadrature on the backward cone with apex (t, x).

    lengths, when given, is the periodic box; a cone radius above half the
    smallest period is rejected because the sphere would wrap onto itself.
    theta_min_width grades the theta cells dyadically towards both poles.
    """
    if t < 0:
        raise ValueError("apex time must be non-negative")
    if min(ns, ntheta, nphi) < 8:
        raise ValueError("cone resolutions must be at least 8")
    if lengths is not None:
        half = 0.5 * float(np.min(lengths))
        if t > half:
            raise ValueError(f"cone radius {t!r} exceeds half the box period {half!r}")
    x = np.asarray(x, dtype=float)
    if theta_min_width is None:
        th, dth = _midpoints(np.linspace(0.0, np.pi, ntheta + 1))
    else:
        th, dth = _midpoints(graded_theta_edges(ntheta, theta_min_width))
    ph, dph = _midpoints(np.linspace(0.0, 2.0 * np.pi, nphi + 1))
    if t == 0:
        s, ds = np.zeros(0), np.zeros(0)
    else:
        s, ds = _midpoints(np.linspace(0.0, t, ns + 1))
    return ConeQuadrature(float(t), x, s, ds, th, dth, ph, dph)


# -- sampling the history ----------------------------------------------------


def _ordered_map(fn, items, workers):
    if workers <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _blend(history, s):
    k0, k1, a = history.bracket(s)
    return int(k0), int(k1), float(a)


def _fields(history, s, pos):
    k0, k1, a = _blend(history, s)
    s0 = history[k0]
    E, B = interpolate_fields(s0.E, s0.B, s0.dx, pos)
    if a > 0:
        s1 = history[k1]
        E1, B1 = interpolate_fields(s1.E, s1.B, s1.dx, pos)
        E = (1.0 - a) * E + a * E1
        B = (1.0 - a) * B + a * B1
    return E, B


def _node_value(arr, dx, pos):
    return interpolate_staggered(arr, NODE_ORIGIN, dx, pos)


def _moments(history, s, pos):
    k0, k1, a = _blend(history, s)

    def one(snap):
        eps = _node_value(snap.energy_density, snap.dx, pos)
        mom = np.stack([_node_value(snap.momentum_density[c], snap.dx, pos) for c in range(3)], axis=-1)
        return eps, mom

    eps, mom = one(history[k0])
    if a > 0:
        e1, m1 = one(history[k1])
        eps = (1.0 - a) * eps + a * e1
        mom = (1.0 - a) * mom + a * m1
    return eps, mom


def _check_history(history, cone):
    history.check_covers(0.0, cone.t)


def cone_flux(history, cone, workers=1):
    """(1/4 int K_g^2 dsigma, 4 pi int int p0 (1 + vhat.omega) f dp dsigma).

    Fields are interpolated trilinearly in space and linearly in time. The
    particle part uses the node densities 4 pi int p0 f and 4 pi int p f
    deposited with the simulator's CIC shape, so p0 (1 + vhat.omega) f
    integrates to epsilon + omega . m.
    """
    if cone.empty:
        return 0.0, 0.0
    _check_history(history, cone)
    om = cone.omega
    ang = cone.angular_weights

    def level(k):
        s = cone.s[k]
        y = cone.points(k)
        E, B = _fields(history, s, y)
        eps, mom = _moments(history, s, y)
        rad = (cone.t - s) ** 2 * cone.ds[k]
        fk = rad * np.sum(ang * 0.25 * k_good_sq(E, B, om))
        ff = rad * np.sum(ang * (eps + np.sum(om * mom, axis=-1)))
        return fk, ff

    parts = _ordered_map(level, range(cone.s.size), workers)
    return float(sum(p[0] for p in parts)), float(sum(p[1] for p in parts))


# -- field decomposition terms ---------------------------------------------


@dataclass
class GSFieldTerms:
    """Cone integrals at the apex, each a 3-vector, plus the envelope integrals.

    env_T, env_S1, env_S2 are the right-hand sides of the node-wise envelope
    bounds integrated over the same nodes (without their constants);
    ratio_* are the largest node-wise kernel/(constant * envelope) values and
    stay <= 1 whenever the bounds hold.
    """

    E_T: np.ndarray = field(default_factory=lambda: np.zeros(3))
    B_T: np.ndarray = field(default_factory=lambda: np.zeros(3))
    E_S1: np.ndarray = field(default_factory=lambda: np.zeros(3))
    B_S1: np.ndarray = field(default_factory=lambda: np.zeros(3))
    E_S2: np.ndarray = field(default_factory=lambda: np.zeros(3))
    B_S2: np.ndarray = field(default_factory=lambda: np.zeros(3))
    env_T: float = 0.0
    env_S1: float = 0.0
    env_S2: float = 0.0
    ratio_T: float = 0.0
    ratio_S1: float = 0.0
    ratio_S2: float = 0.0
    pairs: int = 0

    @property
    def E_S(self):
        return self.E_S1 + self.E_S2

    @property
    def B_S(self):
        return self.B_S1 + self.B_S2

    def merge(self, other):
        for name in ("E_T", "B_T", "E_S1", "B_S1", "E_S2", "B_S2", "env_T", "env_S1", "env_S2"):
            setattr(self, name, getattr(self, name) + getattr(other, name))
        for name in ("ratio_T", "ratio_S1", "ratio_S2"):
            setattr(self, name, max(getattr(self, name), getattr(other, name)))
        self.pairs += other.pairs
        return self


def _dot(a, b):
    return np.sum(a * b, axis=-1)


def _nrm(a):
    return np.sqrt(_dot(a, a))


def s_kernel_E(force, p, omega):
    """E_S integrand factor (per unit f dp / (p0 (t - s))) applied to a force vector."""
    v = p_hat(p)
    ope = one_plus_vhat_dot(p, omega)[..., None]
    proj = force - v * _dot(v, force)[..., None]
    tang = omega - _dot(omega, v)[..., None] * v
    return -proj / ope + (omega + v) * _dot(tang, force)[..., None] / ope**2


def s_kernel_B(force, p, omega):
    """B_S integrand factor (per unit f dp / (p0 (t - s))) applied to a force vector."""
    v = p_hat(p)
    ope = one_plus_vhat_dot(p, omega)[..., None]
    wxv = np.cross(omega, v)
    tang = omega - _dot(omega, v)[..., None] * v
    return (-np.cross(omega, force) / ope + wxv * _dot(v, force)[..., None] / ope
            - wxv * _dot(tang, force)[..., None] / ope**2)


def t_kernels(p, omega):
    """E_T and B_T integrand factors per unit f dp / (t - s)^2."""
    v = p_hat(p)
    ope = one_plus_vhat_dot(p, omega)[..., None]
    oms = one_minus_vhat_sq(p)[..., None]
    return -(omega + v) * oms / ope**2, np.cross(omega, v) * oms / ope**2


def _pair_terms(p, omega, E, B, q, r):
    """Contributions of particle-node pairs.

    q is the quadrature mass (f dp times the cone weight), r = t - s.
    """
    e = _p0(p)
    ope = one_plus_vhat_dot(p, omega)
    kt_e, kt_b = t_kernels(p, omega)
    good, bad = split_lorentz_force(E, B, p, omega)
    sfac = (q / (e * r))[:, None]
    tfac = (q / r**2)[:, None]
    terms = GSFieldTerms()
    ET, BT = tfac * kt_e, tfac * kt_b
    ES1, BS1 = sfac * s_kernel_E(bad, p, omega), sfac * s_kernel_B(bad, p, omega)
    ES2, BS2 = sfac * s_kernel_E(good, p, omega), sfac * s_kernel_B(good, p, omega)
    terms.E_T, terms.B_T = ET.sum(0), BT.sum(0)
    terms.E_S1, terms.B_S1 = ES1.sum(0), BS1.sum(0)
    terms.E_S2, terms.B_S2 = ES2.sum(0), BS2.sum(0)
    envT = q / (r**2 * e**2 * ope**1.5)
    envS1 = q * _nrm(B) / (r * e * np.sqrt(ope))
    goodmag = np.abs(_dot(omega, E)) + np.abs(_dot(omega, B)) + _nrm(B + np.cross(omega, E))
    envS2 = q * goodmag / (r * e * ope)
    terms.env_T, terms.env_S1, terms.env_S2 = envT.sum(), envS1.sum(), envS2.sum()

    def worst(lhs, rhs):
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(rhs > 0, lhs / rhs, np.where(lhs > 0, np.inf, 0.0))
        return float(ratio.max()) if ratio.size else 0.0

    terms.ratio_T = max(worst(_nrm(ET), T_CONSTANT * envT), worst(_nrm(BT), T_CONSTANT * envT))
    terms.ratio_S1 = worst(_nrm(ES1) + _nrm(BS1), S1_CONSTANT * envS1)
    terms.ratio_S2 = worst(_nrm(ES2) + _nrm(BS2), S2_CONSTANT * envS2)
    terms.pairs = p.shape[0]
    return terms


class _ParticleIndex:
    """Periodic k-d trees over the particle positions of each snapshot."""

    def __init__(self, history):
        self.history = history
        self._trees = {}

    def tree(self, k):
        if k not in self._trees:
            snap = self.history[k]
            L = np.array(snap.rho.shape, dtype=float) * snap.dx
            self._trees[k] = cKDTree(wrap(snap.particles.x, L), boxsize=L)
        return self._trees[k]

    def pairs(self, k, y):
        """(node index, particle index, CIC shape / dx^3) for all overlapping pairs."""
        snap = self.history[k]
        dx = snap.dx
        L = np.array(snap.rho.shape, dtype=float) * dx
        yw = wrap(y, L)
        hits = self.tree(k).query_ball_point(yw, r=dx, p=np.inf)
        counts = np.array([len(h) for h in hits], dtype=np.int64)
        if counts.sum() == 0:
            return np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0)
        node = np.repeat(np.arange(len(hits)), counts)
        part = np.concatenate([np.asarray(h, dtype=np.int64) for h in hits])
        d = snap.particles.x[part] - yw[node]
        d = d - L * np.round(d / L)
        shape = np.prod(np.maximum(0.0, 1.0 - np.abs(d) / dx), axis=1) / dx**3
        return node, part, shape


def gs_terms(history, cone, workers=1):
    """Evaluate E_T, B_T, E_S1, B_S1, E_S2, B_S2 at the cone apex.

    f dp at a node is the CIC-weighted sum over macroparticles of each
    bracketing snapshot, blended linearly in time. E and B at the node come
    from the same space-time interpolation as cone_flux.
    """
    total = GSFieldTerms()
    if cone.empty:
        return total
    _check_history(history, cone)
    if any(snap.particles is None for snap in history):
        raise ValueError("history snapshots carry no particles; record them to evaluate cone terms")
    index = _ParticleIndex(history)
    om = cone.omega.reshape(-1, 3)
    ang = cone.angular_weights.ravel()
    # build trees up front so worker threads only read them
    for k in range(len(history)):
        index.tree(k)

    def level(k):
        s = cone.s[k]
        r = cone.t - s
        y = cone.x + r * om
        E, B = _fields(history, s, y)
        k0, k1, a = _blend(history, s)
        node_w = r * r * cone.ds[k] * ang
        acc = GSFieldTerms()
        for kk, tw in ((k0, 1.0 - a), (k1, a)):
            if tw <= 0:
                continue
            node, part, shape = index.pairs(kk, y)
            if node.size == 0:
                continue
            snap = history[kk]
            q = tw * node_w[node] * shape * snap.particles.w[part]
            acc.merge(_pair_terms(snap.particles.p[part], om[node], E[node], B[node], q,
                                  np.full(node.size, r)))
        return acc

    for part in _ordered_map(level, range(cone.s.size), workers):
        total.merge(part)
    return total


# -- path-integral geometry ----------------------------------------------------


def pallard_jacobian(xvel, s_prime, s, theta, phi):
    """(X' . omega + 1)(s' - s)^2 sin theta for the map X(s') + (s' - s) omega."""
    om = omega_from_angles(theta, phi)
    xvel = np.asarray(xvel, dtype=float)
    return (np.sum(xvel * om, axis=-1) + 1.0) * (np.asarray(s_prime) - s) ** 2 * np.sin(theta)


def pallard_map(x0, xvel, s_prime, s, theta, phi):
    """X(s') + (s' - s) omega for the straight path X(s') = x0 + s' xvel."""
    s_prime = np.asarray(s_prime, dtype=float)
    lag = (s_prime - np.asarray(s, dtype=float))[..., None]
    return (np.asarray(x0, float) + s_prime[..., None] * np.asarray(xvel, float)
            + lag * omega_from_angles(theta, phi))


def pallard_jacobian_fd(x0, xvel, s_prime, s, theta, phi, h=1e-5):
    """Determinant of the central-difference Jacobian of pallard_map in (s', theta, phi)."""
    cols = []
    for i in range(3):
        step = [0.0, 0.0, 0.0]
        step[i] = h
        plus = pallard_map(x0, xvel, s_prime + step[0], s, theta + step[1], phi + step[2])
        minus = pallard_map(x0, xvel, s_prime - step[0], s, theta - step[1], phi - step[2])
        cols.append((plus - minus) / (2.0 * h))
    return np.linalg.det(np.stack(cols, axis=-1))


@dataclass
class LinearPath:
    x0: np.ndarray
    v: np.ndarray

    def position(self, s):
        s = np.asarray(s, dtype=float)[..., None]
        return np.asarray(self.x0, float) + s * np.asarray(self.v, float)

    def velocity(self, s):
        s = np.asarray(s, dtype=float)
        return np.broadcast_to(np.asarray(self.v, float), s.shape + (3,))


@dataclass
class OscillatingPath:
    """X(s) = x0 + (amplitude / frequency) sin(frequency s) e1; peak speed = amplitude."""

    x0: np.ndarray
    amplitude: float
    frequency: float = 1.0

    def position(self, s):
        s = np.asarray(s, dtype=float)
        out = np.zeros(s.shape + (3,)) + np.asarray(self.x0, float)
        out[..., 0] += self.amplitude / self.frequency * np.sin(self.frequency * s)
        return out

    def velocity(self, s):
        s = np.asarray(s, dtype=float)
        out = np.zeros(s.shape + (3,))
        out[..., 0] = self.amplitude * np.cos(self.frequency * s)
        return out


@dataclass
class GaussianBump:
    """g(s, y) = amplitude exp(-|y - center - s drift|^2 / (2 sigma^2)) on R^3."""

    center: np.ndarray
    sigma: float
    amplitude: float = 1.0
    drift: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __call__(self, s, y):
        c = np.asarray(self.center, float) + np.asarray(s, float)[..., None] * np.asarray(self.drift, float)
        d = np.asarray(y, float) - c
        return self.amplitude * np.exp(-np.sum(d * d, axis=-1) / (2.0 * self.sigma**2))

    def l2_norm(self, s):
        return np.full(np.shape(s), abs(self.amplitude) * (np.pi * self.sigma**2) ** 0.75)


def _max_speed(path, t, nodes):
    probe = np.concatenate([np.linspace(0.0, t, 2049), nodes])
    return float(np.max(_nrm(path.velocity(probe))))


def pallard_integral(path, g, t, n_outer=32, n_inner=32, n_theta=24, n_phi=24):
    """(I, bound) for a sub-luminal path and a field g with an L^2 norm.

    I = int_0^t ds' int_{C_{s', X(s')}} g(s, X(s') + (s' - s) omega) / (s' - s) dsigma
    bound = int_0^t ds (int_s^t (1 + |log(1 - |X'(s')|)|) ds')^(1/2) ||g(s)||_2
    Both use nested midpoint rules.
    """
    if t <= 0:
        return 0.0, 0.0
    sp, dsp = _midpoints(np.linspace(0.0, t, n_outer + 1))
    if _max_speed(path, t, sp) >= 1.0:
        raise ValueError("path speed must stay below 1")
    th, dth = _midpoints(np.linspace(0.0, np.pi, n_theta + 1))
    ph, dph = _midpoints(np.linspace(0.0, 2.0 * np.pi, n_phi + 1))
    om = omega_from_angles(th[:, None], ph[None, :])
    ang = (np.sin(th) * dth)[:, None] * dph[None, :]
    I = 0.0
    for k, s_prime in enumerate(sp):
        s, ds = _midpoints(np.linspace(0.0, s_prime, n_inner + 1))
        lag = (s_prime - s)[:, None, None]
        pts = path.position(s_prime) + lag[..., None] * om[None]
        vals = g(s[:, None, None], pts) * lag
        I += dsp[k] * np.sum(ds[:, None, None] * ang[None] * vals)
    bound = 0.0
    for k, s in enumerate(sp):
        inner, dinner = _midpoints(np.linspace(s, t, n_inner + 1))
        speed = _nrm(path.velocity(inner))
        logterm = np.sum((1.0 + np.abs(np.log1p(-speed))) * dinner)
        bound += dsp[k] * np.sqrt(logterm) * float(g.l2_norm(s))
    return float(I), float(bound)


# -- report rows -------------------------------------------------------------

CONE_COLUMNS = ("t", "x1", "x2", "x3", "fluxK", "fluxF", "flux_total", "initial_energy",
                "flux_ok", "E_T", "B_T", "E_S1", "B_S1", "E_S2", "B_S2",
                "ratio_T", "ratio_S1", "ratio_S2")
FLUX_TOLERANCE = 0.05


def cone_report_row(history, apex_t, apex_x, ns, ntheta, nphi, initial_energy,
                    workers=1, with_terms=True):
    L = np.array(history[0].rho.shape, dtype=float) * history[0].dx
    cone = build_cone(apex_t, apex_x, ns, ntheta, nphi, lengths=L)
    fk, ff = cone_flux(history, cone, workers)
    total = fk + ff
    row = {
        "t": float(apex_t), "x1": float(apex_x[0]), "x2": float(apex_x[1]), "x3": float(apex_x[2]),
        "fluxK": fk, "fluxF": ff, "flux_total": total, "initial_energy": float(initial_energy),
        "flux_ok": bool(total <= initial_energy * (1.0 + FLUX_TOLERANCE)),
    }
    terms = gs_terms(history, cone, workers) if with_terms else GSFieldTerms()
    for name in ("E_T", "B_T", "E_S1", "B_S1", "E_S2", "B_S2"):
        row[name] = float(_nrm(getattr(terms, name)))
    row["ratio_T"], row["ratio_S1"], row["ratio_S2"] = terms.ratio_T, terms.ratio_S1, terms.ratio_S2
    return row


def pallard_jacobian_check(count, seed=0, h=1e-5):
    """Largest relative gap between pallard_jacobian and its finite-difference oracle."""
    rng = np.random.default_rng(seed)
    d = rng.normal(size=(count, 3))
    xvel = d / _nrm(d)[:, None] * rng.uniform(0.0, 0.99, count)[:, None]
    x0 = rng.uniform(-1.0, 1.0, (count, 3))
    s = rng.uniform(0.0, 1.0, count)
    s_prime = s + rng.uniform(0.1, 2.0, count)
    theta = rng.uniform(0.05, np.pi - 0.05, count)
    phi = rng.uniform(0.0, 2.0 * np.pi, count)
    exact = pallard_jacobian(xvel, s_prime, s, theta, phi)
    approx = pallard_jacobian_fd(x0, xvel, s_prime, s, theta, phi, h)
    return float(np.max(np.abs(approx - exact) / np.abs(exact)))
