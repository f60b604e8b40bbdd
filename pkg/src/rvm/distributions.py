"""Analytic momentum distributions with explicit support sets.

Each distribution is spatially uniform and described in cylindrical momentum
coordinates (u, gamma, p3), u being the transverse radius sqrt(p1^2 + p2^2).
The support is {u_lo(gamma, p3) <= u <= u_hi(gamma, p3), |p3| <= pz}, which
lets the quadrature in :mod:`rvm.estimates` map it onto a box and keeps the
integrand smooth up to the boundary.
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np

TWO_PI = 2.0 * np.pi

KINDS = ("maxwellian", "pancake", "ring")


@dataclass(frozen=True)
class AnalyticDistribution:
    """f(p) >= 0 with a known momentum support.

    kind
        ``"pancake"``: indicator of {u <= kappa(gamma), |p3| <= pz} (a needle
        along e3 whose transverse size is set by kappa).
        ``"ring"``: indicator of {r_in <= u <= r_out, |p3| <= pz}.
        ``"maxwellian"``: exp(-|p|^2 / (2 theta^2)) truncated to |p| <= p_max.
    """

    kind: str
    amplitude: float = 1.0
    pz: float = 1.0
    kappa0: float = 2.0
    lobes: int = 0
    lobe_amp: float = 0.0
    kappa_table: Optional[tuple] = None
    r_in: float = 0.0
    r_out: float = 1.0
    theta: float = 1.0
    p_max: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown distribution kind {self.kind!r}")
        if self.amplitude < 0:
            raise ValueError("amplitude must be non-negative")
        if self.kind == "pancake" and not 0 <= self.lobe_amp < 1:
            raise ValueError("lobe_amp must lie in [0, 1)")
        if self.kind == "ring" and not 0 <= self.r_in < self.r_out:
            raise ValueError("ring needs 0 <= r_in < r_out")

    # -- constructors --------------------------------------------------

    @classmethod
    def pancake(cls, kappa0, pz, amplitude=1.0, lobes=0, lobe_amp=0.0):
        return cls("pancake", amplitude=amplitude, pz=pz, kappa0=kappa0,
                   lobes=lobes, lobe_amp=lobe_amp)

    @classmethod
    def pancake_for_support(cls, P, kappa0, amplitude=1.0):
        """Constant-kappa needle whose momentum support gives 2 + sup|p| = P."""
        r = P - 2.0
        if r <= kappa0:
            raise ValueError("P - 2 must exceed kappa0")
        return cls.pancake(kappa0, np.sqrt(r * r - kappa0 * kappa0), amplitude)

    @classmethod
    def pancake_table(cls, kappa_bins, pz, amplitude=1.0):
        kb = tuple(float(k) for k in kappa_bins)
        return cls("pancake", amplitude=amplitude, pz=pz, kappa0=max(kb),
                   kappa_table=kb)

    @classmethod
    def ring(cls, r_in, r_out, pz, amplitude=1.0):
        return cls("ring", amplitude=amplitude, pz=pz, r_in=r_in, r_out=r_out)

    @classmethod
    def maxwellian(cls, theta, p_max, amplitude=1.0):
        return cls("maxwellian", amplitude=amplitude, pz=p_max, theta=theta,
                   p_max=p_max)

    # -- support geometry ----------------------------------------------

    @property
    def axisymmetric(self):
        if self.kind == "pancake":
            return self.kappa_table is None and (self.lobes == 0 or self.lobe_amp == 0)
        return True

    def kappa(self, gamma):
        """Supremum of the transverse radius along the ray of azimuth gamma."""
        gamma = np.mod(np.asarray(gamma, dtype=float), TWO_PI)
        if self.kind == "pancake":
            if self.kappa_table is not None:
                tab = np.asarray(self.kappa_table)
                idx = np.minimum((gamma / TWO_PI * tab.size).astype(int), tab.size - 1)
                return tab[idx]
            return self.kappa0 * (1.0 + self.lobe_amp * np.cos(self.lobes * gamma))
        if self.kind == "ring":
            return np.full_like(gamma, self.r_out)
        return np.full_like(gamma, self.p_max)

    def u_bounds(self, gamma, p3):
        gamma, p3 = np.broadcast_arrays(np.asarray(gamma, float), np.asarray(p3, float))
        if self.kind == "pancake":
            return np.zeros_like(gamma), self.kappa(gamma)
        if self.kind == "ring":
            return np.full_like(gamma, self.r_in), np.full_like(gamma, self.r_out)
        hi = np.sqrt(np.maximum(self.p_max**2 - p3**2, 0.0))
        return np.zeros_like(gamma), hi

    def support_radius(self):
        """sup |p| over the support."""
        if self.kind == "pancake":
            if self.kappa_table is not None:
                k = max(self.kappa_table)
            else:
                k = self.kappa0 * (1.0 + self.lobe_amp)
            return float(np.hypot(k, self.pz))
        if self.kind == "ring":
            return float(np.hypot(self.r_out, self.pz))
        return float(self.p_max)

    def momentum_support(self):
        """P = 2 + sup |p|."""
        return 2.0 + self.support_radius()

    def a_value(self, n=4096):
        """L^4 norm in gamma of kappa, by the midpoint rule."""
        if self.axisymmetric:
            return float(self.kappa(0.0) * TWO_PI**0.25)
        g = (np.arange(n) + 0.5) * TWO_PI / n
        return float((np.sum(self.kappa(g) ** 4) * TWO_PI / n) ** 0.25)

    # -- density -------------------------------------------------------

    def density_cyl(self, u, gamma, p3):
        """f at interior points given in cylindrical coordinates."""
        u, gamma, p3 = np.broadcast_arrays(u, gamma, p3)
        if self.kind == "maxwellian":
            return self.amplitude * np.exp(-(u * u + p3 * p3) / (2.0 * self.theta**2))
        return np.full(u.shape, float(self.amplitude))

    def density(self, p):
        """f(p) for Cartesian momenta, zero off the support."""
        p = np.asarray(p, dtype=float)
        u = np.hypot(p[..., 0], p[..., 1])
        gamma = np.mod(np.arctan2(p[..., 1], p[..., 0]), TWO_PI)
        lo, hi = self.u_bounds(gamma, p[..., 2])
        inside = (u >= lo) & (u <= hi) & (np.abs(p[..., 2]) <= self.pz)
        return np.where(inside, self.density_cyl(u, gamma, p[..., 2]), 0.0)

    # -- sampling ------------------------------------------------------

    def sample(self, n, rng):
        """Draw n momenta distributed proportionally to f."""
        if self.kind == "maxwellian":
            out = np.empty((0, 3))
            while out.shape[0] < n:
                cand = rng.normal(scale=self.theta, size=(2 * (n - out.shape[0]) + 16, 3))
                cand = cand[np.sum(cand * cand, axis=1) <= self.p_max**2]
                out = np.concatenate([out, cand])
            return out[:n]
        if self.kind == "ring":
            gamma = rng.uniform(0.0, TWO_PI, n)
            u = np.sqrt(rng.uniform(self.r_in**2, self.r_out**2, n))
        else:
            kmax = self.kappa0 * (1.0 + self.lobe_amp)
            if self.kappa_table is not None:
                kmax = max(self.kappa_table)
            gamma = np.empty(0)
            # sector area grows like kappa(gamma)^2
            while gamma.size < n:
                g = rng.uniform(0.0, TWO_PI, 2 * n + 16)
                keep = rng.uniform(size=g.size) < (self.kappa(g) / kmax) ** 2
                gamma = np.concatenate([gamma, g[keep]])
            gamma = gamma[:n]
            u = self.kappa(gamma) * np.sqrt(rng.uniform(size=n))
        p3 = rng.uniform(-self.pz, self.pz, n)
        return np.stack([u * np.cos(gamma), u * np.sin(gamma), p3], axis=1)

