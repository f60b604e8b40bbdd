"""Macroparticle ensemble, relativistic Boris push and charge-conserving deposition.

Each macroparticle of weight w carries charge 4 pi w (the moments are
rho = 4 pi int f dp, j = 4 pi int p_hat f dp) and unit charge-to-mass ratio.

Work is split into blocks of a fixed size independent of the worker count.
Per-block deposition buffers are summed in block order, so results do not
depend on how many threads ran the blocks.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .kinematics import p0 as _p0

BLOCK_SIZE = 8192
FOUR_PI = 4.0 * np.pi


@dataclass
class Ensemble:
    x: np.ndarray
    p: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float).reshape(-1, 3)
        self.p = np.asarray(self.p, dtype=float).reshape(-1, 3)
        self.w = np.asarray(self.w, dtype=float).reshape(-1)
        if not (self.x.shape[0] == self.p.shape[0] == self.w.shape[0]):
            raise ValueError("x, p and w must describe the same number of particles")
        if np.any(self.w < 0):
            raise ValueError("macroparticle weights must be non-negative")

    @classmethod
    def empty(cls):
        return cls(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0))

    def __len__(self):
        return self.w.shape[0]

    def copy(self):
        return Ensemble(self.x.copy(), self.p.copy(), self.w.copy())

    def kinetic_energy(self):
        """4 pi sum w p0 (rest mass included)."""
        if len(self) == 0:
            return 0.0
        return float(FOUR_PI * np.sum(self.w * _p0(self.p)))


def blocks(n, size=BLOCK_SIZE):
    return [slice(i, min(i + size, n)) for i in range(0, n, size)]


def block_map(fn, n, workers=1):
    """Apply fn to every block slice, returning results in block order."""
    sl = blocks(n)
    if workers <= 1 or len(sl) <= 1:
        return [fn(s) for s in sl]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, sl))


def wrap(x, lengths):
    x = np.mod(x, lengths)
    # mod can round up to exactly L for tiny negative inputs
    return np.where(x >= lengths, 0.0, x)


def boris_momentum(p, E, B, dt):
    """Relativistic Boris update of p under E + p_hat x B over dt."""
    h = 0.5 * dt
    um = p + h * E
    g = np.sqrt(1.0 + np.sum(um * um, axis=-1))[..., None]
    t = h * B / g
    s = 2.0 * t / (1.0 + np.sum(t * t, axis=-1))[..., None]
    up = um + np.cross(um + np.cross(um, t), s)
    return up + h * E


def _cic_stencil(xi, base):
    nodes = base[..., None] + np.arange(4)
    return np.maximum(0.0, 1.0 - np.abs(xi[..., None] - nodes))


def esirkepov_block(x_old, x_new, w, dims, dx, dt):
    """Current density and node charge density from one block of particles.

    x_old, x_new are (N, 3) positions in box units (x_new may lie outside the
    box). Returns flat arrays (J of shape (3, ncell), rho of shape (ncell,)).
    """
    ncell = dims[0] * dims[1] * dims[2]
    J = np.zeros((3, ncell))
    rho = np.zeros(ncell)
    if x_old.shape[0] == 0:
        return J, rho
    xi0 = x_old / dx
    xi1 = x_new / dx
    base = np.floor(xi0).astype(np.int64) - 1
    S0 = _cic_stencil(xi0, base)
    S1 = _cic_stencil(xi1, base)
    D = S1 - S0
    s0x, s0y, s0z = S0[:, 0, :, None, None], S0[:, 1, None, :, None], S0[:, 2, None, None, :]
    dX, dY, dZ = D[:, 0, :, None, None], D[:, 1, None, :, None], D[:, 2, None, None, :]

    Wx = dX * (s0y * s0z + 0.5 * dY * s0z + 0.5 * s0y * dZ + dY * dZ / 3.0)
    Wy = dY * (s0x * s0z + 0.5 * dX * s0z + 0.5 * s0x * dZ + dX * dZ / 3.0)
    Wz = dZ * (s0x * s0y + 0.5 * dX * s0y + 0.5 * s0x * dY + dX * dY / 3.0)

    q = (FOUR_PI * w)[:, None, None, None]
    cur = q / (dx * dx * dt)
    jx = -cur * np.cumsum(Wx, axis=1)
    jy = -cur * np.cumsum(Wy, axis=2)
    jz = -cur * np.cumsum(Wz, axis=3)

    ix = np.mod(base[:, 0, None] + np.arange(4), dims[0])
    iy = np.mod(base[:, 1, None] + np.arange(4), dims[1])
    iz = np.mod(base[:, 2, None] + np.arange(4), dims[2])
    flat = ((ix[:, :, None, None] * dims[1] + iy[:, None, :, None]) * dims[2]
            + iz[:, None, None, :]).ravel()
    J[0] = np.bincount(flat, jx.ravel(), ncell)
    J[1] = np.bincount(flat, jy.ravel(), ncell)
    J[2] = np.bincount(flat, jz.ravel(), ncell)
    S1x, S1y, S1z = S1[:, 0, :, None, None], S1[:, 1, None, :, None], S1[:, 2, None, None, :]
    rq = q / dx**3 * (S1x * S1y * S1z)
    rho[:] = np.bincount(flat, rq.ravel(), ncell)
    return J, rho


def node_deposit_block(x, values, dims, dx):
    """CIC deposition of per-particle values (N, k) onto nodes, divided by the cell volume."""
    ncell = dims[0] * dims[1] * dims[2]
    k = values.shape[1]
    out = np.zeros((k, ncell))
    if x.shape[0] == 0:
        return out
    xi = x / dx
    base = np.floor(xi).astype(np.int64)
    frac = xi - base
    for a in (0, 1):
        wa = frac[:, 0] if a else 1.0 - frac[:, 0]
        ia = np.mod(base[:, 0] + a, dims[0])
        for b in (0, 1):
            wb = frac[:, 1] if b else 1.0 - frac[:, 1]
            ib = np.mod(base[:, 1] + b, dims[1])
            for c in (0, 1):
                wc = frac[:, 2] if c else 1.0 - frac[:, 2]
                ic = np.mod(base[:, 2] + c, dims[2])
                flat = (ia * dims[1] + ib) * dims[2] + ic
                s = wa * wb * wc
                for m in range(k):
                    out[m] += np.bincount(flat, s * values[:, m], ncell)
    return out / dx**3


def _sum_ordered(parts):
    total = None
    for part in parts:
        total = part if total is None else total + part
    return total


def deposit_node_values(x, values, dims, dx, workers=1):
    values = np.asarray(values, dtype=float)
    values = values.reshape(x.shape[0], values.shape[-1] if values.ndim > 1 else 1)
    parts = block_map(lambda s: node_deposit_block(x[s], values[s], dims, dx), x.shape[0], workers)
    if not parts:
        return np.zeros((values.shape[1],) + tuple(dims))
    return _sum_ordered(parts).reshape((values.shape[1],) + tuple(dims))


def deposit_charge(ens, dims, dx, workers=1):
    """rho = 4 pi sum w S(x - x_g) / dx^3 on the nodes."""
    return deposit_node_values(ens.x, FOUR_PI * ens.w[:, None], dims, dx, workers)[0]


def deposit_current(x_old, x_new, w, dims, dx, dt, workers=1):
    """Esirkepov current density J^{n+1/2} and rho^{n+1}."""
    n = x_old.shape[0]
    if n == 0:
        return np.zeros((3,) + tuple(dims)), np.zeros(tuple(dims))
    parts = block_map(lambda s: esirkepov_block(x_old[s], x_new[s], w[s], dims, dx, dt), n, workers)
    J = _sum_ordered([pt[0] for pt in parts])
    rho = _sum_ordered([pt[1] for pt in parts])
    return J.reshape((3,) + tuple(dims)), rho.reshape(tuple(dims))


def deposit_energy_momentum(ens, dims, dx, workers=1):
    """Node densities 4 pi int p0 f dp and 4 pi int p f dp."""
    vals = FOUR_PI * ens.w[:, None] * np.concatenate([_p0(ens.p)[:, None], ens.p], axis=1)
    out = deposit_node_values(ens.x, vals, dims, dx, workers)
    return out[0], out[1:]

