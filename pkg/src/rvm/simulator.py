"""Particle-in-cell evolution of the relativistic Vlasov-Maxwell system.

Time levels follow the usual leapfrog: positions, E and B at integer steps,
momenta at half steps. One step is

    gather E^n, B^n -> Boris push p^{n-1/2} -> p^{n+1/2}
    x^{n+1} = x^n + dt p_hat^{n+1/2}
    Esirkepov deposit J^{n+1/2}, rho^{n+1}
    B half step, E full step, B half step

A single species is evolved against a uniform immobile background that
neutralizes the periodic box (needed for div E = rho to be solvable).
"""
import logging
from collections import deque
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .config import ConfigError
from .distributions import AnalyticDistribution
from .grid import FieldGrid, interpolate_fields, step_maxwell
from .particles import (
    Ensemble,
    block_map,
    boris_momentum,
    deposit_charge,
    deposit_current,
    deposit_energy_momentum,
    deposit_node_values,
    wrap,
)
from .kinematics import p_hat

log = logging.getLogger(__name__)

SQRT3 = np.sqrt(3.0)


class SimulationAborted(RuntimeError):
    def __init__(self, step, what):
        super().__init__(f"non-finite {what} detected at step {step}")
        self.step = step


@dataclass
class Snapshot:
    t: float
    step: int
    E: np.ndarray
    B: np.ndarray
    rho: np.ndarray
    J: np.ndarray
    energy_density: np.ndarray
    momentum_density: np.ndarray
    dx: float
    particles: Optional[Ensemble] = None
    kinetic_energy: float = 0.0

    @property
    def dims(self):
        return self.rho.shape

    def field_energy(self):
        return 0.5 * (np.sum(self.E**2) + np.sum(self.B**2)) * self.dx**3

    def total_energy(self):
        return self.field_energy() + self.kinetic_energy


class History:
    """Ring buffer of snapshots with strictly increasing times."""

    def __init__(self, depth=None):
        self._buf = deque(maxlen=depth if depth else None)

    def append(self, snap):
        if self._buf and snap.t <= self._buf[-1].t:
            raise ValueError("snapshot times must be strictly increasing")
        self._buf.append(snap)

    def __len__(self):
        return len(self._buf)

    def __iter__(self):
        return iter(self._buf)

    def __getitem__(self, i):
        return self._buf[i]

    @property
    def times(self):
        return np.array([s.t for s in self._buf])

    @property
    def earliest(self):
        return self._buf[0].t if self._buf else None

    @property
    def latest(self):
        return self._buf[-1].t if self._buf else None

    def check_covers(self, t0, t1):
        if not self._buf:
            raise ValueError("history is empty")
        tol = 1e-9 * max(1.0, abs(t1))
        if self.earliest > t0 + tol:
            raise ValueError(
                f"history does not reach back to t={t0}; earliest covered time is {self.earliest!r}")
        if self.latest < t1 - tol:
            raise ValueError(
                f"history ends at t={self.latest!r}, before the requested t={t1}")

    def bracket(self, s):
        """Indices (k0, k1) and weight alpha so that s = (1-alpha) t_k0 + alpha t_k1."""
        times = self.times
        s = np.asarray(s, dtype=float)
        k1 = np.clip(np.searchsorted(times, s, side="right"), 1, max(len(times) - 1, 1))
        k0 = k1 - 1
        if len(times) == 1:
            return np.zeros_like(k0), np.zeros_like(k0), np.zeros(s.shape)
        alpha = np.clip((s - times[k0]) / (times[k1] - times[k0]), 0.0, 1.0)
        return k0, k1, alpha


@dataclass
class SimState:
    t: float
    step: int
    grid: FieldGrid
    particles: Ensemble
    history: History
    dt: float


def check_cfl(dt, dx):
    if dt <= 0:
        raise ConfigError("dt must be positive")
    if dt > dx / SQRT3 * (1.0 + 1e-12):
        raise ConfigError(f"CFL violated: dt={dt} exceeds dx/sqrt(3)={dx / SQRT3}")


def push_particles(state, dt, workers=1):
    """Boris push and free flight; returns (x_new unwrapped, p_new)."""
    ens, grid = state.particles, state.grid
    check_cfl(dt, grid.dx)

    def work(s):
        Ev, Bv = interpolate_fields(grid.E, grid.B, grid.dx, ens.x[s])
        p_new = boris_momentum(ens.p[s], Ev, Bv, dt)
        x_new = ens.x[s] + dt * p_hat(p_new)
        return x_new, p_new

    parts = block_map(work, len(ens), workers)
    if not parts:
        return np.zeros((0, 3)), np.zeros((0, 3))
    return np.concatenate([a for a, _ in parts]), np.concatenate([b for _, b in parts])


def deposit_moments(particles, grid, workers=1):
    """Node-centred rho = 4 pi sum w S and j = 4 pi sum w p_hat S (per unit volume)."""
    vals = 4.0 * np.pi * particles.w[:, None] * np.concatenate(
        [np.ones((len(particles), 1)), p_hat(particles.p)], axis=1)
    out = deposit_node_values(particles.x, vals, grid.dims, grid.dx, workers)
    return out[0], out[1:]


def total_energy(state):
    return state.grid.field_energy() + state.particles.kinetic_energy()


class Simulation:
    def __init__(self, grid, particles, dt, *, workers=1, snapshot_stride=1,
                 history_depth=None, store_particles=False, t0=0.0):
        check_cfl(dt, grid.dx)
        if snapshot_stride < 1:
            raise ConfigError("snapshot_stride must be >= 1")
        self.workers = int(workers)
        self.snapshot_stride = int(snapshot_stride)
        self.store_particles = store_particles
        self.state = SimState(t0, 0, grid, particles, History(history_depth), float(dt))
        self.record()

    @property
    def history(self):
        return self.state.history

    def snapshot(self):
        st = self.state
        g = st.grid
        if len(st.particles):
            eps, mom = deposit_energy_momentum(st.particles, g.dims, g.dx, self.workers)
        else:
            eps, mom = np.zeros(g.dims), np.zeros((3,) + g.dims)
        return Snapshot(
            t=st.t, step=st.step, E=g.E.copy(), B=g.B.copy(), rho=g.rho.copy(),
            J=g.J.copy(), energy_density=eps, momentum_density=mom, dx=g.dx,
            particles=st.particles.copy() if self.store_particles else None,
            kinetic_energy=st.particles.kinetic_energy(),
        )

    def record(self):
        snap = self.snapshot()
        self.state.history.append(snap)
        return snap

    def step(self):
        st = self.state
        g, ens, dt = st.grid, st.particles, st.dt
        if len(ens):
            x_new, p_new = push_particles(st, dt, self.workers)
            g.J, g.rho = deposit_current(ens.x, x_new, ens.w, g.dims, g.dx, dt, self.workers)
            ens.x = wrap(x_new, g.lengths)
            ens.p = p_new
        step_maxwell(g, dt)
        st.t = st.t + dt
        st.step += 1
        if not (np.all(np.isfinite(g.E)) and np.all(np.isfinite(g.B))):
            raise SimulationAborted(st.step, "field")
        if len(ens) and not np.all(np.isfinite(ens.p)):
            raise SimulationAborted(st.step, "momentum")
        if st.step % self.snapshot_stride == 0:
            return self.record()
        return None

    def run(self, steps, on_snapshot=None):
        for _ in range(int(steps)):
            snap = self.step()
            if snap is not None and on_snapshot is not None:
                on_snapshot(snap)
        return self.state


def initial_momenta(cfg, n, rng):
    kind = cfg.distribution
    if kind == "maxwellian":
        return AnalyticDistribution.maxwellian(cfg.theta, cfg.p_max).sample(n, rng)
    if kind == "pancake":
        dist = AnalyticDistribution.pancake(cfg.kappa0, cfg.pz, lobes=cfg.lobes,
                                            lobe_amp=cfg.lobe_amp)
        return dist.sample(n, rng)
    if kind == "ring":
        return AnalyticDistribution.ring(cfg.r_in, cfg.r_out, cfg.pz).sample(n, rng)
    if kind == "two_stream":
        p = rng.normal(scale=cfg.theta, size=(n, 3))
        sign = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
        p[:, 0] += sign * cfg.drift
        return p
    raise ConfigError(f"unknown distribution {kind!r}")


def build_simulation(cfg, workers=None, store_particles=False):
    """Initial state from a RunConfig: particles, neutralizing background, Gauss-consistent E."""
    grid = FieldGrid((cfg.nx, cfg.ny, cfg.nz), cfg.dx)
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_particles if cfg.distribution != "vacuum" else 0
    if n:
        L = grid.lengths
        x = rng.uniform(0.0, 1.0, (n, 3)) * L
        x = wrap(x, L)
        p = initial_momenta(cfg, n, rng)
        w = np.full(n, cfg.density * np.prod(L) / n)
        ens = Ensemble(x, p, w)
        grid.rho = deposit_charge(ens, grid.dims, grid.dx)
        grid.rho_background = float(4.0 * np.pi * np.sum(w) / np.prod(L))
        grid.solve_gauss()
    else:
        ens = Ensemble.empty()
    if cfg.init_field == "plane_wave":
        k = 2.0 * np.pi * cfg.wave_mode / grid.lengths[0]
        i = np.arange(cfg.nx) * cfg.dx
        grid.E[1] += cfg.wave_amplitude * np.sin(k * i)[:, None, None]
        grid.B[2] += cfg.wave_amplitude * np.sin(k * (i + 0.5 * cfg.dx))[:, None, None]
    return Simulation(grid, ens, cfg.timestep, workers=workers or cfg.workers,
                      snapshot_stride=cfg.snapshot_stride,
                      history_depth=cfg.history_depth or None,
                      store_particles=store_particles)


def run(cfg, on_snapshot=None, workers=None, store_particles=False):
    """Build from config, emit the initial snapshot, step, and return the simulation."""
    sim = build_simulation(cfg, workers=workers, store_particles=store_particles)
    if on_snapshot is not None:
        on_snapshot(sim.history[-1])
    log.info("running %d steps, dt=%g, %d particles", cfg.steps, sim.state.dt,
             len(sim.state.particles))
    sim.run(cfg.steps, on_snapshot)
    return sim


def history_from_frames(entries, workers=1):
    """History of Snapshots from (step, FieldFrame, Ensemble or None) triples.

    Energy and momentum densities are re-deposited from the particles, so a
    run without particle dumps yields zero particle moments.
    """
    hist = History()
    for step, frame, ens in entries:
        dims = frame.dims
        if ens is not None and len(ens):
            eps, mom = deposit_energy_momentum(ens, dims, frame.dx, workers)
            kin = ens.kinetic_energy()
        else:
            eps, mom, kin = np.zeros(dims), np.zeros((3,) + dims), 0.0
        hist.append(Snapshot(t=frame.t, step=step, E=frame.E, B=frame.B, rho=frame.rho,
                             J=frame.J, energy_density=eps, momentum_density=mom,
                             dx=frame.dx, particles=ens, kinetic_energy=kin))
    return hist
