"""Continuation-criterion observables and conservation audits.

The support observables are estimators built from macroparticles: P(t) is
2 plus the running maximum of |p|, kappa(t, gamma) is the largest transverse
radius in each azimuthal sector, and A(t) is the discrete L^4 norm of kappa.
A binned sector maximum can only under-estimate the supremum along an exact
ray.
"""
import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .kinematics import azimuth, norm, transverse_radius
from .particles import Ensemble

KAPPA_EPS = 1e-6
DEFAULT_N_GAMMA = 64
ENERGY_TOLERANCE = 1e-2
FSUP_BINS = 4
CSV_COLUMNS = ("t", "P", "A", "integralA2", "sqrt_int_A8", "criterion", "energy", "fsup")
TWO_PI = 2.0 * np.pi


def _momenta(particles):
    if particles is None:
        return np.zeros((0, 3))
    p = getattr(particles, "p", particles)
    return np.asarray(p, dtype=float).reshape(-1, 3)


class MomentumSupport:
    """Running value of P = 2 + sup |p| over all particles seen so far."""

    def __init__(self):
        self.sup = 0.0

    def __call__(self, particles):
        p = _momenta(particles)
        if p.shape[0]:
            self.sup = max(self.sup, float(np.max(norm(p))))
        return 2.0 + self.sup


def momentum_support(particles, tracker=None):
    """2 + max |p|, or the running value when a tracker is passed."""
    return (tracker or MomentumSupport())(particles)


@dataclass
class SupportProfile:
    n_gamma: int
    kappa: np.ndarray
    P: float = 2.0
    t: float = 0.0

    def bin_of(self, p):
        return gamma_bin(azimuth(p), self.n_gamma)


def gamma_bin(gamma, n_gamma):
    idx = np.floor(np.asarray(gamma) / TWO_PI * n_gamma).astype(np.int64)
    return np.clip(idx, 0, n_gamma - 1)


def support_profile(particles, n_gamma=DEFAULT_N_GAMMA, P=None, t=0.0, eps=KAPPA_EPS):
    """Per-sector maximum transverse radius, floored at 1 + eps."""
    if n_gamma < 4:
        raise ValueError("n_gamma must be >= 4")
    p = _momenta(particles)
    kappa = np.full(n_gamma, 1.0 + eps)
    if p.shape[0]:
        r = transverse_radius(p)
        np.maximum.at(kappa, gamma_bin(azimuth(p), n_gamma), r)
    if P is None:
        P = momentum_support(p)
    return SupportProfile(n_gamma, kappa, float(P), float(t))


def a_of_t(profile):
    """(sum_i kappa_i^4 2 pi / n_gamma)^(1/4)."""
    kappa = np.asarray(getattr(profile, "kappa", profile), dtype=float)
    return float((np.sum(kappa**4) * TWO_PI / kappa.size) ** 0.25)


def _cumtrapz(y, t):
    out = np.zeros_like(y)
    if y.size > 1:
        out[1:] = np.cumsum(0.5 * (y[1:] + y[:-1]) * np.diff(t))
    return out


@dataclass
class CriterionSeries:
    t: np.ndarray
    A: np.ndarray
    integral_A2: np.ndarray
    sqrt_int_A8: np.ndarray
    criterion: np.ndarray


def criterion_series(times, A):
    """Running trapezoid integrals of A^2, A^8 and A^2 + (int A^8)^(1/2)."""
    t = np.asarray(times, dtype=float)
    A = np.asarray(A, dtype=float)
    if t.shape != A.shape:
        raise ValueError("times and A must have the same shape")
    if t.size > 1 and np.any(np.diff(t) <= 0):
        raise ValueError("times must be strictly increasing")
    int2 = _cumtrapz(A**2, t)
    root8 = np.sqrt(_cumtrapz(A**8, t))
    crit = _cumtrapz(A**2 + root8, t)
    return CriterionSeries(t, A, int2, root8, crit)


def criterion_integral(A, T):
    """int_0^T (A(t)^2 + (int_0^t A^8)^(1/2)) dt for A sampled uniformly on [0, T]."""
    A = np.atleast_1d(np.asarray(A, dtype=float))
    if A.size < 2:
        return 0.0
    return float(criterion_series(np.linspace(0.0, T, A.size), A).criterion[-1])


# -- conservation audits ----------------------------------------------------


def snapshot_energy(E, B, dx, particles):
    """1/2 sum(|E|^2 + |B|^2) dx^3 + 4 pi sum w p0."""
    field_part = 0.5 * (np.sum(E**2) + np.sum(B**2)) * dx**3
    kin = particles.kinetic_energy() if particles is not None else 0.0
    return float(field_part + kin)


class PhaseSpaceHistogram:
    """Coarse (x, p) histogram with edges frozen at the first snapshot.

    The estimate of sup f is the largest bin mass divided by the bin
    volume. Momenta outside the initial range fall into the outer bins.
    """

    def __init__(self, particles, lengths, bins=FSUP_BINS):
        self.bins = bins
        self.lengths = np.asarray(lengths, dtype=float)
        p = particles.p
        lo = p.min(axis=0) if len(particles) else -np.ones(3)
        hi = p.max(axis=0) if len(particles) else np.ones(3)
        span = np.maximum(hi - lo, 1e-12)
        # pad so that round-off at the extremes stays inside
        self.p_lo = lo - 1e-9 * span
        self.p_hi = hi + 1e-9 * span
        self.volume = float(np.prod(self.lengths / bins) * np.prod((self.p_hi - self.p_lo) / bins))

    def _index(self, coords, lo, hi):
        idx = np.floor((coords - lo) / (hi - lo) * self.bins).astype(np.int64)
        return np.clip(idx, 0, self.bins - 1)

    def estimate(self, particles):
        """(sup f estimate, its standard error from the bin count)."""
        if len(particles) == 0:
            return 0.0, 0.0
        ix = self._index(particles.x, 0.0, self.lengths)
        ip = self._index(particles.p, self.p_lo, self.p_hi)
        flat = np.ravel_multi_index(np.concatenate([ix, ip], axis=1).T, (self.bins,) * 6)
        mass = np.bincount(flat, particles.w, self.bins**6)
        count = np.bincount(flat, minlength=self.bins**6)
        k = int(np.argmax(mass))
        f = mass[k] / self.volume
        return float(f), float(f / np.sqrt(count[k])) if count[k] else 0.0


@dataclass
class AuditReport:
    t: np.ndarray
    energy: np.ndarray
    energy_drift: float
    energy_flag: bool
    fsup: np.ndarray
    fsup_flag: bool


def relative_drift(series):
    series = np.asarray(series, dtype=float)
    if series.size == 0:
        return 0.0
    dev = float(np.max(np.abs(series - series[0])))
    ref = abs(series[0])
    return dev / ref if ref > 0 else dev


def audit_conservation(snapshots, lengths=None, tolerance=ENERGY_TOLERANCE):
    """Energy drift and phase-space sup series over a snapshot sequence.

    Each snapshot needs ``t``, ``E``, ``B``, ``dx`` and ``particles``; the
    energy comes from ``total_energy()`` when the snapshot provides it.
    """
    snaps = list(snapshots)
    if len(snaps) < 2:
        raise ValueError("need at least two snapshots")
    if lengths is None:
        lengths = np.array(snaps[0].E.shape[1:], dtype=float) * snaps[0].dx
    t = np.array([s.t for s in snaps])
    energy = np.array([s.total_energy() if hasattr(s, "total_energy")
                       else snapshot_energy(s.E, s.B, s.dx, s.particles) for s in snaps])
    fsup, sig = np.zeros(len(snaps)), np.zeros(len(snaps))
    first = snaps[0].particles
    if first is not None and len(first):
        hist = PhaseSpaceHistogram(first, lengths)
        for i, s in enumerate(snaps):
            fsup[i], sig[i] = hist.estimate(s.particles)
    drift = relative_drift(energy)
    fsup_flag = bool(np.any(fsup > fsup[0] + 3.0 * sig[0] + 3.0 * sig))
    return AuditReport(t, energy, float(drift), bool(drift > tolerance), fsup, fsup_flag)


# -- per-snapshot report rows -------------------------------------------------


@dataclass
class DiagnosticsRecorder:
    """Builds one CSV row per snapshot; shared by the run and report paths."""

    lengths: np.ndarray
    n_gamma: int = DEFAULT_N_GAMMA
    rows: list = field(default_factory=list)
    times: list = field(default_factory=list)
    a_values: list = field(default_factory=list)
    profiles: list = field(default_factory=list)

    def __post_init__(self):
        self._support = MomentumSupport()
        self._hist = None

    def add(self, t, E, B, dx, particles):
        if particles is None:
            particles = Ensemble.empty()
        if self._hist is None:
            self._hist = PhaseSpaceHistogram(particles, self.lengths)
        P = self._support(particles)
        prof = support_profile(particles, self.n_gamma, P=P, t=t)
        self.profiles.append(prof)
        self.times.append(float(t))
        self.a_values.append(a_of_t(prof))
        series = criterion_series(self.times, self.a_values)
        row = {
            "t": float(t),
            "P": P,
            "A": self.a_values[-1],
            "integralA2": float(series.integral_A2[-1]),
            "sqrt_int_A8": float(series.sqrt_int_A8[-1]),
            "criterion": float(series.criterion[-1]),
            "energy": snapshot_energy(E, B, dx, particles),
            "fsup": self._hist.estimate(particles)[0],
        }
        self.rows.append(row)
        return row

    def csv_text(self):
        return rows_to_csv(self.rows, CSV_COLUMNS)


def rows_to_csv(rows, columns):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(row[c]) for c in columns])
    return buf.getvalue()


def _fmt(value):
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def read_csv_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
