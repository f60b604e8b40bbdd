"""Binary snapshot and particle-dump files.

Snapshot ``RVM1``: magic, u32 version, u32 nx, ny, nz, f64 dx, f64 t, then
E (3 components), B (3), rho, j (3) as little-endian f64 in x-fastest order.

Particle dump ``RVP1``: magic, u64 count, then (x1, x2, x3, p1, p2, p3, w)
little-endian f64 records.
"""
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .particles import Ensemble

SNAPSHOT_MAGIC = b"RVM1"
PARTICLE_MAGIC = b"RVP1"
SNAPSHOT_VERSION = 1
_SNAP_HEADER = struct.Struct("<4sIIIIdd")
_PART_HEADER = struct.Struct("<4sQ")
_F64 = np.dtype("<f8")


class FormatError(ValueError):
    """A file does not follow the expected binary layout."""


@dataclass
class FieldFrame:
    """Field and moment arrays of one snapshot file."""

    t: float
    dx: float
    E: np.ndarray
    B: np.ndarray
    rho: np.ndarray
    J: np.ndarray

    @property
    def dims(self):
        return self.rho.shape


def _pack(arr):
    return np.asarray(arr, dtype=_F64).ravel(order="F").tobytes()


def _unpack(buf, offset, dims):
    n = dims[0] * dims[1] * dims[2]
    flat = np.frombuffer(buf, dtype=_F64, count=n, offset=offset)
    return flat.reshape(dims, order="F").astype(float), offset + 8 * n


def write_snapshot(path, t, dx, E, B, rho, J):
    dims = np.shape(rho)
    with open(path, "wb") as fh:
        fh.write(_SNAP_HEADER.pack(SNAPSHOT_MAGIC, SNAPSHOT_VERSION, *dims, float(dx), float(t)))
        for comp in E:
            fh.write(_pack(comp))
        for comp in B:
            fh.write(_pack(comp))
        fh.write(_pack(rho))
        for comp in J:
            fh.write(_pack(comp))


def read_snapshot(path):
    path = Path(path)
    buf = path.read_bytes()
    if len(buf) < _SNAP_HEADER.size or buf[:4] != SNAPSHOT_MAGIC:
        raise FormatError(f"{path}: bad magic, not an RVM1 snapshot")
    _, version, nx, ny, nz, dx, t = _SNAP_HEADER.unpack_from(buf)
    if version != SNAPSHOT_VERSION:
        raise FormatError(f"{path}: unsupported snapshot version {version}")
    dims = (nx, ny, nz)
    expected = _SNAP_HEADER.size + 10 * 8 * nx * ny * nz
    if len(buf) != expected:
        raise FormatError(f"{path}: truncated snapshot ({len(buf)} bytes, expected {expected})")
    off = _SNAP_HEADER.size
    arrays = []
    for _ in range(10):
        a, off = _unpack(buf, off, dims)
        arrays.append(a)
    E = np.stack(arrays[0:3])
    B = np.stack(arrays[3:6])
    return FieldFrame(t, dx, E, B, arrays[6], np.stack(arrays[7:10]))


def write_particles(path, ens):
    rec = np.concatenate([ens.x, ens.p, ens.w[:, None]], axis=1).astype(_F64)
    with open(path, "wb") as fh:
        fh.write(_PART_HEADER.pack(PARTICLE_MAGIC, rec.shape[0]))
        fh.write(np.ascontiguousarray(rec).tobytes())


def read_particles(path):
    path = Path(path)
    buf = path.read_bytes()
    if len(buf) < _PART_HEADER.size or buf[:4] != PARTICLE_MAGIC:
        raise FormatError(f"{path}: bad magic, not an RVP1 particle dump")
    _, count = _PART_HEADER.unpack_from(buf)
    if len(buf) != _PART_HEADER.size + 56 * count:
        raise FormatError(f"{path}: truncated particle dump")
    rec = np.frombuffer(buf, dtype=_F64, offset=_PART_HEADER.size).reshape(count, 7)
    return Ensemble(rec[:, 0:3].copy(), rec[:, 3:6].copy(), rec[:, 6].copy())


# -- run directories -----------------------------------------------------------

SNAPSHOT_PATTERN = "snapshot_*.rvm"


def snapshot_name(step):
    return f"snapshot_{step:06d}.rvm"


def particles_name(step):
    return f"particles_{step:06d}.rvp"


def _step_of(path):
    return int(path.stem.split("_")[1])


def list_snapshots(run_dir):
    """(step, snapshot path, particle path or None) in step order."""
    run_dir = Path(run_dir)
    out = []
    for path in sorted(run_dir.glob(SNAPSHOT_PATTERN), key=_step_of):
        part = run_dir / particles_name(_step_of(path))
        out.append((_step_of(path), path, part if part.exists() else None))
    return out


def load_run(run_dir):
    """[(step, FieldFrame, Ensemble or None)] for every snapshot of a run directory."""
    out = []
    for step, snap_path, part_path in list_snapshots(run_dir):
        frame = read_snapshot(snap_path)
        out.append((step, frame, read_particles(part_path) if part_path else None))
    return out
