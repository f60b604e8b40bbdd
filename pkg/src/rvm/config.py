"""Flat ``key = value`` run configuration.

Lines are ``key = value``; ``#`` starts a comment. Unknown keys are errors so
that typos do not silently fall back to defaults.
"""
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

SQRT3 = np.sqrt(3.0)

DISTRIBUTIONS = ("vacuum", "maxwellian", "pancake", "ring", "two_stream")
INIT_FIELDS = ("gauss", "plane_wave")


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


@dataclass
class Probe:
    """Apex (t, x) of a backward light cone evaluated after the run."""

    t: float
    x: tuple

    def __str__(self):
        return f"{self.t!r} {self.x[0]!r} {self.x[1]!r} {self.x[2]!r}"


@dataclass
class RunConfig:
    nx: int = 16
    ny: int = 16
    nz: int = 16
    dx: float = 1.0
    # explicit dt wins over cfl; cfl is the fraction of the limit dx/sqrt(3)
    dt: float = 0.0
    cfl: float = 0.5
    steps: int = 10
    snapshot_stride: int = 1
    # 0 keeps every snapshot
    history_depth: int = 0
    seed: int = 0
    workers: int = 1
    distribution: str = "vacuum"
    n_particles: int = 0
    density: float = 0.01
    theta: float = 0.1
    p_max: float = 1.0
    drift: float = 0.2
    kappa0: float = 2.0
    pz: float = 5.0
    lobes: int = 0
    lobe_amp: float = 0.0
    r_in: float = 2.5
    r_out: float = 3.0
    n_gamma: int = 64
    probes: list = field(default_factory=list)
    cone_ns: int = 16
    cone_ntheta: int = 16
    cone_nphi: int = 16
    output_dir: str = "run"
    dump_particles: bool = True
    init_field: str = "gauss"
    wave_amplitude: float = 0.0
    wave_mode: int = 1

    @property
    def dims(self):
        return (self.nx, self.ny, self.nz)

    @property
    def lengths(self):
        return np.array(self.dims, dtype=float) * self.dx

    @property
    def timestep(self):
        return float(self.dt if self.dt > 0 else self.cfl * self.dx / SQRT3)

    @property
    def final_time(self):
        return self.steps * self.timestep

    def validate(self):
        if min(self.dims) < 2:
            raise ConfigError("nx, ny, nz must be at least 2")
        if self.dx <= 0:
            raise ConfigError("dx must be positive")
        if self.dt < 0:
            raise ConfigError("dt must be non-negative")
        if self.dt == 0 and not 0 < self.cfl <= 1:
            raise ConfigError("cfl must lie in (0, 1]")
        if self.timestep > self.dx / SQRT3 * (1.0 + 1e-12):
            raise ConfigError(
                f"dt: CFL violated, dt={self.timestep!r} exceeds dx/sqrt(3)={self.dx / SQRT3!r}")
        if self.steps < 0:
            raise ConfigError("steps must be non-negative")
        if self.snapshot_stride < 1:
            raise ConfigError("snapshot_stride must be >= 1")
        if self.history_depth < 0:
            raise ConfigError("history_depth must be non-negative")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.distribution not in DISTRIBUTIONS:
            raise ConfigError(f"distribution: unknown value {self.distribution!r}")
        if self.init_field not in INIT_FIELDS:
            raise ConfigError(f"init_field: unknown value {self.init_field!r}")
        if self.distribution != "vacuum" and self.n_particles < 1:
            raise ConfigError("n_particles must be positive for a non-vacuum distribution")
        if self.density < 0:
            raise ConfigError("density must be non-negative")
        if self.n_gamma < 4:
            raise ConfigError("n_gamma must be >= 4")
        half = 0.5 * float(np.min(self.lengths))
        for pr in self.probes:
            if pr.t <= 0:
                raise ConfigError(f"probes: apex time {pr.t!r} must be positive")
            if pr.t > half:
                raise ConfigError(
                    f"probes: cone radius {pr.t!r} exceeds half the box period {half!r}")
            if pr.t > self.final_time * (1.0 + 1e-12):
                raise ConfigError(
                    f"probes: apex time {pr.t!r} is after the final time {self.final_time!r}")
        if self.probes:
            stride_t = self.snapshot_stride * self.timestep
            kept = self.history_depth if self.history_depth else self.steps // self.snapshot_stride + 1
            if (kept - 1) * stride_t < max(pr.t for pr in self.probes) * (1.0 - 1e-12):
                raise ConfigError("history_depth too small to cover the cone probes")
        for name in ("cone_ns", "cone_ntheta", "cone_nphi"):
            if getattr(self, name) < 8:
                raise ConfigError(f"{name} must be >= 8")
        return self


def _parse_bool(text):
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_probes(text):
    out = []
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        vals = [float(v) for v in chunk.replace(",", " ").split()]
        if len(vals) != 4:
            raise ValueError(f"probe needs 't x y z', got {chunk!r}")
        out.append(Probe(vals[0], tuple(vals[1:])))
    return out


def _format_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, list):
        return "; ".join(str(p) for p in value)
    return str(value)


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _convert(key, text):
    default = _FIELDS[key].default
    if key == "probes":
        return _parse_probes(text)
    if isinstance(default, bool):
        return _parse_bool(text)
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    return text


def parse_config(text, source="<string>"):
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        try:
            values[key] = _convert(key, value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key!r}: {exc}") from None
    return RunConfig(**values).validate()


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {str(path)!r}: {exc.strerror}") from None
    return parse_config(text, str(path))


def format_config(cfg):
    return "".join(f"{f.name} = {_format_value(getattr(cfg, f.name))}\n" for f in fields(cfg))


def write_config(cfg, path):
    Path(path).write_text(format_config(cfg))
