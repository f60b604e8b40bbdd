import time
from dataclasses import dataclass, field

import numpy as np
import pytest

from rvm.config import parse_config
from rvm.simulator import build_simulation

ACCEPTANCE_CONFIG = """
nx = 32
ny = 32
nz = 32
cfl = 0.5
steps = 100
snapshot_stride = 10
distribution = two_stream
n_particles = 100000
density = 0.01
theta = 0.1
drift = 0.2
seed = 7
workers = 4
probes = 16 16 16 16; 12 8 8 8; 8 24 8 16; 4 4 28 12; 14.5 0 0 0
"""


@dataclass
class AcceptanceRun:
    cfg: object
    sim: object
    seconds: float
    count0: int
    weight0: float
    div_b: list = field(default_factory=list)
    gauss_step: list = field(default_factory=list)


@pytest.fixture(scope="session")
def acceptance_run():
    """Desk-scale two-stream run with per-step constraint monitoring."""
    cfg = parse_config(ACCEPTANCE_CONFIG)
    start = time.perf_counter()
    sim = build_simulation(cfg, store_particles=True)
    grid = sim.state.grid
    run = AcceptanceRun(cfg, sim, 0.0, len(sim.state.particles), float(np.sum(sim.state.particles.w)))
    scale = float(np.max(np.abs(grid.rho - grid.rho_background)))
    prev = grid.gauss_residual()
    for _ in range(cfg.steps):
        sim.step()
        res = grid.gauss_residual()
        run.div_b.append(float(np.max(np.abs(grid.div_B()))))
        run.gauss_step.append(float(np.max(np.abs(res - prev))) / scale)
        prev = res
    run.seconds = time.perf_counter() - start
    return run


_CRITERIA = {}


@pytest.fixture
def criterion():
    """record(number, passed, detail) stores the line printed in the terminal summary."""

    def record(number, passed, detail):
        key = str(number)
        prev = _CRITERIA.get(key)
        ok = bool(passed) and (prev is None or prev[0])
        text = detail if prev is None else f"{prev[1]}; {detail}"
        _CRITERIA[key] = (ok, text)
        return bool(passed)

    return record


def _sort_key(key):
    head = key.rstrip("abcdefghijklmnopqrstuvwxyz")
    return (int(head), key)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_CRITERIA, key=_sort_key):
        ok, text = _CRITERIA[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'} - {text}")
