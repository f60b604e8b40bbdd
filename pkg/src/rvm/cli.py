"""Command-line entry point: ``rvm simulate | verify | report``.

Config keys (flat ``key = value``, ``#`` comments):

    nx, ny, nz, dx          grid cells per axis and spacing
    dt, cfl                 explicit time step, or the fraction of dx/sqrt(3) when dt = 0
    steps, snapshot_stride  step count and snapshot cadence
    history_depth           snapshots kept in memory for cone probes (0 = all)
    seed, workers           RNG seed and worker threads
    distribution            vacuum | maxwellian | pancake | ring | two_stream
    n_particles, density    macroparticle count and mean charge density
    theta, p_max, drift     maxwellian / two_stream momentum parameters
    kappa0, pz, lobes, lobe_amp, r_in, r_out   pancake and ring parameters
    n_gamma                 azimuthal sectors of the support profile
    probes                  cone apexes "t x y z; t x y z; ..."
    cone_ns, cone_ntheta, cone_nphi            cone quadrature resolution
    output_dir, dump_particles
    init_field              gauss | plane_wave (wave_amplitude, wave_mode)

Exit codes: 0 success, 1 bad input or a failed check, 2 non-finite values
during a simulation.
"""
import argparse
import dataclasses
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import estimates, lightcone
from .config import ConfigError, Probe, load_config, write_config
from .diagnostics import (
    DiagnosticsRecorder,
    a_of_t,
    audit_conservation,
    relative_drift,
    rows_to_csv,
    support_profile,
)
from .io import (
    FormatError,
    list_snapshots,
    load_run,
    particles_name,
    snapshot_name,
    write_particles,
    write_snapshot,
)
from .simulator import SimulationAborted, build_simulation, history_from_frames

log = logging.getLogger("rvm")

SUITES = ("kernels", "main-estimate", "field-bounds", "pallard", "bootstrap", "cone-flux")
VERIFY_COLUMNS = ("name", "samples", "worst_slack", "fitted_C", "spread", "pass")
LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
JACOBIAN_TOLERANCE = 1e-6
BOOTSTRAP_TOLERANCE = 1e-6
REFINEMENT_TOLERANCE = 0.2


class CheckError(Exception):
    """Bad command input; reported on stderr with exit status 1."""


def _setup_logging():
    level = os.environ.get("RVM_LOG", "error").lower()
    logging.basicConfig(level=LOG_LEVELS.get(level, logging.ERROR),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if level not in LOG_LEVELS:
        log.error("RVM_LOG=%r not in %s; using error", level, sorted(LOG_LEVELS))


def _err(msg):
    print(f"rvm: {msg}", file=sys.stderr)


# -- simulate -------------------------------------------------------------------


def _apply_overrides(cfg, args):
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.workers is not None:
        changes["workers"] = args.workers
    if args.out is not None:
        changes["output_dir"] = str(args.out)
    return dataclasses.replace(cfg, **changes).validate() if changes else cfg


def cmd_simulate(args):
    try:
        cfg = _apply_overrides(load_config(args.config), args)
    except ConfigError as exc:
        _err(exc)
        return 1
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_config(cfg, out / "config.txt")
    rec = DiagnosticsRecorder(cfg.lengths, cfg.n_gamma)
    sim = None

    def on_snapshot(snap):
        ens = sim.state.particles
        write_snapshot(out / snapshot_name(snap.step), snap.t, snap.dx, snap.E, snap.B, snap.rho, snap.J)
        if cfg.dump_particles:
            write_particles(out / particles_name(snap.step), ens)
        rec.add(snap.t, snap.E, snap.B, snap.dx, ens)
        log.info("snapshot step %d t=%g", snap.step, snap.t)

    try:
        sim = build_simulation(cfg, store_particles=bool(cfg.probes))
        on_snapshot(sim.history[-1])
        sim.run(cfg.steps, on_snapshot)
    except ConfigError as exc:
        _err(exc)
        return 1
    except SimulationAborted as exc:
        (out / "diagnostics.csv").write_text(rec.csv_text())
        _err(f"aborted: {exc}")
        return 2
    (out / "diagnostics.csv").write_text(rec.csv_text())
    if cfg.probes:
        hist = sim.history
        e0 = hist[0].total_energy()
        rows = [lightcone.cone_report_row(hist, pr.t, pr.x, cfg.cone_ns, cfg.cone_ntheta,
                                          cfg.cone_nphi, e0, cfg.workers) for pr in cfg.probes]
        (out / "cones.csv").write_text(rows_to_csv(rows, lightcone.CONE_COLUMNS))
    print(f"simulated {cfg.steps} steps to t={sim.state.t!r}; output in {out}")
    return 0


# -- verify -----------------------------------------------------------------------


def _slack(lhs, rhs):
    return float((rhs - lhs) / max(abs(rhs), 1e-300))


def suite_kernels(args):
    count = args.count or 10**6
    results = estimates.verify_kernel_inequalities(count, seed=args.seed)
    for res in results:
        if res.witness is not None:
            _err(f"{res.name}: {res.violations} violations, first witness {res.witness}")
    return [res.row() for res in results]


def suite_main_estimate(args):
    p_sweep, a_sweep, region = estimates.main_estimate_scaling()
    parts = region.values + region.extra["region_II"]
    err = float(np.max(np.abs(parts - region.extra["total"]) / region.extra["total"]))
    region_row = {"name": "main_estimate_regions", "samples": len(region.params),
                  "worst_slack": _slack(err, 1e-12), "fitted_C": region.fitted_C,
                  "spread": region.spread, "pass": err <= 1e-12}
    return [p_sweep.row(), a_sweep.row(), region_row]


def suite_field_bounds(args):
    t_rep = estimates.field_T_bound_check()
    half = t_rep.extra["ratio_to_sqrtP"]
    t_row = {"name": "field_T_sqrtP_decreasing", "samples": len(t_rep.params),
             "worst_slack": float(np.min(-np.diff(half) / half[:-1])),
             "fitted_C": float(half[0]), "spread": float(half.max() / half.min()),
             "pass": t_rep.extra["sqrtP_decreasing"]}
    s_rep = estimates.field_S2_check()
    s_row = s_rep.row()
    s_row["pass"] = s_rep.passed and s_rep.extra["cauchy_schwarz"]
    return [t_row, s_row]


def suite_pallard(args):
    count = args.count or 1000
    err = lightcone.pallard_jacobian_check(count, args.seed)
    rows = [{"name": "pallard_jacobian", "samples": count,
             "worst_slack": _slack(err, JACOBIAN_TOLERANCE), "fitted_C": "", "spread": "",
             "pass": err <= JACOBIAN_TOLERANCE}]
    bump = lightcone.GaussianBump(np.zeros(3), 0.3)
    still = lightcone.LinearPath(np.zeros(3), np.zeros(3))
    coarse = lightcone.pallard_integral(still, bump, 1.0)
    fine = lightcone.pallard_integral(still, bump, 1.0, 64, 64, 48, 48)
    r0, r1 = coarse[0] / coarse[1], fine[0] / fine[1]
    change = abs(r1 / r0 - 1.0)
    rows.append({"name": "pallard_refinement", "samples": 2,
                 "worst_slack": _slack(change, REFINEMENT_TOLERANCE), "fitted_C": r0,
                 "spread": max(r0, r1) / min(r0, r1), "pass": change <= REFINEMENT_TOLERANCE})
    ratios = []
    for k in range(1, 5):
        path = lightcone.OscillatingPath(np.zeros(3), 1.0 - 10.0**-k, 3.0)
        I, bound = lightcone.pallard_integral(path, bump, 1.0)
        ratios.append(I / bound)
    ratios = np.array(ratios)
    spread = float(ratios.max() / ratios.min())
    rows.append({"name": "pallard_speed_sweep", "samples": ratios.size,
                 "worst_slack": _slack(spread, estimates.SPREAD_LIMIT), "fitted_C": float(ratios[0]),
                 "spread": spread, "pass": bool(np.all(np.isfinite(ratios)))
                 and spread <= estimates.SPREAD_LIMIT})
    return rows


def suite_bootstrap(args):
    c1 = args.c1
    try:
        closed = estimates.bootstrap_verify(estimates.BootstrapProblem(c1, np.ones(1)))
    except ValueError as exc:
        raise CheckError(str(exc)) from None
    exact = estimates.bootstrap_closed_form(c1, closed.t)
    err = float(np.max(np.abs(np.exp(closed.log_h) - exact) / exact))
    rows = [{"name": "bootstrap_closed_form", "samples": closed.t.size,
             "worst_slack": _slack(err, BOOTSTRAP_TOLERANCE), "fitted_C": "", "spread": "",
             "pass": err <= BOOTSTRAP_TOLERANCE and closed.passed}]
    count = args.count or 100
    margins = [estimates.bootstrap_verify(estimates.BootstrapProblem(c1, g)).margin
               for g in estimates.random_g_profiles(count, args.seed)]
    rows.append({"name": "bootstrap_random_g", "samples": count, "worst_slack": min(margins),
                 "fitted_C": "", "spread": "", "pass": min(margins) >= 0})
    return rows


def _run_probes(run_dir, history):
    cfg_path = Path(run_dir) / "config.txt"
    cfg = load_config(cfg_path) if cfg_path.exists() else None
    if cfg is not None and cfg.probes:
        return cfg.probes, (cfg.cone_ns, cfg.cone_ntheta, cfg.cone_nphi)
    L = np.array(history[0].rho.shape, dtype=float) * history[0].dx
    t = min(history.latest, 0.5 * float(L.min()))
    return [Probe(t, tuple(0.5 * L))], (16, 16, 16)


def suite_cone_flux(args):
    if args.run is None:
        raise CheckError("cone-flux needs --run DIR")
    entries = _load_entries(args.run)
    history = history_from_frames(entries, args.workers or 1)
    if history.latest <= 0:
        raise CheckError(f"{args.run}: run has no snapshot after t=0")
    probes, res = _run_probes(args.run, history)
    e0 = history[0].total_energy()
    with_terms = all(s.particles is not None for s in history)
    rows, out = [], []
    for i, pr in enumerate(probes):
        row = lightcone.cone_report_row(history, pr.t, pr.x, *res, e0, args.workers or 1, with_terms)
        out.append(row)
        limit = e0 * (1.0 + lightcone.FLUX_TOLERANCE)
        rows.append({"name": f"cone_flux_{i}", "samples": res[0] * res[1] * res[2],
                     "worst_slack": _slack(row["flux_total"], limit),
                     "fitted_C": row["flux_total"] / e0 if e0 > 0 else "",
                     "spread": "", "pass": row["flux_ok"]})
    _out_dir(args).joinpath("cone_flux.csv").write_text(rows_to_csv(out, lightcone.CONE_COLUMNS))
    return rows


SUITE_FUNCS = {
    "kernels": suite_kernels,
    "main-estimate": suite_main_estimate,
    "field-bounds": suite_field_bounds,
    "pallard": suite_pallard,
    "bootstrap": suite_bootstrap,
    "cone-flux": suite_cone_flux,
}


def _out_dir(args):
    out = Path(args.out) if args.out is not None else Path(".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_verify(args):
    if args.suite not in SUITE_FUNCS:
        _err(f"unknown suite {args.suite!r}; choose from {', '.join(SUITES)}")
        return 1
    try:
        rows = SUITE_FUNCS[args.suite](args)
    except (CheckError, ConfigError, FormatError) as exc:
        _err(exc)
        return 1
    text = rows_to_csv(rows, VERIFY_COLUMNS)
    path = _out_dir(args) / f"verify_{args.suite.replace('-', '_')}.csv"
    path.write_text(text)
    sys.stdout.write(text)
    failed = [r["name"] for r in rows if not r["pass"]]
    if failed:
        _err(f"failed: {', '.join(failed)}")
        return 1
    return 0


# -- report -----------------------------------------------------------------------


@dataclass
class _Frame:
    t: float
    E: np.ndarray
    B: np.ndarray
    dx: float
    particles: object


def _load_entries(run_dir):
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        raise CheckError(f"{run_dir}: not a directory")
    if not list_snapshots(run_dir):
        raise CheckError(f"{run_dir}: no snapshot files")
    return load_run(run_dir)


def _n_gamma_convergence(particles, n_gamma):
    """A(T) at coarser and finer sector counts; it settles as the binning resolves kappa."""
    counts = sorted({max(4, n_gamma // 4), max(4, n_gamma // 2), n_gamma, 2 * n_gamma, 4 * n_gamma})
    return " ".join(f"{n}={a_of_t(support_profile(particles, n)):.6g}" for n in counts)


def build_report(run_dir, n_gamma=None):
    """(rows, summary text) recomputed from the snapshot and particle files of a run."""
    run_dir = Path(run_dir)
    entries = _load_entries(run_dir)
    cfg_path = run_dir / "config.txt"
    if n_gamma is None:
        n_gamma = load_config(cfg_path).n_gamma if cfg_path.exists() else 64
    first = entries[0][1]
    rec = DiagnosticsRecorder(np.array(first.dims, dtype=float) * first.dx, n_gamma)
    frames = []
    for _, frame, ens in entries:
        rec.add(frame.t, frame.E, frame.B, frame.dx, ens)
        frames.append(_Frame(frame.t, frame.E, frame.B, frame.dx, ens))
    last = rec.rows[-1]
    lines = [
        f"snapshots: {len(rec.rows)}",
        f"final time: {last['t']!r}",
        f"P(T): {last['P']!r}",
        f"A(T): {last['A']!r}",
        f"integral A^2: {last['integralA2']!r}",
        f"sqrt integral A^8: {last['sqrt_int_A8']!r}",
        f"criterion: {last['criterion']!r}",
        "A(T) by n_gamma: " + _n_gamma_convergence(entries[-1][2], n_gamma),
    ]
    if len(frames) > 1 and all(f.particles is not None for f in frames):
        audit = audit_conservation(frames)
        lines.append(f"energy drift: {float(audit.energy_drift)!r} "
                     f"({'FLAG' if audit.energy_flag else 'ok'})")
        lines.append(f"phase-space sup: {'FLAG' if audit.fsup_flag else 'ok'}")
    else:
        drift = relative_drift([r["energy"] for r in rec.rows])
        lines.append(f"energy drift: {float(drift)!r} (particle dumps missing or single snapshot)")
    text = rec.csv_text()
    diag = run_dir / "diagnostics.csv"
    if diag.exists():
        lines.append(f"diagnostics.csv match: {'yes' if diag.read_text() == text else 'no'}")
    return rec.rows, text, "\n".join(lines) + "\n"


def cmd_report(args):
    try:
        _, text, summary = build_report(args.run_dir)
    except (CheckError, ConfigError, FormatError) as exc:
        _err(exc)
        return 1
    out = Path(args.out) if args.out is not None else Path(args.run_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.csv").write_text(text)
    (out / "summary.txt").write_text(summary)
    sys.stdout.write(summary)
    return 0


# -- argument parsing ---------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="rvm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a particle-in-cell simulation")
    sim.add_argument("--config", required=True, type=Path)
    sim.add_argument("--out", type=Path, help="output directory (overrides output_dir)")
    sim.add_argument("--workers", type=int)
    sim.add_argument("--seed", type=int)
    sim.set_defaults(func=cmd_simulate)

    ver = sub.add_parser("verify", help="run a verification suite and write its CSV")
    ver.add_argument("--suite", required=True, help=" | ".join(SUITES))
    ver.add_argument("--seed", type=int, default=0)
    ver.add_argument("--count", type=int, help="sample or profile count")
    ver.add_argument("--c1", type=float, default=2.0, help="bootstrap constant C1")
    ver.add_argument("--run", type=Path, help="run directory for cone-flux")
    ver.add_argument("--out", type=Path, help="directory for the CSV (default: cwd)")
    ver.add_argument("--workers", type=int)
    ver.set_defaults(func=cmd_verify)

    rep = sub.add_parser("report", help="recompute diagnostics from a run directory")
    rep.add_argument("run_dir", type=Path)
    rep.add_argument("--out", type=Path, help="directory for report.csv and summary.txt")
    rep.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    _setup_logging()
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
