"""Command-line entry points, run orchestration, manifests and plot data.

Commands::

    overdamp run   --config FILE [--seed N] [--out DIR] [--junit] [--dump-matrix]
    overdamp check --config FILE
    overdamp study NAME --config FILE [--seed N] [--out DIR] [--junit]

Exit codes: 0 success, 2 invalid configuration, 3 numerical abort (NaN/CFL
floor/conditioning), 4 property-check failure.  Aborts leave an ``ABORTED``
marker file in the output directory.  ``OVERDAMP_THREADS`` caps the ensemble
worker count; it never changes numerical results.
"""

from __future__ import annotations

import argparse
import datetime
import hashlib
import json
import os
import sys
import xml.etree.ElementTree as ET

import numpy as np

from . import __version__, analysis, fredholm, kinetic, langevin, smoluchowski
from .config import (
    STUDY_KINDS,
    ConfigError,
    RunConfig,
    parse_config,
    serialize,
)
from .kernels import KernelTables
from .model import ScalarField, integrate
from .smoluchowski import NumericalAbort


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_text(path, text):
    with open(path, "w", newline="\n") as fh:
        fh.write(text)


def _write_csv(path, header, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(
            repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)
            for v in row
        ))
    _write_text(path, "\n".join(lines) + "\n")


class RunWriter:
    """Collects output files and writes the manifest atomically at the end."""

    def __init__(self, outdir, cfg_text, seed):
        self.outdir = outdir
        self.files = []
        self.plot_rows = []
        self.started = datetime.datetime.now(datetime.timezone.utc).isoformat()
        self.cfg_hash = hashlib.sha256(cfg_text.encode()).hexdigest()
        self.seed = seed
        os.makedirs(outdir, exist_ok=True)

    def path(self, name):
        self.files.append(name)
        return os.path.join(self.outdir, name)

    def add_plot(self, series, xs, ys):
        self.plot_rows.extend((series, float(x), float(y)) for x, y in zip(xs, ys))

    def finish(self, emit_plotdata=False):
        if emit_plotdata and self.plot_rows:
            _write_csv(self.path("plotdata.csv"), ("series", "x", "y"),
                       self.plot_rows)
        manifest = {
            "tool": "overdamp",
            "version": __version__,
            "config_sha256": self.cfg_hash,
            "seed": self.seed,
            "started": self.started,
            "finished": datetime.datetime.now(datetime.timezone.utc).isoformat(),
            "outputs": {
                name: _sha256(os.path.join(self.outdir, name))
                for name in self.files
            },
        }
        tmp = os.path.join(self.outdir, "manifest.json.tmp")
        _write_text(tmp, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        os.replace(tmp, os.path.join(self.outdir, "manifest.json"))

    def abort_marker(self, reason):
        _write_text(os.path.join(self.outdir, "ABORTED"), reason + "\n")


def _dump_system(writer, rho0, tables, params):
    system = fredholm.assemble(rho0, tables, params)
    n = system.matrix.shape[0]
    if n > 4096:
        raise ValueError(f"matrix dump capped at 4096 unknowns (got {n})")
    _write_csv(writer.path("fredholm_matrix.csv"),
               [f"c{j}" for j in range(n)], system.matrix)
    _write_csv(writer.path("fredholm_rhs.csv"), ("rhs",),
               [(v,) for v in system.rhs])


# ---------------------------------------------------------------------------
# solver runners

def _coord_header(dim):
    return ["x", "y", "z"][:dim]


def run_smoluchowski(cfg: RunConfig, writer: RunWriter, dump_matrix=False) -> int:
    grid = cfg.make_grid()
    ks = cfg.build_kernels()
    params = cfg.physical_params()
    tables = KernelTables(grid, ks)
    rho0 = cfg.initial_density(grid, ks)
    if dump_matrix:
        _dump_system(writer, rho0, tables, params)
    t_final = cfg.solver["t_final"]
    traj = smoluchowski.evolve(rho0, t_final, cfg.solver["dt_max"],
                               cfg.solver["rhs"], tables, params,
                               keep_fields=True)
    times = cfg.solver["snapshot_times"] or (t_final,)
    taus = np.asarray(traj.taus)
    centers = grid.cell_centers()
    for i, t in enumerate(times):
        k = int(np.argmin(np.abs(taus - t)))
        rows = np.column_stack([np.full(grid.size, taus[k]), centers,
                                traj.rho_history[k]])
        _write_csv(writer.path(f"snapshot_{i:03d}.csv"),
                   ["tau"] + _coord_header(grid.dim) + ["rho"], rows)
    _write_csv(writer.path("summary.csv"), ("tau", "mass", "min_rho", "l2_a"),
               zip(traj.taus, traj.masses, traj.min_rho, traj.l2_a))
    final_delta = float(np.abs(traj.rho_history[-1] - rho0.values).max())
    stats = {
        "final_delta_inf": final_delta,
        "mass_drift": abs(traj.masses[-1] - traj.masses[0]) / traj.masses[0],
        "min_rho": min(traj.min_rho),
        "floor_warnings": traj.state.floor_warnings,
        "steps": len(traj.taus) - 1,
    }
    _write_text(writer.path("run_summary.json"),
                json.dumps(stats, indent=2, sort_keys=True) + "\n")
    writer.add_plot("mass", traj.taus, traj.masses)
    writer.add_plot("min_rho", traj.taus, traj.min_rho)
    writer.add_plot("l2_a", traj.taus, traj.l2_a)
    return 0


def run_kinetic(cfg: RunConfig, writer: RunWriter, dump_matrix=False) -> int:
    grid = cfg.make_grid()
    if grid.dim != 1:
        raise ConfigError(["[physics] dimension: the kinetic solver needs dimension = 1"])
    ks = cfg.build_kernels()
    params = cfg.physical_params()
    tables = KernelTables(grid, ks)
    rho0 = cfg.initial_density(grid, ks)
    if dump_matrix:
        _dump_system(writer, rho0, tables, params)
    kparams = kinetic.KineticParams(nmax=cfg.solver["nmax"])
    f0 = kinetic.maxwellian_field(grid, rho0.values, kparams.nmax)
    traj = kinetic.evolve_kinetic(f0, tables, params, kparams,
                                  cfg.solver["t_final"], keep_snapshots=True)
    xcol = grid.cell_centers()[:, 0]
    times = cfg.solver["snapshot_times"] or (cfg.solver["t_final"],)
    ts = np.asarray([t for t, _ in traj.snapshots])
    for i, t in enumerate(times):
        k = int(np.argmin(np.abs(ts - t)))
        _, coeffs = traj.snapshots[k]
        rows = np.column_stack([xcol, coeffs.T])
        _write_csv(writer.path(f"kinetic_snapshot_{i:03d}.csv"),
                   ["x"] + [f"gamma_{n}" for n in range(kparams.nmax + 1)], rows)
        norms = np.sqrt((coeffs**2).sum(axis=1) * grid.cell_volume)
        writer.add_plot(f"degree_norms_t{ts[k]:.4g}",
                        np.arange(kparams.nmax + 1), norms)
    diag = kinetic.hilbert_diagnostics(traj.field, tables, params)
    diag.update(kinetic.solvability_residuals(rho0, tables, params, kparams))
    diag["mass_drift"] = abs(traj.masses[-1] - traj.masses[0]) / abs(traj.masses[0])
    diag["max_tail_ratio"] = max(traj.tail_ratio)
    _write_text(writer.path("diagnostics.json"),
                json.dumps(diag, indent=2, sort_keys=True) + "\n")
    return 0


def run_langevin(cfg: RunConfig, writer: RunWriter) -> int:
    grid = cfg.make_grid()
    ks = cfg.build_kernels()
    params = cfg.physical_params()
    rho0 = cfg.initial_density(grid, ks)
    ens = langevin.ParticleEnsemble.create(
        grid.lengths, cfg.solver["n_traj"], cfg.solver["n_particles"],
        cfg.solver["seed"], params, rho=rho0, grid=grid,
    )
    t_final = cfg.solver["t_final"]
    times = cfg.solver["snapshot_times"] or (t_final,)
    snaps = langevin.simulate(ens, t_final, cfg.solver["dt"], ks, params,
                              snapshot_times=times)
    for i, (t, pos) in enumerate(snaps):
        nb, n, dim = pos.shape
        traj_ids = np.repeat(np.arange(nb), n)
        part_ids = np.tile(np.arange(n), nb)
        rows = np.column_stack([traj_ids, part_ids, pos.reshape(nb * n, dim)])
        _write_csv(writer.path(f"particles_{i:03d}.csv"),
                   ["traj_id", "particle_id"] + _coord_header(dim),
                   [[int(r[0]), int(r[1]), *r[2:]] for r in rows])
    hist, se = langevin.histogram_density(snaps[-1][1], grid,
                                          cfg.solver["n_particles"])
    centers = grid.cell_centers()
    _write_csv(writer.path("density.csv"),
               _coord_header(grid.dim) + ["rho", "se"],
               np.column_stack([centers, hist.values, se.values]))
    writer.add_plot("density", centers[:, 0], hist.values)
    writer.add_plot("density_se", centers[:, 0], se.values)
    stats = {
        "n_traj": ens.n_traj,
        "n_particles": ens.n_particles,
        "histogram_mass": integrate(hist),
        "snapshot_times": [t for t, _ in snaps],
    }
    _write_text(writer.path("run_summary.json"),
                json.dumps(stats, indent=2, sort_keys=True) + "\n")
    return 0


# ---------------------------------------------------------------------------
# studies

def _density_fn(cfg: RunConfig):
    ks = cfg.build_kernels()
    solver = cfg.solver
    kBT = cfg.physics["kBT"]

    def fn(points):
        kind = solver["initial_density"]
        L = np.asarray(cfg.grid["lengths"])
        c = 0.5 * L
        if kind == "boltzmann":
            vals = np.exp(-ks.v1_value(points) / kBT)
        elif kind == "uniform":
            vals = np.ones(points.shape[0])
        elif kind == "cosine_bump":
            vals = 1.0 + solver["bump_amplitude"] * np.prod(
                np.cos(2.0 * np.pi * (points - c) / L), axis=1)
        else:
            d2 = np.sum((points - c) ** 2, axis=1)
            vals = 0.05 + np.exp(-0.5 * d2 / solver["bump_width"] ** 2)
        # normalise with the midpoint weight of the points' own grid spacing
        return vals * solver["n_total"] / vals.mean() / np.prod(L)

    return fn


def run_study(name, cfg: RunConfig, writer: RunWriter, junit=False) -> int:
    grid = cfg.make_grid()
    spec = cfg.kernel_spec()
    tol = cfg.tolerances or None
    rho0_fn = _density_fn(cfg)
    study = cfg.study
    seed = cfg.solver["seed"]
    if name == "epsilon_convergence":
        report = analysis.epsilon_convergence(
            grid, spec, rho0_fn, study["eps_list"], study["t_final"],
            nmax=cfg.solver["nmax"], seed=seed,
            interacting=study["interacting"], tolerances=tol,
        )
    elif name == "tail_scaling":
        report = analysis.tail_scaling(
            grid, spec, rho0_fn, study["eps_list"], study["t_final"],
            nmax=cfg.solver["nmax"], seed=seed, tolerances=tol,
        )
    elif name == "spectral_checks":
        ks = cfg.build_kernels()
        rho0 = cfg.initial_density(grid, ks)
        report = analysis.spectral_checks(rho0, ks, cfg.physical_params(),
                                          nmax=cfg.solver["nmax"], seed=seed,
                                          tolerances=tol)
    elif name == "integral_pd_check":
        ks = cfg.build_kernels()
        rho0 = cfg.initial_density(grid, ks)
        report = analysis.integral_pd_check(rho0, ks, cfg.physical_params(),
                                            study["n_samples"], seed=seed,
                                            tolerances=tol)
    elif name == "langevin_vs_smoluchowski":
        report = analysis.langevin_vs_smoluchowski(
            grid, spec, rho0_fn, study["gamma_list"], study["t_final"],
            n_traj=cfg.solver["n_traj"], n_particles=cfg.solver["n_particles"],
            seed=seed, kBT=cfg.physics["kBT"], m=cfg.physics["m"],
            tolerances=tol,
        )
    elif name == "compare_formulations":
        report = analysis.formulation_comparison(
            grid, spec, rho0_fn, cfg.physical_params(), study["t_final"],
            lambdas=study["lambda_list"], dt_max=cfg.solver["dt_max"],
            seed=seed, tolerances=tol,
        )
    else:
        raise ConfigError([f"unknown study {name!r}; available: "
                           + ", ".join(STUDY_KINDS)])
    _write_text(writer.path("report.json"), report.to_json() + "\n")
    for label, series in report.metrics.items():
        xs = [p for p, _ in series]
        ys = [v for _, v in series]
        if xs and all(isinstance(x, (int, float)) for x in xs):
            writer.add_plot(label, xs, ys)
    for label, fit in report.fits.items():
        xs = [p for p, _ in next(iter(report.metrics.values()))]
        fitted = [fit["prefactor"] * x ** fit["exponent"] for x in xs]
        writer.add_plot(f"{label}_fit", xs, fitted)
    if junit:
        _write_junit(report, writer.path("report_junit.xml"))
    return 0 if report.passed else 4


def _write_junit(report, path):
    suite = ET.Element("testsuite", name=report.name,
                       tests=str(len(report.checks)))
    failures = 0
    for label, chk in report.checks.items():
        case = ET.SubElement(suite, "testcase", classname=report.name, name=label)
        if not chk["pass"]:
            failures += 1
            ET.SubElement(case, "failure", message=(
                f"value {chk['value']} vs tolerance "
                f"{chk['tolerance_name']}={chk['tolerance']}"
            ))
    suite.set("failures", str(failures))
    tree = ET.ElementTree(suite)
    ET.indent(tree)
    tree.write(path, encoding="unicode", xml_declaration=True)
    with open(path, "a") as fh:
        fh.write("\n")


# ---------------------------------------------------------------------------
# entry point

def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    if getattr(args, "seed", None) is not None:
        cfg.solver["seed"] = args.seed
    if getattr(args, "out", None):
        cfg.output["directory"] = args.out
    if getattr(args, "junit", False):
        pass  # handled by the caller
    return cfg


def _execute(cfg: RunConfig, kind, args) -> int:
    writer = RunWriter(cfg.output["directory"], serialize(cfg),
                       cfg.solver["seed"])
    dump = cfg.output["dump_matrix"] or getattr(args, "dump_matrix", False)
    junit = cfg.output.get("junit", False) or getattr(args, "junit", False)
    try:
        if kind == "smoluchowski":
            code = run_smoluchowski(cfg, writer, dump_matrix=dump)
        elif kind == "kinetic":
            code = run_kinetic(cfg, writer, dump_matrix=dump)
        elif kind == "langevin":
            code = run_langevin(cfg, writer)
        else:
            code = run_study(kind, cfg, writer, junit=junit)
    except (NumericalAbort, fredholm.SolverConditioningError,
            np.linalg.LinAlgError, FloatingPointError) as exc:
        writer.abort_marker(str(exc))
        print(f"numerical abort: {exc}", file=sys.stderr)
        return 3
    writer.finish(emit_plotdata=cfg.output["emit_plotdata"])
    return code


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="overdamp",
        description="Overdamped-limit solvers for interacting Brownian particles",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the solver or study named in the config")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--seed", type=int)
    p_run.add_argument("--out")
    p_run.add_argument("--junit", action="store_true")
    p_run.add_argument("--dump-matrix", action="store_true", dest="dump_matrix")

    p_check = sub.add_parser("check", help="validate the config and exit")
    p_check.add_argument("--config", required=True)

    p_study = sub.add_parser("study", help="run a named study")
    p_study.add_argument("name")
    p_study.add_argument("--config", required=True)
    p_study.add_argument("--seed", type=int)
    p_study.add_argument("--out")
    p_study.add_argument("--junit", action="store_true")

    args = parser.parse_args(argv)
    try:
        cfg = parse_config(args.config)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return 2

    if args.command == "check":
        print("configuration ok")
        return 0
    try:
        cfg = _apply_overrides(cfg, args)
        kind = args.name if args.command == "study" else cfg.solver["kind"]
        if args.command == "study" and kind not in STUDY_KINDS:
            print(f"unknown study {kind!r}; available: {', '.join(STUDY_KINDS)}",
                  file=sys.stderr)
            return 2
        return _execute(cfg, kind, args)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
