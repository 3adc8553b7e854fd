"""Command-line driver.

Exit codes: 0 success, 1 numerical failure, 2 usage or configuration error.
Progress goes to stderr; summaries go to stdout; everything else to ``--out``.
"""
from __future__ import annotations

import argparse
import dataclasses
import sys
import time
from pathlib import Path

import numpy as np

from . import io
from .exceptions import ConfigError, NumericalError, OptionErrors
from .forward import run_forward, sample_measurements
from .inverse import error_metrics, reconstruct_series
from .multichoice import generate_options, heat_report

EXIT_OK, EXIT_NUMERICAL, EXIT_USAGE = 0, 1, 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _progress(label):
    def report(step, t, loss, wall=None):
        extra = f" wall={wall:.3f}s" if wall is not None else ""
        print(f"[{label}] step {step} t={t:g}s loss={loss:.6e}{extra}", file=sys.stderr, flush=True)
    return report


def _snapshot_steps(n_times, every):
    last = n_times - 1
    steps = set(range(0, n_times, every)) if every and every > 0 else set()
    steps.add(last)
    return sorted(steps)


def _write_snapshots(mesh, solution, out: Path, prefix, every, with_fq=False):
    for s in _snapshot_steps(len(solution.times), every):
        fields = {"temperature": solution.fields[s]}
        if with_fq and solution.recovered_fq is not None:
            fields["recovered_fq"] = solution.recovered_fq[s]
        io.write_vtk(mesh, fields, out / f"{prefix}_{s:05d}.vtk",
                     title=f"{prefix} t={solution.times[s]:g}s")


def _print_summary(title, summary: dict):
    print(title)
    for k, v in summary.items():
        print(f"  {k:12s} {v:.6g}")


# --------------------------------------------------------------------------- commands


def cmd_forward(args) -> int:
    case = io.read_case_config(args.case)
    fw = case.forward
    dt_ref = args.dt_ref if args.dt_ref is not None else fw.dt_ref
    if not dt_ref > 0:
        raise ConfigError("--dt-ref must be positive")
    mesh, system = case.build_system()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    tic = time.perf_counter()
    sol = run_forward(system, np.full(system.n_nodes, fw.initial_temperature), dt_ref, fw.t_end,
                      fw.flux, fw.linear_solver)
    n_steps = len(sol.times) - 1
    print(f"[forward] {n_steps} steps at dt_ref={dt_ref:g}s in {time.perf_counter() - tic:.2f}s",
          file=sys.stderr)
    io.save_solution(sol, out / "reference.npz")
    _write_snapshots(mesh, sol, out, "forward", args.snapshot_every)

    seed = args.seed if args.seed is not None else case.noise.seed
    for name, ids in case.layout_nodes(mesh).items():
        meas = sample_measurements(sol, ids, dt_ref, case.noise.stddev, seed)
        io.write_measurements(meas, out / f"{name}.csv")
        print(f"{name}: {len(ids)} nodes, {len(meas.times)} samples -> {out / (name + '.csv')}")
    print(f"steps: {n_steps}")
    return EXIT_OK


def _reconstruction_config(case, args, c3=None):
    if case.reconstruction is None:
        raise ConfigError("case file has no [reconstruction] table")
    cfg = case.reconstruction.config
    changes = {}
    if getattr(args, "dt_rec", None) is not None:
        changes["dt_rec"] = args.dt_rec
    c3 = c3 if c3 is not None else getattr(args, "c3", None)
    if c3 is not None:
        changes["weights"] = dataclasses.replace(cfg.weights, c3=c3)
    return dataclasses.replace(cfg, **changes)


def _load_measurements(path, system):
    meas = io.read_measurements(path)
    bad = meas.node_ids[(meas.node_ids < 0) | (meas.node_ids >= system.n_nodes)]
    if len(bad):
        raise ConfigError(f"measurement node {int(bad[0])} is not a node of the case mesh "
                          f"({system.n_nodes} nodes)")
    return meas


def _load_reference(path, system):
    ref = io.load_solution(path)
    if ref.fields.shape[1] != system.n_nodes:
        raise ConfigError(f"reference solution has {ref.fields.shape[1]} nodes, "
                          f"case mesh has {system.n_nodes}")
    return ref


def cmd_reconstruct(args) -> int:
    case = io.read_case_config(args.case)
    cfg = _reconstruction_config(case, args)
    mesh, system = case.build_system()
    meas = _load_measurements(args.measurements, system)
    ref = _load_reference(args.reference, system) if args.reference else None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    rec = reconstruct_series(system, cfg, meas, progress=_progress("reconstruct"))
    io.save_solution(rec, out / "reconstruction.npz")
    io.write_fq_csv(rec, system.boundary.gamma_q_nodes, out / "recovered_fq.csv")
    _write_snapshots(mesh, rec, out, "reconstruct", args.snapshot_every, with_fq=True)
    if ref is not None:
        report = error_metrics(rec, ref)
        io.write_report([report.summary()], out / "errors.csv", series=report.series_rows())
        _print_summary(f"reconstruction errors (TSR {cfg.tsr(ref.dt):g})", report.summary())
        if report.excluded:
            print(f"  excluded {report.excluded} node-time pairs with |T_ref| < 0.1 C")
    else:
        print(f"reconstructed {len(rec.times)} steps")
    return EXIT_OK


def parse_grid(text: str) -> list:
    """``"0,0.1,0.5"`` or ``"a..b"`` (5 points) or ``"a..b:n"``."""
    text = text.strip()
    if not text:
        raise ConfigError("c3 grid is empty")
    try:
        if ".." in text:
            lo, _, rest = text.partition("..")
            hi, _, n = rest.partition(":")
            n = int(n) if n else 5
            if n < 1:
                raise ValueError
            grid = np.linspace(float(lo), float(hi), n).tolist()
        else:
            grid = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse c3 grid {text!r}") from None
    if not grid:
        raise ConfigError("c3 grid is empty")
    if any(not np.isfinite(v) or v < 0 for v in grid):
        raise ConfigError("c3 grid values must be non-negative")
    return grid


SWEEP_COLUMNS = ("c3",) + io.ERROR_COLUMNS + ("status",)


def cmd_sweep_c3(args) -> int:
    case = io.read_case_config(args.case)
    grid = parse_grid(args.grid)
    _reconstruction_config(case, args)
    _, system = case.build_system()
    meas = _load_measurements(args.measurements, system)
    ref = _load_reference(args.reference, system)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    rows = []
    for c3 in grid:
        cfg = _reconstruction_config(case, args, c3=c3)
        row = {"c3": c3, **{k: float("nan") for k in io.ERROR_COLUMNS}}
        try:
            rec = reconstruct_series(system, cfg, meas, progress=_progress(f"c3={c3:g}"))
            summary = error_metrics(rec, ref).summary()
            row.update(summary)
            row["status"] = "ok" if np.all(np.isfinite(list(summary.values()))) else "diverged"
        except NumericalError as exc:
            row["status"] = "rank-deficient" if "rank" in str(exc) else "diverged"
        rows.append(row)
    io.write_report(rows, out / "sweep_c3.csv", columns=SWEEP_COLUMNS)
    print(",".join(SWEEP_COLUMNS))
    for row in rows:
        print(",".join(io._cell(row[c]) for c in SWEEP_COLUMNS))
    return EXIT_OK


def _float_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse number list {text!r}") from None


GENERATION_COLUMNS = ("option", "seed", "c4", "avg_rel_pct", "max_rel_pct", "avg_abs_W", "max_abs_W")
HEAT_COLUMNS = ("step", "time", "total_heat", "goal", "abs_err", "rel_err")


def cmd_generate(args) -> int:
    case = io.read_case_config(args.case)
    if case.generation is None:
        raise ConfigError("case file has no [generation] table")
    seeds = None
    if args.seed is not None:
        seeds = [int(v) for v in _float_list(args.seed)]
    c4 = _float_list(args.c4) if args.c4 is not None else None
    configs = case.generation.configs(seeds=seeds, c4=c4)
    if args.jobs < 1:
        raise ConfigError("--jobs must be at least 1")
    mesh, system = case.build_system()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def progress(i, step, t, loss):
        print(f"[option {i + 1}] step {step} t={t:g}s loss={loss:.6e}", file=sys.stderr, flush=True)

    try:
        sols = generate_options(system, configs, case.generation.heat_goal, jobs=args.jobs,
                                progress=progress)
    except OptionErrors as exc:
        for i, err in sorted(exc.errors.items()):
            print(f"option {i + 1} failed: {err}", file=sys.stderr)
        if all(isinstance(e, ValueError) for e in exc.errors.values()):
            return EXIT_USAGE
        return EXIT_NUMERICAL

    rows = []
    for i, (cfg, sol) in enumerate(zip(configs, sols), start=1):
        rep = heat_report(sol)
        tag = f"option{i:02d}"
        io.write_table(rep.rows(), out / f"heat_{tag}.csv", HEAT_COLUMNS)
        _write_snapshots(mesh, sol, out, f"generate_{tag}", args.snapshot_every, with_fq=True)
        rows.append({"option": i, "seed": cfg.seed, "c4": cfg.weights.c4, **rep.summary()})
    io.write_report(rows, out / "generation_summary.csv", columns=GENERATION_COLUMNS)
    print(",".join(GENERATION_COLUMNS))
    for row in rows:
        print(",".join(io._cell(row[c]) for c in GENERATION_COLUMNS))
    return EXIT_OK


# --------------------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fieldrecon", description="Forward runs, field reconstruction and "
                "multiple-option generation for transient heat conduction in a box.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    f = sub.add_parser("forward", help="reference solution and synthetic measurements")
    f.add_argument("case")
    f.add_argument("--dt-ref", type=float)
    f.add_argument("--snapshot-every", type=int, default=0, metavar="N")
    f.add_argument("--seed", type=int, help="noise seed")
    f.add_argument("--out", default="out")
    f.set_defaults(func=cmd_forward)

    r = sub.add_parser("reconstruct", help="reconstruct fields from a measurement CSV")
    r.add_argument("case")
    r.add_argument("measurements")
    r.add_argument("reference", nargs="?", help="reference .npz from `forward` for error reports")
    r.add_argument("--dt-rec", type=float)
    r.add_argument("--c3", type=float)
    r.add_argument("--snapshot-every", type=int, default=0, metavar="N")
    r.add_argument("--out", default="out")
    r.set_defaults(func=cmd_reconstruct)

    s = sub.add_parser("sweep-c3", help="reconstruction errors over a grid of c3 values")
    s.add_argument("case")
    s.add_argument("measurements")
    s.add_argument("reference")
    s.add_argument("grid", help='comma list "0,0.1,0.5,1.0" or range "0.5..1.0[:n]"')
    s.add_argument("--dt-rec", type=float)
    s.add_argument("--out", default="out")
    s.set_defaults(func=cmd_sweep_c3)

    g = sub.add_parser("generate", help="several fields tracking a total-heat goal")
    g.add_argument("case")
    g.add_argument("--seed", help="seed or comma list, replaces generation.seeds")
    g.add_argument("--c4", help="weight or comma list, replaces generation.c4")
    g.add_argument("--jobs", type=int, default=1)
    g.add_argument("--snapshot-every", type=int, default=0, metavar="N")
    g.add_argument("--out", default="out")
    g.set_defaults(func=cmd_generate)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except _UsageError as exc:
        print(f"fieldrecon: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"fieldrecon: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, OSError) as exc:
        print(f"fieldrecon: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
