"""Command-line front end: pretrain, run, converge and compare.

Exit codes: 0 success, 2 configuration error, 3 training failure,
4 energy violation (fail mode), 5 numerical failure.
"""

import argparse
import csv
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from .config import ExperimentConfig, load_config
from .errors import (ConfigError, DegenerateBasis, EnergyViolation, KernelError, MismatchedProblems,
                     NonFiniteGradient, NotPositiveDefinite)

log = logging.getLogger("neural_galerkin")

EXIT_OK, EXIT_CONFIG, EXIT_TRAIN, EXIT_ENERGY, EXIT_NUMERIC = 0, 2, 3, 4, 5

SCHEMA_TRAJECTORY = "neural-galerkin/trajectory v1"
SCHEMA_LOSS = "neural-galerkin/loss-trace v1"
SCHEMA_ORDER = "neural-galerkin/order-table v1"
SCHEMA_COMPARE = "neural-galerkin/compare v1"

TRAJECTORY_COLUMNS = ["time", "energy", "mass", "error", "basis_id", "wall_seconds"]


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path, schema: str, columns, rows, notes=()):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema: {schema}\n")
        for note in notes:
            fh.write(f"# {note}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def read_csv(path):
    """Rows of a CSV written by this module as dicts of strings (comment lines skipped)."""
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def trajectory_rows(traj):
    return list(zip(traj.times, traj.energy, traj.mass, traj.error, traj.basis_id, traj.wall))


def _apply_flags(cfg: ExperimentConfig, args) -> ExperimentConfig:
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_seed(args.seed)
    if getattr(args, "out", None):
        cfg = replace(cfg, out_dir=args.out)
    if getattr(args, "energy_violation", None):
        cfg = replace(cfg, energy_violation=args.energy_violation)
    return cfg


def _load(path, args) -> ExperimentConfig:
    return _apply_flags(load_config(path), args)


def cmd_pretrain(args) -> int:
    from .experiment import pretrain_experiment
    cfg = _load(args.config, args)
    res, path = pretrain_experiment(cfg)
    trace = write_csv(Path(cfg.out_dir) / "loss_trace.csv", SCHEMA_LOSS, ["step", "lr", "loss"], res.trace)
    print(f"checkpoint: {path}")
    print(f"loss trace: {trace}")
    if res.trace:
        print(f"final loss: {res.trace[-1][2]:.6e}")
    return EXIT_OK


def cmd_run(args) -> int:
    from .experiment import run_experiment
    cfg = _load(args.config, args)
    traj = run_experiment(cfg)
    path = write_csv(Path(cfg.out_dir) / "trajectory.csv", SCHEMA_TRAJECTORY, TRAJECTORY_COLUMNS,
                     trajectory_rows(traj), notes=[f"method: {cfg.label}", f"problem: {cfg.problem_name}"])
    print(f"trajectory: {path}")
    if traj.final_error is not None:
        print(f"final relative L2 error: {traj.final_error:.6e}")
    return EXIT_OK


def cmd_converge(args) -> int:
    from .experiment import converge, local_slopes
    cfg = _load(args.config, args)
    dts = [float(v) for v in args.dt.split(",")] if args.dt else None
    dt_list, errors, slope, (i, j) = converge(cfg, dts, workers=args.threads)
    local = [None] + list(local_slopes(dt_list, errors))
    rows = [(dt, err, None if s is None else float(s), int(i <= k <= j))
            for k, (dt, err, s) in enumerate(zip(dt_list, errors, local))]
    path = write_csv(Path(cfg.out_dir) / "order.csv", SCHEMA_ORDER, ["dt", "error", "local_slope", "in_window"], rows,
                     notes=[f"fitted_slope: {slope!r}", f"integrator: {cfg.integrator.kind}"])
    print(f"order table: {path}")
    print(f"fitted slope: {slope:.3f}")
    return EXIT_OK


def _compare_one(cfg):
    from .experiment import run_experiment
    traj = run_experiment(cfg)
    return [(cfg.label, t, e, err) for t, e, err in zip(traj.times, traj.energy, traj.error)]


def cmd_compare(args) -> int:
    from concurrent.futures import ProcessPoolExecutor
    from .experiment import check_comparable
    paths = list(args.configs or []) + list(args.config or [])
    if not paths:
        raise ConfigError("compare needs at least one config")
    cfgs = [_load(p, args) for p in paths]
    labels = [c.label for c in cfgs]
    if len(set(labels)) != len(labels):
        raise ConfigError(f"method labels must be distinct, got {labels}")
    check_comparable(cfgs)
    if args.threads > 1 and len(cfgs) > 1:
        with ProcessPoolExecutor(args.threads) as pool:
            parts = list(pool.map(_compare_one, cfgs))
    else:
        parts = [_compare_one(c) for c in cfgs]
    rows = sorted((r for part in parts for r in part), key=lambda r: (r[0], r[1]))
    out_dir = Path(args.out or cfgs[0].out_dir)
    path = write_csv(out_dir / "compare.csv", SCHEMA_COMPARE, ["method", "time", "energy", "error"], rows)
    print(f"comparison: {path}")
    for part in sorted(parts, key=lambda p: p[0][0]):
        errs = [r[3] for r in part if r[3] is not None]
        if errs:
            print(f"{part[0][0]}: final relative L2 error {errs[-1]:.6e}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="override basis.seed and training.seed")
    common.add_argument("--out", help="output directory (overrides output.dir)")
    common.add_argument("--threads", type=int, default=1, help="worker processes for independent runs")
    common.add_argument("--energy-violation", choices=("warn", "fail"), dest="energy_violation")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="neural-galerkin", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn, helptext in (("pretrain", cmd_pretrain, "train the feature network, write a checkpoint"),
                               ("run", cmd_run, "evolve and write the trajectory CSV")):
        sp = sub.add_parser(name, parents=[common], help=helptext)
        sp.add_argument("--config", required=True)
        sp.set_defaults(func=fn)
    sp = sub.add_parser("converge", parents=[common], help="temporal order table")
    sp.add_argument("--config", required=True)
    sp.add_argument("--dt", help="comma-separated step sizes (overrides converge.dt_list)")
    sp.set_defaults(func=cmd_converge)
    sp = sub.add_parser("compare", parents=[common], help="merge several runs into one long-format CSV")
    sp.add_argument("configs", nargs="*")
    sp.add_argument("--config", action="append")
    sp.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    # keep BLAS single-threaded inside each worker when fanning out
    if args.threads > 1:
        os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
        os.environ.setdefault("OMP_NUM_THREADS", "1")
    try:
        return args.func(args)
    except (ConfigError, MismatchedProblems) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonFiniteGradient as exc:
        print(f"training failed: {exc}", file=sys.stderr)
        return EXIT_TRAIN
    except EnergyViolation as exc:
        print(f"energy violation: {exc}", file=sys.stderr)
        return EXIT_ENERGY
    except (NotPositiveDefinite, KernelError, DegenerateBasis, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
