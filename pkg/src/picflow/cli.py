"""Command-line surface.

Subcommands: simulate, assemble, train, predict, eval, heatmap. All
commands are deterministic for fixed inputs and seeds; failures exit
nonzero after printing a single machine-readable JSON error line to
stderr.

Environment overrides: PICFLOW_SEED (training seed) and PICFLOW_OUTDIR
(prepended to relative output paths).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import checkpoint as ckpt
from . import fv, parr, reports, statespace, training
from .config import ConfigError, load_case
from .model import Picrnn
from .reservoir import ControlSchedule, Trajectory
from .units import DAY_TO_S

# fractions of the horizon at which snapshots are reported by default
# (days 20, 60, 100, 160, 180 of a 200-day run, scaled proportionally)
REPORT_FRACTIONS = (0.1, 0.3, 0.5, 0.8, 0.9)


class CliError(Exception):
    pass


def _out_path(path: str) -> str:
    base = os.environ.get("PICFLOW_OUTDIR")
    if base and not os.path.isabs(path):
        os.makedirs(base, exist_ok=True)
        return os.path.join(base, path)
    return path


def _load_case(path):
    if not os.path.exists(path):
        raise CliError(f"config file not found: {path}")
    return load_case(path)


def _system_and_x0(model):
    system = statespace.assemble(model)
    x0 = np.full(system.n, model.rock_fluid.initial_pressure)
    return system, x0


def _solver_config(args) -> fv.SolverConfig:
    return fv.SolverConfig(tolerance=args.tolerance, method=args.method,
                           jacobi_preconditioner=args.jacobi)


def _add_solver_args(sub):
    sub.add_argument("--tolerance", type=float, default=1e-10)
    sub.add_argument("--method", choices=("cg", "dense"), default="cg")
    sub.add_argument("--jacobi", action="store_true",
                     help="enable the Jacobi preconditioner")


def default_snapshot_indices(total: int) -> list[int]:
    """Snapshot indices at the standard reporting fractions of the horizon."""
    return sorted({max(1, round(f * total)) for f in REPORT_FRACTIONS})


def cmd_simulate(args) -> int:
    model, schedule = _load_case(args.config)
    system, x0 = _system_and_x0(model)
    traj = fv.simulate(system, x0, schedule, _solver_config(args))
    parr.write_array(_out_path(args.out), traj.as_fields(model.grid))
    if args.rates:
        rates = np.stack([fv.well_rates(system, traj.snapshots[k + 1],
                                        schedule.control_at(k))
                          for k in range(schedule.num_steps)])
        reports.write_well_rates_csv(_out_path(args.rates),
                                     schedule.dt / DAY_TO_S, rates,
                                     [w.name for w in model.wells])
    print(f"simulated {schedule.num_steps} steps -> {_out_path(args.out)}")
    return 0


def cmd_assemble(args) -> int:
    model, _ = _load_case(args.config)
    system, _ = _system_and_x0(model)
    out_dir = _out_path(args.out_dir)
    os.makedirs(out_dir, exist_ok=True)
    parr.write_array(os.path.join(out_dir, "V.parr"), system.v_diag)
    for tag, matrix in (("T", system.t_matrix), ("B", system.b_matrix)):
        coo = matrix.tocoo()
        triplets = np.column_stack([coo.row.astype(float),
                                    coo.col.astype(float), coo.data])
        parr.write_array(os.path.join(out_dir, f"{tag}_triplets.parr"), triplets)
    print(f"exported V, T, B -> {out_dir}")
    return 0


def _load_train_config(path, schedule) -> training.TrainConfig:
    with open(path) as fh:
        doc = json.load(fh)
    allowed = {"epochs", "learning_rate", "decay", "decay_interval", "steps",
               "dt", "beta", "scaling", "seed", "checkpoint_every", "grad_clip"}
    unknown = set(doc) - allowed
    if unknown:
        raise CliError(f"train config: unknown keys {sorted(unknown)}")
    if "epochs" not in doc:
        raise CliError("train config: missing key 'epochs'")
    doc.setdefault("steps", schedule.num_steps)
    if "PICFLOW_SEED" in os.environ:
        doc["seed"] = int(os.environ["PICFLOW_SEED"])
    return training.TrainConfig(**doc)


def cmd_train(args) -> int:
    model, schedule = _load_case(args.config)
    system, x0 = _system_and_x0(model)
    cfg = _load_train_config(args.train_config, schedule)
    normalizer = training.normalizer_for(model, schedule)
    surrogate = Picrnn(model.grid,
                       [model.grid.flatten(w.i, w.j) for w in model.wells],
                       normalizer, seed=cfg.seed)
    out_dir = _out_path(args.out)
    os.makedirs(out_dir, exist_ok=True)

    def hook(tag, epoch, s, record):
        ckpt.save(os.path.join(out_dir, tag), s, epoch=epoch)
        record.write_csv(os.path.join(out_dir, "loss.csv"))

    try:
        _, record = training.train(surrogate, system, x0, schedule, cfg,
                                   checkpoint_hook=hook)
    except training.TrainingDiverged as exc:
        exc.record.write_csv(os.path.join(out_dir, "loss.csv"))
        raise CliError(f"training diverged: {exc}") from exc
    ckpt.save(os.path.join(out_dir, "final"), surrogate, epoch=cfg.epochs - 1)
    record.write_csv(os.path.join(out_dir, "loss.csv"))
    reports.save_loss_figure(record.epochs, record.losses,
                             os.path.join(out_dir, "loss.png"))
    final = record.losses[-1] if record.losses else float("nan")
    print(f"trained {cfg.epochs} epochs, final loss {final:.6g} -> {out_dir}")
    return 0


def cmd_predict(args) -> int:
    if not os.path.isdir(args.checkpoint):
        raise CliError(f"checkpoint not found: {args.checkpoint}")
    surrogate, _, _ = ckpt.load(args.checkpoint)
    model, schedule = _load_case(args.config)
    total = args.steps + args.extrapolate
    if total > schedule.num_steps:
        raise CliError(f"steps + extrapolate = {total} exceeds schedule "
                       f"length {schedule.num_steps}")
    x0 = np.full(model.grid.n, model.rock_fluid.initial_pressure)
    traj, hidden = training.predict(surrogate, x0, schedule, args.steps)
    snaps = [traj.snapshots[1:]]
    if args.extrapolate:
        future = ControlSchedule(schedule.values[:, args.steps:], schedule.dt)
        extra, hidden = training.extrapolate(surrogate, traj.snapshots[-1],
                                             hidden, future, args.extrapolate)
        snaps.append(extra.snapshots)
    fields = np.concatenate(snaps).reshape(-1, model.grid.ny, model.grid.nx)
    out = _out_path(args.out)
    parr.write_array(out, fields)
    stem = out[:-5] if out.endswith(".parr") else out
    parr.write_array(stem + ".hidden_h.parr", hidden.h.data)
    parr.write_array(stem + ".hidden_c.parr", hidden.c.data)
    print(f"predicted {total} snapshots -> {out}")
    return 0


def cmd_eval(args) -> int:
    ref = parr.read_array(args.ref)
    test = parr.read_array(args.test)
    if ref.ndim == 2:
        ref = ref[None]
    if test.ndim == 2:
        test = test[None]
    if ref.shape != test.shape:
        raise CliError(f"shape mismatch: ref {ref.shape} vs test {test.shape}")
    well_ij = []
    if args.config:
        model, _ = _load_case(args.config)
        well_ij = [(w.i, w.j) for w in model.wells]
    if args.snapshots:
        indices = [int(s) for s in args.snapshots.split(",")]
    else:
        indices = [min(k, ref.shape[0] - 1)
                   for k in default_snapshot_indices(ref.shape[0] - 1)]
    report = reports.error_report(ref, test, well_ij, indices)
    out_dir = _out_path(args.out_dir)
    os.makedirs(out_dir, exist_ok=True)
    report.write_csv(os.path.join(out_dir, "error_stats.csv"))
    for snap in report.snapshots:
        reports.save_error_figure(
            snap.field, os.path.join(out_dir, f"error_map_{snap.index:05d}.png"),
            title=f"snapshot {snap.index}")
        parr.write_array(os.path.join(out_dir, f"error_map_{snap.index:05d}.parr"),
                         snap.field)
    worst = max(s.overall["max"] for s in report.snapshots)
    print(f"evaluated {len(report.snapshots)} snapshots, "
          f"worst relative error {worst:.3e} -> {out_dir}")
    return 0


def cmd_heatmap(args) -> int:
    data = parr.read_array(args.input)
    if data.ndim == 3:
        if args.snapshot is None:
            raise CliError("--snapshot required for a trajectory input")
        if not 0 <= args.snapshot < data.shape[0]:
            raise CliError(f"snapshot {args.snapshot} outside 0..{data.shape[0] - 1}")
        data = data[args.snapshot]
    elif data.ndim != 2:
        raise CliError(f"heatmap needs a 2D field or 3D stack, got rank {data.ndim}")
    sidecar = reports.heatmap(data, _out_path(args.out))
    print(f"wrote {_out_path(args.out)} (bounds {sidecar['min']:.6g}"
          f"..{sidecar['max']:.6g})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="picflow",
        description="Finite-volume reservoir simulation and physics-informed "
                    "convolutional-recurrent surrogate modeling")
    subs = parser.add_subparsers(dest="command", required=True)

    sub = subs.add_parser("simulate", help="run the reference FV simulator")
    sub.add_argument("--config", required=True)
    sub.add_argument("--out", required=True)
    sub.add_argument("--rates", help="optional per-well rate CSV")
    _add_solver_args(sub)
    sub.set_defaults(func=cmd_simulate)

    sub = subs.add_parser("assemble", help="export V, T, B arrays")
    sub.add_argument("--config", required=True)
    sub.add_argument("--out-dir", required=True)
    sub.set_defaults(func=cmd_assemble)

    sub = subs.add_parser("train", help="train the surrogate")
    sub.add_argument("--config", required=True)
    sub.add_argument("--train-config", required=True)
    sub.add_argument("--out", required=True, help="checkpoint directory")
    sub.set_defaults(func=cmd_train)

    sub = subs.add_parser("predict", help="rollout + extrapolate a checkpoint")
    sub.add_argument("--checkpoint", required=True)
    sub.add_argument("--config", required=True)
    sub.add_argument("--steps", type=int, required=True)
    sub.add_argument("--extrapolate", type=int, default=0)
    sub.add_argument("--out", required=True)
    sub.set_defaults(func=cmd_predict)

    sub = subs.add_parser("eval", help="error report between two trajectories")
    sub.add_argument("--ref", required=True)
    sub.add_argument("--test", required=True)
    sub.add_argument("--config", help="case config (for well locations)")
    sub.add_argument("--snapshots", help="comma-separated snapshot indices")
    sub.add_argument("--out-dir", required=True)
    sub.set_defaults(func=cmd_eval)

    sub = subs.add_parser("heatmap", help="render a field to a PGM image")
    sub.add_argument("--input", required=True)
    sub.add_argument("--snapshot", type=int)
    sub.add_argument("--out", required=True)
    sub.set_defaults(func=cmd_heatmap)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CliError, ConfigError, parr.FormatError, reports.ReportError,
            ckpt.CheckpointError, fv.SolverError, fv.SimulationError,
            statespace.AssemblyError, ValueError, FileNotFoundError) as exc:
        print(json.dumps({"error": str(exc),
                          "kind": type(exc).__name__}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
