"""Command-line entry point: ``share <command> --out-dir DIR [flags]``.

Exit codes: 0 success, 1 runtime failure, 2 usage error. Failures print one
JSON object on stderr. Every command writes ``manifest.json`` next to its
outputs; reruns with the same flags, inputs and seed are byte-identical apart
from the manifest's ``duration_s``.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from ._io import CsvFormatError, atomic_write_text, fmt, read_csv
from .adapters import AdapterError, FileBridge, OracleParams, SyntheticOracle
from .datagen import (
    DatagenError,
    DiversityConfig,
    emit_config,
    generate_dataset_spec,
    ground_truth_bundle,
    load_parameter_bank,
    write_ground_truth_csv,
)
from .geometry import DEFAULT_RADIUS, CameraPose, GeometryError, build_grid, read_grid_csv, write_grid_csv
from .landscape import (
    SURFACE_CSV_HEADER,
    FitConfig,
    LandscapeError,
    composite_metrics,
    export_landscape,
    fit_landscape,
    load_landscape,
    read_errors_csv,
    samples_to_arrays,
    save_landscape,
    write_surface_csv,
)
from .loop import LOOP_FIT, LoopConfig, LoopError, run_loop, write_report
from .metrics import DegenerateGeometryError, JointCountMismatch, mpjpe, pa_mpjpe, read_joints_csv
from .sampling import RomeConfig, SamplingError, greedy_sample, read_plan_csv, rome_sample, write_plan_csv

log = logging.getLogger("share")

MANIFEST = "manifest.json"

# Raised while turning flags into configs: the caller asked for something invalid.
_INVARIANT_ERRORS = (GeometryError, SamplingError, LandscapeError, LoopError, DatagenError, AdapterError)
# Raised while running: inputs or collaborators misbehaved.
_RUNTIME_ERRORS = (
    CsvFormatError, KeyError, DegenerateGeometryError, JointCountMismatch, LandscapeError, SamplingError,
    LoopError, DatagenError, AdapterError, GeometryError, OSError, ValueError,
)


class UsageError(Exception):
    pass


class Run:
    """Collects inputs and outputs for the manifest."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.out = Path(args.out_dir)
        self.inputs: list[str] = []
        self.outputs: list[str] = []

    def input(self, path) -> Path:
        self.inputs.append(str(path))
        return Path(path)

    def output(self, name: str) -> Path:
        self.outputs.append(name)
        return self.out / name


def _usage(build):
    try:
        return build()
    except _INVARIANT_ERRORS as exc:
        raise UsageError(str(exc)) from exc


def _ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(t) for t in str(text).split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


# -- commands -------------------------------------------------------------------

def cmd_grid(run: Run) -> dict:
    a = run.args
    grid = _usage(lambda: build_grid(a.n_theta, a.n_phi, (a.theta_min, a.theta_max), (a.phi_min, a.phi_max), a.radius))
    write_grid_csv(run.output("grid.csv"), grid)
    return {"poses": len(grid)}


def _fit_config(a) -> FitConfig:
    return FitConfig(
        hidden=a.hidden, activation=a.activation, optimizer=a.optimizer, learning_rate=a.learning_rate,
        iterations=a.iterations, init_scale=a.init_scale, periodic_phi=a.periodic_phi, dtype=a.dtype,
        fd_step=a.fd_step, w_error=a.w_error,
    )


def cmd_fit(run: Run) -> dict:
    a = run.args
    cfg = _usage(lambda: _fit_config(a))
    grid = _usage(lambda: build_grid(a.n_theta, a.n_phi, radius=a.radius))
    samples = read_errors_csv(run.input(a.errors))
    landscape = fit_landscape(samples, cfg, seed=a.seed)
    save_landscape(landscape, run.output("landscape.json"))
    rows = export_landscape(landscape, grid)
    write_surface_csv(run.output("surface.csv"), rows)
    return {"samples": len(samples), "final_loss": landscape.fit_report.final_loss, "surface_rows": len(rows)}


def _scored_poses(run: Run):
    """(poses, X, Y, W, errors_mm) from a surface export, or a landscape plus errors."""
    a = run.args
    if a.surface:
        rows = read_csv(run.input(a.surface), SURFACE_CSV_HEADER)
        poses = [CameraPose(r["theta_deg"], r["phi_deg"], a.radius) for r in rows]
        col = lambda k: np.array([r[k] for r in rows], dtype=float)  # noqa: E731
        return poses, col("X"), col("Y"), col("W"), col("E_mm")
    if not a.errors:
        raise UsageError("sample needs --surface or --errors")
    samples = read_errors_csv(run.input(a.errors))
    poses = [s.pose for s in samples]
    err = np.array([s.error_mm for s in samples], dtype=float)
    if a.method == "greedy":
        return poses, None, None, None, err
    if a.landscape:
        landscape = load_landscape(run.input(a.landscape))
    else:
        landscape = fit_landscape(samples, _usage(lambda: _fit_config(a)), seed=a.seed)
    theta, phi, _ = samples_to_arrays(samples)
    X, Y = landscape.scale_poses(theta, phi)
    _, W = composite_metrics(landscape, X, Y)
    return poses, X, Y, W, err


def cmd_sample(run: Run) -> dict:
    a = run.args
    rome = _usage(lambda: RomeConfig(P=a.P, alpha=a.alpha, seed=a.seed, count_basis=a.count_basis))
    poses, X, Y, W, err = _scored_poses(run)
    if a.method == "greedy":
        plan = greedy_sample(poses, err)
    else:
        plan = rome_sample(poses, X, Y, W, rome)
        if not plan.selected:
            log.warning("RoME selected no poses (no score exceeds the mean); the loop falls back to uniform sampling")
    write_plan_csv(run.output("plan.csv"), plan)
    return plan.summary()


def _oracle_params(a) -> OracleParams:
    fields = {f.name for f in dataclasses.fields(OracleParams)}
    given = {k[len("oracle_"):]: v for k, v in vars(a).items() if k.startswith("oracle_") and v is not None}
    return OracleParams(**{k: v for k, v in given.items() if k in fields})


def cmd_loop(run: Run) -> dict:
    a = run.args

    def build():
        fit = dataclasses.replace(LOOP_FIT, iterations=a.fit_iterations) if a.fit_iterations else LOOP_FIT
        cfg = LoopConfig(
            intervals=a.intervals, epochs_per_interval=a.epochs, augmentation_fraction=a.fraction,
            samples_per_cycle=a.samples, n_theta=a.n_theta, n_phi=a.n_phi, radius=a.radius,
            sampler=a.sampler, rome=RomeConfig(P=a.P, alpha=a.alpha, count_basis=a.count_basis),
            random_fraction=a.random_fraction, fit=fit, warm_start=a.warm_start, seed=a.seed,
        )
        cfg.grid()
        return cfg, _oracle_params(a)

    cfg, oracle = _usage(build)
    if a.timeout <= 0:
        raise UsageError("--timeout must be positive")
    if cfg.intervals == 0:
        return {"intervals": 0}
    if a.adapter == "synthetic":
        adapter = SyntheticOracle(oracle, seed=a.seed, reference_grid=cfg.grid())
    else:
        bridge = Path(a.bridge_dir) if a.bridge_dir else run.out / "bridge"
        adapter = FileBridge(bridge, timeout=a.timeout, poll=a.poll, emit_configs=a.emit_configs)

    run.out.mkdir(parents=True, exist_ok=True)
    means = []

    def on_report(report):
        write_report(report, run.out)
        run.outputs.append(f"report.{report.interval:03d}.json")
        means.append(report.mean_error)

    run_loop(adapter, cfg, on_report)
    return {"intervals": cfg.intervals, "mean_error": means}


def cmd_metrics(run: Run) -> dict:
    a = run.args
    if a.joints_per_set is not None and a.joints_per_set < 1:
        raise UsageError("--joints-per-set must be >= 1")
    pred = read_joints_csv(run.input(a.pred), a.joints_per_set)
    gt = read_joints_csv(run.input(a.gt), a.joints_per_set)
    if len(pred) != len(gt):
        raise JointCountMismatch(f"prediction has {len(pred)} joint sets, ground truth has {len(gt)}")
    per = [{"mpjpe": mpjpe(p, g), "pa_mpjpe": pa_mpjpe(p, g)} for p, g in zip(pred, gt)]
    result = {
        "sets": len(per),
        "joints": int(gt[0].shape[0]) if per else 0,
        "mpjpe": float(np.mean([r["mpjpe"] for r in per])),
        "pa_mpjpe": float(np.mean([r["pa_mpjpe"] for r in per])),
        "per_set": per,
    }
    atomic_write_text(run.output("metrics.json"), json.dumps(result, indent=1) + "\n")
    print(f"MPJPE {fmt(result['mpjpe'], 9)} mm  PA-MPJPE {fmt(result['pa_mpjpe'], 9)} mm")
    return {"mpjpe": result["mpjpe"], "pa_mpjpe": result["pa_mpjpe"]}


def cmd_datagen(run: Run) -> dict:
    a = run.args
    if a.count < 1:
        raise UsageError("--count must be >= 1")
    if bool(a.plan) == bool(a.grid):
        raise UsageError("datagen needs exactly one of --plan or --grid")
    diversity = DiversityConfig()
    if a.bank:
        shape, pose = load_parameter_bank(run.input(a.bank))
        diversity = DiversityConfig(shape_bank=shape, pose_bank=pose)
    source = read_plan_csv(run.input(a.plan), a.radius) if a.plan else read_grid_csv(run.input(a.grid))
    spec = generate_dataset_spec(source, a.count, diversity, seed=a.seed, interval=a.interval,
                                 augmentation_fraction=a.fraction)
    emit_config(spec, run.output("dataset.json"), engine=a.engine)
    summary = {"scenes": len(spec), "unique_poses": int(len(spec.pose_histogram()[0]))}
    if not a.no_ground_truth:
        write_ground_truth_csv(run.output("ground_truth.csv"), ground_truth_bundle(spec))
    return summary


# -- parser ---------------------------------------------------------------------

def _common(p: argparse.ArgumentParser):
    p.add_argument("--out-dir", required=True, help="directory for outputs and manifest.json")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="JSON object whose keys override flags (use flag names, dashes or underscores)")


def _fit_flags(p: argparse.ArgumentParser):
    d = FitConfig()
    p.add_argument("--hidden", type=_ints, default=d.hidden, help="hidden widths, e.g. 64,64")
    p.add_argument("--activation", default=d.activation, choices=("tanh", "relu"))
    p.add_argument("--optimizer", default=d.optimizer, choices=("adam", "momentum"))
    p.add_argument("--learning-rate", type=float, default=d.learning_rate)
    p.add_argument("--iterations", type=int, default=d.iterations)
    p.add_argument("--init-scale", type=float, default=d.init_scale)
    p.add_argument("--periodic-phi", action="store_true")
    p.add_argument("--dtype", default=d.dtype, choices=("float64", "float32"))
    p.add_argument("--fd-step", type=float, default=d.fd_step)
    p.add_argument("--w-error", default=d.w_error, choices=("scaled", "raw"))


def _rome_flags(p: argparse.ArgumentParser):
    p.add_argument("--P", type=int, default=8, help="regions per axis")
    p.add_argument("--alpha", type=float, default=4.0)
    p.add_argument("--count-basis", default="all", choices=("all", "surviving"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="share", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"share {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("grid", help="write the camera-pose grid CSV")
    _common(p)
    p.add_argument("--n-theta", type=int, default=50)
    p.add_argument("--n-phi", type=int, default=50)
    p.add_argument("--theta-min", type=float, default=-60.0)
    p.add_argument("--theta-max", type=float, default=60.0)
    p.add_argument("--phi-min", type=float, default=0.0)
    p.add_argument("--phi-max", type=float, default=360.0)
    p.add_argument("--radius", type=float, default=DEFAULT_RADIUS)

    p = sub.add_parser("fit", help="fit a loss landscape to per-pose errors")
    _common(p)
    p.add_argument("--errors", required=True, help="CSV with theta_deg,phi_deg,error_mm")
    _fit_flags(p)
    p.add_argument("--n-theta", type=int, default=50, help="export grid size")
    p.add_argument("--n-phi", type=int, default=50)
    p.add_argument("--radius", type=float, default=DEFAULT_RADIUS)

    p = sub.add_parser("sample", help="select adversarial poses")
    _common(p)
    p.add_argument("--method", default="rome", choices=("rome", "greedy"))
    p.add_argument("--surface", help="surface CSV from `fit` (supplies X, Y, W, E_mm)")
    p.add_argument("--errors", help="errors CSV; RoME scores come from --landscape or a fresh fit")
    p.add_argument("--landscape", help="landscape JSON from `fit`")
    p.add_argument("--radius", type=float, default=DEFAULT_RADIUS, help="radius for poses read from a surface")
    _rome_flags(p)
    _fit_flags(p)

    p = sub.add_parser("loop", help="run adversarial fine-tuning intervals")
    _common(p)
    p.add_argument("--adapter", default="synthetic", choices=("synthetic", "file"))
    p.add_argument("--intervals", type=int, default=8)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--fraction", type=float, default=0.15, help="augmentation fraction")
    p.add_argument("--samples", type=int, default=50_000, help="samples per cycle")
    p.add_argument("--n-theta", type=int, default=50)
    p.add_argument("--n-phi", type=int, default=50)
    p.add_argument("--radius", type=float, default=DEFAULT_RADIUS)
    p.add_argument("--sampler", default="rome", choices=("rome", "greedy", "random"))
    _rome_flags(p)
    p.add_argument("--random-fraction", type=float, default=0.5)
    p.add_argument("--fit-iterations", type=int, default=None)
    p.add_argument("--no-warm-start", dest="warm_start", action="store_false")
    p.add_argument("--bridge-dir", help="exchange directory for --adapter file (default OUT_DIR/bridge)")
    p.add_argument("--timeout", type=float, default=600.0, help="seconds to wait for each responder file")
    p.add_argument("--poll", type=float, default=0.05)
    p.add_argument("--emit-configs", action="store_true", help="also write render configs into the exchange directory")
    for f in dataclasses.fields(OracleParams):
        kind = int if f.type in ("int", int) else float
        p.add_argument(f"--oracle-{f.name.replace('_', '-')}", dest=f"oracle_{f.name}", type=kind, default=None)

    p = sub.add_parser("metrics", help="MPJPE and PA-MPJPE between joint CSVs")
    _common(p)
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--joints-per-set", type=int, default=None)

    p = sub.add_parser("datagen", help="draw a render dataset spec from a plan or grid")
    _common(p)
    p.add_argument("--plan", help="plan CSV from `sample`")
    p.add_argument("--grid", help="grid CSV from `grid`")
    p.add_argument("--count", type=int, default=50_000)
    p.add_argument("--interval", type=int, default=0)
    p.add_argument("--fraction", type=float, default=0.15)
    p.add_argument("--engine", help="engine tag written into the config")
    p.add_argument("--bank", help=".npz with shape (K,10) and/or pose (K,72) arrays")
    p.add_argument("--radius", type=float, default=DEFAULT_RADIUS, help="radius for plan poses")
    p.add_argument("--no-ground-truth", action="store_true")
    return parser


COMMANDS = {
    "grid": cmd_grid, "fit": cmd_fit, "sample": cmd_sample,
    "loop": cmd_loop, "metrics": cmd_metrics, "datagen": cmd_datagen,
}


def _apply_config(parser: argparse.ArgumentParser, args: argparse.Namespace) -> None:
    """Overlay a JSON bundle on parsed flags, coercing through each flag's type."""
    try:
        bundle = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read --config {args.config}: {exc}") from exc
    if not isinstance(bundle, dict):
        raise UsageError("--config must hold a JSON object")
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction)).choices[args.command]
    actions = {a.dest: a for a in sub._actions}
    for key, value in bundle.items():
        dest = key.lstrip("-").replace("-", "_")
        if dest in ("config", "command", "help") or dest not in actions:
            raise UsageError(f"--config: unknown option {key!r} for {args.command}")
        act = actions[dest]
        if act.type is not None and value is not None:
            try:
                value = act.type(",".join(map(str, value)) if isinstance(value, list) else value)
            except (TypeError, ValueError, argparse.ArgumentTypeError) as exc:
                raise UsageError(f"--config: bad value for {key!r}: {exc}") from exc
        if act.choices is not None and value not in act.choices:
            raise UsageError(f"--config: {key!r} must be one of {sorted(act.choices)}")
        setattr(args, dest, value)


def _snapshot(args: argparse.Namespace) -> dict:
    skip = {"config", "verbose", "out_dir", "seed", "command"}
    return {k: list(v) if isinstance(v, tuple) else v for k, v in sorted(vars(args).items()) if k not in skip}


def _fail(code: int, kind: str, message: str) -> int:
    print(json.dumps({"error": kind, "message": message, "exit": code}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits 2 with usage text on bad flags
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    start = time.perf_counter()
    run = Run(args)
    try:
        if args.config:
            _apply_config(parser, args)
            run.inputs.append(str(args.config))
        run.out.mkdir(parents=True, exist_ok=True)
        result = COMMANDS[args.command](run)
    except UsageError as exc:
        return _fail(2, "usage", str(exc))
    except _RUNTIME_ERRORS as exc:
        return _fail(1, type(exc).__name__, str(exc))

    manifest = {
        "command": args.command,
        "config": _snapshot(args),
        "seed": args.seed,
        "inputs": run.inputs,
        "outputs": run.outputs,
        "result": result,
        "version": __version__,
        "duration_s": round(time.perf_counter() - start, 6),
    }
    atomic_write_text(run.out / MANIFEST, json.dumps(manifest, indent=1, default=float) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
