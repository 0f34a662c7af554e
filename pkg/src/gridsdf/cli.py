"""Command-line entry points: reconstruct, eval, ablate, demo-eikonal-1d.

Every command reads an optional YAML run config, applies ``--set key=value``
overrides and dedicated flags on top, validates everything before touching
any data, and writes the fully resolved config next to its outputs.
Failures print one JSON object ``{"error": kind, "message": ...}`` to stderr
and exit nonzero.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from . import grid as G
from .eikonal1d import run_demo
from .extract import marching_cubes, read_mesh, write_mesh
from .ingest import ParseError, PointCloud, Transform, load_pointcloud, normalize, subsample
from .losses import THREADS_ENV, LossConfig, default_threads
from .metrics import evaluate
from .optim import BUDGETS, Schedule, ScheduleError, Stage, reconstruct

EXIT_CODES = {"config": 2, "io": 3, "parse": 4, "schedule": 5, "input": 6}


class CLIError(Exception):
    def __init__(self, kind, message):
        super().__init__(message)
        self.kind = kind


@dataclass
class ScheduleConfig:
    resolutions: list = field(default_factory=lambda: [64, 128, 256])
    epochs: list = field(default_factory=lambda: [5, 5, 3])
    prune_threshold: float = 0.9
    iterations_per_epoch: int = 12800
    voxel_batch_fraction: float = 0.1
    point_batch_size: int = 5000
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999


@dataclass
class IngestConfig:
    margin: float = 0.1
    subsample: float = 1.0


@dataclass
class MetricConfig:
    tau: float = 0.01
    n_samples: int = 100_000


@dataclass
class PathConfig:
    input: str | None = None
    run_dir: str | None = None
    mesh: str | None = None
    gt: str | None = None
    scan: str | None = None


_SECTIONS = {"loss": LossConfig, "schedule": ScheduleConfig, "ingest": IngestConfig,
             "metrics": MetricConfig, "paths": PathConfig}


@dataclass
class RunConfig:
    """Everything one run depends on; defaults are the reference settings."""

    loss: LossConfig = field(default_factory=LossConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    ingest: IngestConfig = field(default_factory=IngestConfig)
    metrics: MetricConfig = field(default_factory=MetricConfig)
    paths: PathConfig = field(default_factory=PathConfig)
    seed: int = 0
    threads: int = 1

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d) -> "RunConfig":
        if not isinstance(d, dict):
            raise CLIError("config", "config must be a mapping of sections")
        cfg = cls()
        for key, value in d.items():
            if key in _SECTIONS:
                if value is None:
                    continue
                if not isinstance(value, dict):
                    raise CLIError("config", f"section {key!r} must be a mapping")
                section = getattr(cfg, key)
                for k, v in value.items():
                    _assign(section, k, v, f"{key}.{k}")
            elif key in ("seed", "threads"):
                _assign(cfg, key, value, key)
            else:
                raise CLIError("config", f"unknown config key {key!r}")
        return cfg

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    @classmethod
    def loads(cls, text) -> "RunConfig":
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as e:
            raise CLIError("parse", f"config is not valid YAML: {e}") from None
        return cls.from_dict(data or {})

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            text = Path(path).read_text()
        except OSError as e:
            raise CLIError("io", f"cannot read config {path}: {e.strerror or e}") from None
        return cls.loads(text)

    def set(self, dotted, value) -> None:
        """Override one field, e.g. ``set("loss.lambda_c", 0)``."""
        parts = dotted.split(".")
        if len(parts) == 1 and parts[0] in ("seed", "threads"):
            _assign(self, parts[0], value, dotted)
        elif len(parts) == 2 and parts[0] in _SECTIONS:
            _assign(getattr(self, parts[0]), parts[1], value, dotted)
        else:
            raise CLIError("config", f"unknown config key {dotted!r}")

    def apply_budget(self, name) -> None:
        if name not in BUDGETS:
            raise CLIError("config", f"unknown budget {name!r}; choose from {sorted(BUDGETS)}")
        epochs, t = BUDGETS[name]
        self.schedule.epochs = list(epochs)
        self.schedule.prune_threshold = t

    def loss_config(self) -> LossConfig:
        return copy.deepcopy(self.loss)

    def build_schedule(self) -> Schedule:
        s = self.schedule
        stages = [Stage(r, e, s.prune_threshold, s.iterations_per_epoch,
                        s.voxel_batch_fraction, s.point_batch_size)
                  for r, e in zip(s.resolutions, s.epochs)]
        return Schedule(stages, seed=self.seed, lr=s.lr, beta1=s.beta1, beta2=s.beta2)

    def validate(self) -> "RunConfig":
        try:
            self.loss.validate()
        except ValueError as e:
            raise CLIError("config", str(e)) from None
        s = self.schedule
        if len(s.resolutions) != len(s.epochs):
            raise CLIError("config", "schedule.resolutions and schedule.epochs differ in length")
        if not s.lr > 0 or not 0 <= s.beta1 < 1 or not 0 <= s.beta2 < 1:
            raise CLIError("config", "schedule: lr must be positive and betas lie in [0, 1)")
        try:
            self.build_schedule().validate()
        except ScheduleError as e:
            raise CLIError("config", f"schedule: {e}") from None
        if not 0 < self.ingest.margin < 0.5:
            raise CLIError("config", "ingest.margin must lie in (0, 0.5)")
        if not 0 < self.ingest.subsample <= 1:
            raise CLIError("config", "ingest.subsample must lie in (0, 1]")
        if not self.metrics.tau > 0 or self.metrics.n_samples < 1:
            raise CLIError("config", "metrics.tau must be positive and n_samples at least 1")
        if self.seed < 0 or self.threads < 1:
            raise CLIError("config", "seed must be nonnegative and threads at least 1")
        return self


def _assign(obj, name, value, label):
    types = {f.name: f.type for f in fields(obj)}
    if name not in types:
        raise CLIError("config", f"unknown config key {label!r}")
    current = getattr(obj, name)
    try:
        setattr(obj, name, _coerce(value, current, types[name]))
    except (TypeError, ValueError):
        raise CLIError("config", f"{label}: cannot use {value!r}") from None


def _coerce(value, current, annotation):
    # YAML reads "1e-5" as a string, so numbers are coerced from the field's type.
    if isinstance(current, list):
        if isinstance(value, str):
            value = [v for v in value.replace(",", " ").split()]
        elem = type(current[0]) if current else float
        return [elem(float(v)) if elem is int else elem(v) for v in value]
    if isinstance(current, bool):
        return bool(value)
    if isinstance(current, int):
        f = float(value)
        if f != int(f):
            raise ValueError("not an integer")
        return int(f)
    if isinstance(current, float):
        return float(value)
    if "str" in str(annotation):
        return None if value is None else str(value)
    return value


def _parse_value(text):
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError:
        return text


def _float_list(text, label):
    try:
        vals = [float(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise CLIError("config", f"{label}: cannot parse {text!r}") from None
    if not vals:
        raise CLIError("config", f"{label}: empty sweep list")
    return vals


def resolve_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "budget", None):
        cfg.apply_budget(args.budget)
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise CLIError("config", f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        cfg.set(key.strip(), _parse_value(value))
    if getattr(args, "iterations", None) is not None:
        cfg.schedule.iterations_per_epoch = args.iterations
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "threads", None) is not None:
        cfg.threads = args.threads
    elif not (any(s.strip().startswith("threads=") for s in getattr(args, "set", None) or [])
              or (getattr(args, "config", None) and "threads" in _raw_keys(args.config))):
        cfg.threads = default_threads()
    return cfg.validate()


def _raw_keys(path):
    try:
        data = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError):
        return set()
    return set(data) if isinstance(data, dict) else set()


def _load_cloud(path, label="input") -> PointCloud:
    if not path:
        raise CLIError("input", f"no {label} point cloud given")
    if not Path(path).is_file():
        raise CLIError("io", f"{label} file not found: {path}")
    try:
        return load_pointcloud(path)
    except ParseError as e:
        raise CLIError("parse", str(e)) from None
    except OSError as e:
        raise CLIError("io", f"cannot read {path}: {e.strerror or e}") from None
    except ValueError as e:
        raise CLIError("input", f"{path}: {e}") from None


def _prepare_cloud(cfg: RunConfig, path) -> PointCloud:
    cloud = _load_cloud(path)
    try:
        cloud = normalize(cloud, cfg.ingest.margin)
    except ValueError as e:
        raise CLIError("input", str(e)) from None
    if cfg.ingest.subsample < 1:
        cloud = subsample(cloud, cfg.ingest.subsample, np.random.default_rng(cfg.seed))
    return cloud


def run_reconstruction(cfg: RunConfig, cloud: PointCloud, run_dir, mesh_path=None,
                       loss: LossConfig | None = None):
    """Train, extract and write every artifact of one run into ``run_dir``."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    mesh_path = Path(mesh_path) if mesh_path else run_dir / "mesh.ply"
    loss = loss or cfg.loss_config()
    (run_dir / "config.resolved").write_text(cfg.dumps())
    cloud.transform.save(run_dir / "transform.json")

    first = last = None
    with open(run_dir / "log.jsonl", "w") as log:
        def on_step(rec):
            nonlocal first, last
            first = rec["total"] if first is None else first
            last = rec["total"]
            log.write(json.dumps(rec) + "\n")

        try:
            rec = reconstruct(cloud, loss, cfg.build_schedule(), on_step=on_step,
                              threads=cfg.threads)
        except ScheduleError as e:
            raise CLIError("schedule", str(e)) from None
    G.save_grid(rec.grid, run_dir / "grid.vscg")
    mesh = marching_cubes(rec.grid)
    write_mesh(mesh, mesh_path, transform=cloud.transform)
    return {"mesh": str(mesh_path), "vertices": len(mesh.vertices),
            "triangles": len(mesh.triangles), "area": mesh.area(),
            "components": mesh.connected_components(), "watertight": mesh.is_watertight(),
            "initial_loss": first, "final_loss": last}, mesh


def _metrics(mesh_norm, cloud: PointCloud, cfg: RunConfig, gt=None, want_ncs=False):
    """Metrics in normalized units; ``mesh_norm`` lives in the unit cube."""
    gt_pts = gt_nrm = None
    if gt is not None:
        gt_pts, gt_nrm = cloud.transform.apply(gt.positions), gt.normals
    if want_ncs and gt_nrm is None:
        raise CLIError("input", "normal consistency requested but ground truth has no normals")
    return evaluate(mesh_norm, gt_pts if gt_pts is not None else cloud.positions,
                    scan_pts=cloud.positions, gt_normals=gt_nrm,
                    n_samples=cfg.metrics.n_samples,
                    tau=cfg.metrics.tau if gt is not None else None,
                    want_ncs=want_ncs, rng=cfg.seed)


def _write_metrics(rep, run_dir, **extra):
    rep.units = "normalized"
    (Path(run_dir) / "metrics.json").write_text(rep.to_json() + "\n")
    (Path(run_dir) / "metrics.csv").write_text(rep.to_csv(**extra))


def cmd_reconstruct(args) -> int:
    cfg = resolve_config(args)
    if args.input:
        cfg.paths.input = args.input
    if args.run_dir:
        cfg.paths.run_dir = args.run_dir
    if args.mesh:
        cfg.paths.mesh = args.mesh
    if args.gt:
        cfg.paths.gt = args.gt
    run_dir = cfg.paths.run_dir or "run"
    cloud = _prepare_cloud(cfg, cfg.paths.input)
    gt = _load_cloud(cfg.paths.gt, "ground truth") if cfg.paths.gt else None
    summary, mesh = run_reconstruction(cfg, cloud, run_dir, cfg.paths.mesh)
    if not mesh.is_empty:
        _write_metrics(_metrics(mesh, cloud, cfg, gt), run_dir)
    print(json.dumps(summary))
    return 0


def cmd_eval(args) -> int:
    cfg = resolve_config(args)
    if not Path(args.mesh).is_file():
        raise CLIError("io", f"mesh file not found: {args.mesh}")
    try:
        mesh = read_mesh(args.mesh)
    except OSError as e:
        raise CLIError("io", f"cannot read {args.mesh}: {e.strerror or e}") from None
    except (ValueError, KeyError, IndexError) as e:
        raise CLIError("parse", f"{args.mesh}: {e}") from None
    if mesh.is_empty:
        raise CLIError("input", f"{args.mesh}: mesh has no triangles")
    gt = _load_cloud(args.gt, "ground truth")
    scan = _load_cloud(args.scan, "scan") if args.scan else None
    if args.ncs and gt.normals is None:
        raise CLIError("input", "normal consistency requested but ground truth has no normals")
    scale = None
    tau = args.tau
    if args.transform:
        try:
            t = Transform.load(args.transform)
        except OSError as e:
            raise CLIError("io", f"cannot read {args.transform}: {e.strerror or e}") from None
        except (ValueError, KeyError, TypeError) as e:
            raise CLIError("parse", f"{args.transform}: {e}") from None
        scale = t.scale
        if tau is None:
            tau = cfg.metrics.tau / scale
    rep = evaluate(mesh, gt.positions, None if scan is None else scan.positions,
                   gt.normals, n_samples=cfg.metrics.n_samples, tau=tau,
                   want_ncs=args.ncs, scale=scale, rng=cfg.seed)
    print(rep.to_json())
    if args.json:
        Path(args.json).write_text(rep.to_json() + "\n")
    if args.csv:
        Path(args.csv).write_text(rep.to_csv(mesh=args.mesh))
    return 0


def _sweep_settings(args):
    chosen = [x for x in (args.epsilon_list, args.lambda_c_list) if x is not None]
    if len(chosen) + bool(args.drop) != 1:
        raise CLIError("config", "choose exactly one of --epsilon-list, --lambda-c-list, --drop")
    if args.epsilon_list is not None:
        return [("epsilon", v) for v in _float_list(args.epsilon_list, "--epsilon-list")]
    if args.lambda_c_list is not None:
        return [("lambda_c", v) for v in _float_list(args.lambda_c_list, "--lambda-c-list")]
    drops = [d for item in args.drop for d in item.replace(",", " ").split()]
    if not drops:
        raise CLIError("config", "--drop: empty sweep list")
    for d in drops:
        if d not in ("normals", "viscosity", "coarea"):
            raise CLIError("config", f"--drop: unknown component {d!r}")
    return [("drop", "none")] + [("drop", d) for d in drops]


_DROP_WEIGHT = {"normals": "lambda_n", "viscosity": "lambda_v", "coarea": "lambda_c"}

ABLATION_FIELDS = ("setting", "parameter", "value", "area", "components", "watertight",
                   "d_C_one_sided", "d_H_one_sided", "d_C", "d_H", "final_loss")


def cmd_ablate(args) -> int:
    settings = _sweep_settings(args)
    cfg = resolve_config(args)
    if args.input:
        cfg.paths.input = args.input
    if args.gt:
        cfg.paths.gt = args.gt
    outdir = Path(args.out)
    cloud = _prepare_cloud(cfg, cfg.paths.input)
    gt = _load_cloud(cfg.paths.gt, "ground truth") if cfg.paths.gt else None
    rows = []
    for param, value in settings:
        run_cfg = copy.deepcopy(cfg)
        if param == "drop":
            name = f"drop_{value}"
            if value != "none":
                setattr(run_cfg.loss, _DROP_WEIGHT[value], 0.0)
        else:
            name = f"{param}_{value:g}"
            setattr(run_cfg.loss, param, value)
        run_cfg.validate()
        run_cloud = cloud
        if param == "drop" and value == "normals":
            run_cloud = PointCloud(cloud.positions, None, cloud.transform)
        summary, mesh = run_reconstruction(run_cfg, run_cloud, outdir / name)
        row = {"setting": name, "parameter": param, "value": value,
               "area": summary["area"], "components": summary["components"],
               "watertight": summary["watertight"], "final_loss": summary["final_loss"]}
        if not mesh.is_empty:
            rep = _metrics(mesh, cloud, run_cfg, gt)
            _write_metrics(rep, outdir / name, setting=name)
            row.update(d_C_one_sided=rep.d_C_one_sided, d_H_one_sided=rep.d_H_one_sided,
                       d_C=rep.d_C if gt is not None else None,
                       d_H=rep.d_H if gt is not None else None)
        rows.append(row)
    outdir.mkdir(parents=True, exist_ok=True)
    with open(outdir / "ablation.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=ABLATION_FIELDS)
        w.writeheader()
        for row in rows:
            w.writerow({k: row.get(k) for k in ABLATION_FIELDS})
    print(json.dumps(rows))
    return 0


def cmd_demo_eikonal_1d(args) -> int:
    if not args.epsilon > 0:
        raise CLIError("config", "--epsilon must be positive")
    summary = run_demo(args.out, res=args.res, epsilon=args.epsilon)
    Path(args.out, "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(json.dumps(summary))
    return 0


def _common(p, run=True):
    p.add_argument("-c", "--config", help="YAML run config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config field, e.g. loss.lambda_c=0 (repeatable)")
    p.add_argument("--seed", type=int)
    if run:
        p.add_argument("--threads", type=int,
                       help=f"worker threads (default ${THREADS_ENV} or 1)")
        p.add_argument("--budget", choices=sorted(BUDGETS),
                       help="preset epoch schedule and prune threshold")
        p.add_argument("--iterations", type=int, help="iterations per epoch")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gridsdf", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("reconstruct", help="fit a grid SDF to a point cloud and mesh it")
    p.add_argument("input", nargs="?", help="XYZ or PLY point cloud")
    p.add_argument("-o", "--run-dir", help="output directory (default ./run)")
    p.add_argument("--mesh", help="mesh path (default RUN_DIR/mesh.ply; .obj also works)")
    p.add_argument("--gt", help="ground-truth points for metrics.json")
    _common(p)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("eval", help="score a mesh against ground truth and scan points")
    p.add_argument("mesh")
    p.add_argument("--gt", required=True, help="ground-truth points")
    p.add_argument("--scan", help="input scan for one-sided distances")
    p.add_argument("--tau", type=float, help="F-score threshold in mesh units")
    p.add_argument("--transform", help="transform.json of the run (reports normalized units)")
    p.add_argument("--ncs", action="store_true", help="normal consistency (needs gt normals)")
    p.add_argument("--json", help="also write the report here")
    p.add_argument("--csv", help="also write a CSV row here")
    _common(p, run=False)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="one reconstruction per loss setting, shared seed")
    p.add_argument("input", nargs="?")
    p.add_argument("-o", "--out", required=True, help="output directory")
    p.add_argument("--gt", help="ground-truth points")
    p.add_argument("--epsilon-list", help="comma separated epsilon values")
    p.add_argument("--lambda-c-list", help="comma separated coarea weights")
    p.add_argument("--drop", action="append",
                   help="loss components to drop one at a time: normals, viscosity, coarea")
    _common(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("demo-eikonal-1d", help="1D profiles: equal Eikonal, different viscosity")
    p.add_argument("-o", "--out", default="eikonal1d")
    p.add_argument("--res", type=int, default=64)
    p.add_argument("--epsilon", type=float, default=1e-2)
    p.set_defaults(func=cmd_demo_eikonal_1d)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CLIError as e:
        err = {"error": e.kind, "message": str(e)}
    except ScheduleError as e:
        err = {"error": "schedule", "message": str(e)}
    except OSError as e:
        err = {"error": "io", "message": f"{e.filename or ''}: {e.strerror or e}"}
    except ValueError as e:
        err = {"error": "input", "message": str(e)}
    print(json.dumps(err), file=sys.stderr)
    return EXIT_CODES[err["error"]]


if __name__ == "__main__":
    sys.exit(main())
