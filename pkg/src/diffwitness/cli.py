"""Command-line front end: ``detect``, ``bench``, ``gradcheck`` and ``sweep``.

Every command is a thin wrapper over library calls.  Experiments are
described by a flat JSON object (``--config``) whose keys are either
:class:`ExperimentConfig` fields or :class:`~diffwitness.bench.OptimizerConfig`
overrides, for example::

    {"shapes": "concave", "n_pairs": 64, "tasks_per_pair": 4,
     "methods": ["ours", "rs1_dir"], "beta": 1e-3,
     "sweep_axis": "margin", "sweep_grid": [0, 1e-5, 1e-4, 1e-3]}
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import warnings
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import bench
from . import gradient as gr
from .narrowphase import composite_witness
from .se3 import Pose, Twist, random_pose, transport_residual
from .shapes import CONCAVE_SET, CONVEX_SET
from .smoothing import SamplingConfig

EXIT_SEPARATED = 0
EXIT_FAILURE = 1
EXIT_ERROR = 2
EXIT_PENETRATING = 10
GRADCHECK_TOL = 1e-3

SHAPE_SETS = {"convex": CONVEX_SET, "concave": CONCAVE_SET}
SWEEP_AXES = ("margin", "step_size", "ablation")

# flat override keys that map onto OptimizerConfig (or one of its nested parts)
_OPT_FIELDS = {f.name for f in fields(bench.OptimizerConfig)} - {"loss", "sampling", "label"}
_SAMPLING_KEYS = {"sampling": "strategy", "alpha": "alpha", "epsilon": "epsilon",
                  "max_candidates": "max_candidates", "k_ring": "k_ring", "subsample": "subsample",
                  "cross_piece": "cross_piece"}
_EXTRA_KEYS = {"beta", "initial_step"}


@dataclass(frozen=True)
class ExperimentConfig:
    shapes: tuple = CONVEX_SET
    n_pairs: int = 16
    tasks_per_pair: int = 4
    methods: tuple = ("ours",)
    overrides: dict = field(default_factory=dict)
    sweep_axis: str | None = None
    sweep_grid: tuple = ()
    out: str = "results"
    workers: int | None = None
    seed: int = 0
    diag_range: tuple = bench.DIAG_RANGE
    log_diag: bool = True

    def __post_init__(self):
        if self.n_pairs < 1 or self.tasks_per_pair < 1:
            raise ValueError("n_pairs and tasks_per_pair must be >= 1")
        for m in self.methods:
            if m not in bench.METHODS:
                raise ValueError(f"unknown method {m!r}; choose from {bench.METHODS}")
        if self.sweep_axis is not None and self.sweep_axis not in SWEEP_AXES:
            raise ValueError(f"unknown sweep axis {self.sweep_axis!r}; choose from {SWEEP_AXES}")
        optimizer_config(self.overrides)  # validates override keys and values

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        own = {f.name for f in fields(cls)} - {"overrides"}
        kw, overrides = {}, dict(data.get("overrides", {}))
        for key, value in data.items():
            if key == "overrides":
                continue
            if key in own:
                kw[key] = value
            elif key in _OPT_FIELDS or key in _SAMPLING_KEYS or key in _EXTRA_KEYS:
                overrides[key] = value
            else:
                raise ValueError(f"unknown config key {key!r}")
        shapes = kw.get("shapes", cls.shapes)
        if isinstance(shapes, str):
            shapes = SHAPE_SETS.get(shapes, tuple(s for s in shapes.split(",") if s))
        kw["shapes"] = tuple(shapes)
        for key in ("methods", "sweep_grid", "diag_range"):
            if key in kw:
                kw[key] = tuple(kw[key]) if not isinstance(kw[key], str) else (kw[key],)
        return cls(overrides=overrides, **kw)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def tasks(self):
        return bench.generate_benchmark(self.shapes, self.n_pairs, self.tasks_per_pair, self.seed,
                                        tuple(self.diag_range), self.log_diag)

    def base(self) -> bench.OptimizerConfig:
        return optimizer_config(self.overrides)


def optimizer_config(overrides: dict, base: bench.OptimizerConfig | None = None) -> bench.OptimizerConfig:
    """Apply flat override keys to ``base`` (default settings if omitted)."""
    cfg = base or bench.OptimizerConfig()
    direct, sampling = {}, {}
    for key, value in overrides.items():
        if key in _SAMPLING_KEYS:
            sampling[_SAMPLING_KEYS[key]] = value
        elif key == "schedule":
            direct[key] = tuple((int(i), float(v)) for i, v in value)
        elif key in _OPT_FIELDS:
            direct[key] = value
        elif key not in _EXTRA_KEYS:
            raise ValueError(f"unknown optimizer override {key!r}")
    if "beta" in overrides:
        direct["loss"] = gr.LossConfig(float(overrides["beta"]))
    if sampling:
        direct["sampling"] = replace(cfg.sampling or SamplingConfig(), **sampling)
    cfg = replace(cfg, **direct)
    if "initial_step" in overrides:
        cfg = cfg.with_initial_step(float(overrides["initial_step"]))
    return cfg


# ---------------------------------------------------------------------------
# detect


def _parse_pose(text: str | None) -> Pose:
    """Pose from JSON (``{"R": [9 numbers], "t": [3]}``, ``R`` optional), a JSON
    file, or a bare ``x,y,z`` translation."""
    if text is None:
        return Pose.identity()
    if os.path.isfile(text):
        text = Path(text).read_text()
    text = text.strip()
    if text.startswith("{"):
        data = json.loads(text)
        return Pose(np.reshape(data.get("R", np.eye(3).ravel()), (3, 3)), data.get("t", [0.0, 0.0, 0.0]))
    xyz = [float(x) for x in text.split(",")]
    if len(xyz) != 3:
        raise ValueError(f"cannot parse pose {text!r}")
    return Pose(np.eye(3), xyz)


def _load_shape(source: str, diag: float | None):
    raw = bench._raw_shape(source)
    return raw if diag is None else bench.resolve_shape(source, diag)


def cmd_detect(args) -> int:
    s1 = _load_shape(args.shape1, args.diag1)
    s2 = _load_shape(args.shape2, args.diag2)
    p1, p2 = _parse_pose(args.pose1), _parse_pose(args.pose2)
    w = composite_witness(s1, p1, s2, p2)
    out = {
        "signed_distance": w.signed_distance,
        "distance": max(w.signed_distance, 0.0),
        "penetrating": w.penetrating,
        "x1": w.x1_world.tolist(),
        "x2": w.x2_world.tolist(),
        "normal": w.normal.tolist(),
        "piece1": w.piece1,
        "piece2": w.piece2,
        "converged": w.converged,
    }
    print(json.dumps(out, indent=2))
    return EXIT_PENETRATING if w.penetrating else EXIT_SEPARATED


# ---------------------------------------------------------------------------
# bench and sweep


def _experiment(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    changes = {}
    if args.workers is not None:
        changes["workers"] = args.workers
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.out is not None:
        changes["out"] = args.out
    return replace(cfg, **changes) if changes else cfg


def _slug(value) -> str:
    return str(value).replace("/", "_").replace(" ", "")


def cmd_bench(args) -> int:
    exp = _experiment(args)
    tasks = exp.tasks()
    base = exp.base()
    out = Path(exp.out)
    rows, records = [], []
    for method in exp.methods:
        cfg = replace(base, method=method)
        recs = bench.run_tasks(tasks, cfg, exp.workers)
        records += recs
        summary = bench.summarize(recs)
        bench.write_summary_json(summary, out / f"summary_{method}.json", method=method,
                                 shapes=list(exp.shapes), seed=exp.seed)
        rows.append({"method": method, **summary.as_dict()})
    bench.write_records_csv(records, out / "records.csv")
    print(f"{len(tasks)} tasks over {', '.join(exp.shapes)}")
    print(bench.format_table(rows))
    return 0


def cmd_sweep(args) -> int:
    exp = _experiment(args)
    if exp.sweep_axis is None or not exp.sweep_grid:
        print("error: sweep needs sweep_axis and a nonempty sweep_grid in the config", file=sys.stderr)
        return EXIT_ERROR
    tasks = exp.tasks()
    out = Path(exp.out)

    def sink(axis, value, cfg, recs):
        stem = f"{axis}_{_slug(value)}_{cfg.name}"
        bench.write_records_csv(recs, out / f"{stem}.csv")
        bench.write_summary_json(bench.summarize(recs), out / f"{stem}.json",
                                 axis=axis, value=value, method=cfg.name)

    methods = None if exp.sweep_axis == "ablation" else list(exp.methods)
    rows = bench.run_sweep(exp.sweep_axis, list(exp.sweep_grid), exp.base(), tasks, methods,
                           exp.workers, sink)
    print(f"{exp.sweep_axis} sweep, {len(tasks)} tasks")
    print(bench.format_table([{**r, "method": f"{r['method']}@{r['value']}"} for r in rows]))
    return 0


# ---------------------------------------------------------------------------
# gradcheck


def gradcheck(pair, n_probes: int, seed: int = 0, h: float = 1e-6, score: str = "distance",
              full_tau: bool = False, corrupt_cross: float = 0.0, diag: float = 0.1) -> dict:
    """Largest relative error per Jacobian block over ``n_probes`` random tasks,
    plus the largest transport-identity residual."""
    worst = dict.fromkeys(gr.JACOBIAN_BLOCKS, 0.0)
    worst["transport"] = 0.0
    if n_probes <= 0:
        return worst
    rng = np.random.default_rng(seed)
    for task in bench.generate_tasks(tuple(pair), n_probes, seed, (diag, diag)):
        fs = gr.FrozenSurrogate(task.problem(), score=score, full_tau=full_tau, seed=task.seed)
        for k, v in gr.jacobian_errors(fs, h, corrupt_cross).items():
            worst[k] = max(worst[k], v)
        t1, t2 = random_pose(rng), random_pose(rng)
        xi = Twist.from_vector(rng.normal(size=6))
        worst["transport"] = max(worst["transport"], transport_residual(t1, t2, xi, rng.uniform(1e-3, 10)))
    return worst


def cmd_gradcheck(args) -> int:
    pair = args.shapes.split(",")
    if len(pair) == 1:
        pair = pair * 2
    if args.n_probes <= 0:
        warnings.warn("n_probes is 0: nothing was checked", stacklevel=1)
        print("gradcheck: no probes, vacuous pass")
        return 0
    worst = gradcheck(pair, args.n_probes, args.seed or 0, args.h, args.score, args.full_tau,
                      args.corrupt_cross)
    failed = False
    for name, err in worst.items():
        bad = err > GRADCHECK_TOL
        failed |= bad
        print(f"{name:<10} max error {err:.3e}  {'FAIL' if bad else 'ok'}")
    return EXIT_FAILURE if failed else 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="diffwitness", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with flat experiment/optimizer keys")
    common.add_argument("--workers", type=int, help="worker processes (env DIFFWITNESS_THREADS also works)")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")

    p = sub.add_parser("detect", help="one forward witness query, printed as JSON")
    p.add_argument("shape1")
    p.add_argument("shape2")
    p.add_argument("--pose1", help='JSON {"R": [...], "t": [...]}, JSON file, or x,y,z')
    p.add_argument("--pose2")
    p.add_argument("--diag1", type=float, help="rescale shape 1 to this bounding-box diagonal")
    p.add_argument("--diag2", type=float)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("bench", parents=[common], help="run the target-matching benchmark")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("sweep", parents=[common], help="run a margin, step-size or ablation sweep")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gradcheck", parents=[common], help="compare surrogate Jacobians with finite differences")
    p.add_argument("--shapes", default="icosahedron", help="shape or comma-separated pair")
    p.add_argument("--n-probes", type=int, default=100)
    p.add_argument("--h", type=float, default=1e-6)
    p.add_argument("--score", choices=("distance", "direction"), default="distance")
    p.add_argument("--full-tau", action="store_true")
    p.add_argument("--corrupt-cross", type=float, default=0.0, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
