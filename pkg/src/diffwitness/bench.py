"""Target-point matching benchmark: tasks, optimiser, metrics and sweeps.

Each task fixes object 1, places object 2 at a random pose around it and
asks plain normalised gradient descent on ``T2`` (optionally also ``T1``)
to bring both witness points onto their targets.  The full per-task loop
runs inside one numba kernel; per-iteration forward/backward wall times are
measured with the CPU cycle counter.
"""

from __future__ import annotations

import json
import os
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from pathlib import Path

import numba as nb
import numpy as np
from llvmlite import ir
from numba import types
from numba.extending import intrinsic

from . import gradient as gr
from . import narrowphase as npz
from .geom import CompositeShape, convex_shape, load_composite_dir, load_obj, normalize_scale, sample_triangles
from .se3 import Pose, adjoint_vec, compose_right, random_rotation
from .shapes import bundled, bundled_names
from .smoothing import SamplingConfig

CONVERGED_LOSS = 1e-6
EARLY_EXIT_LOSS = 1e-14
METHODS = ("ours", "analytical", "fd", "rs0", "rs1_dir")
CSV_COLUMNS = ("task_id", "method", "final_loss", "iters", "fwd_us", "bwd_us")


# ---------------------------------------------------------------------------
# timing


@intrinsic
def _cycles(typingctx):
    def codegen(context, builder, signature, args):
        fn = builder.module.declare_intrinsic("llvm.readcyclecounter", fnty=ir.FunctionType(ir.IntType(64), []))
        return builder.call(fn, [])
    return types.int64(), codegen


@nb.njit(cache=True)
def read_cycles():
    return _cycles()


@lru_cache(maxsize=1)
def cycles_per_us() -> float:
    """Cycle-counter rate, calibrated once per process against ``perf_counter``."""
    read_cycles()
    c0, p0 = read_cycles(), time.perf_counter()
    while time.perf_counter() - p0 < 0.02:
        pass
    c1, p1 = read_cycles(), time.perf_counter()
    rate = (c1 - c0) / ((p1 - p0) * 1e6)
    return rate if rate > 0 else 1.0


# ---------------------------------------------------------------------------
# configuration and records


@dataclass(frozen=True)
class OptimizerConfig:
    """Gradient descent settings.

    Step sizes are expressed in units of ``step_unit``: a rotation step of
    ``s_r`` turns the pose by ``s_r * step_unit`` radians and a translation
    step of ``s_t`` moves it by ``s_t * step_unit`` metres.

    ``eg_mode`` picks how the transported T1 derivative enters the T2
    update.  ``"step"`` normalises each pose derivative first and carries the
    resulting T1 step across; ``"gradient"`` adds the transported derivative
    to the T2 derivative and normalises the sum.
    """

    iterations: int = 2000
    schedule: tuple = ((0, 10.0), (200, 1.0), (1800, 0.1))
    translation_ratio: float = 0.01
    step_unit: float = 0.01
    method: str = "ours"
    sampling: SamplingConfig | None = None
    score: str | None = None
    use_eg: bool = True
    loss: gr.LossConfig = field(default_factory=gr.LossConfig)
    optimize_t1: bool = False
    full_tau: bool = False
    joint_normalization: bool = False
    eg_mode: str = "step"
    fd_h: float = 1e-6
    rs0_sigma: float = 1e-2
    rs0_samples: int = 12
    label: str | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        its = [int(i) for i, _ in self.schedule]
        if not its or its[0] != 0 or any(b <= a for a, b in zip(its, its[1:])):
            raise ValueError("schedule iterations must start at 0 and be strictly increasing")
        if any(v <= 0 for _, v in self.schedule) or self.translation_ratio <= 0 or self.step_unit <= 0:
            raise ValueError("step sizes must be positive")
        if self.eg_mode not in ("step", "gradient"):
            raise ValueError("eg_mode must be 'step' or 'gradient'")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")

    @property
    def name(self) -> str:
        return self.label or self.method

    def with_initial_step(self, s_r: float) -> "OptimizerConfig":
        """Same schedule shape (10 -> 1 -> 0.1 ratios) starting at ``s_r``."""
        base = self.schedule[0][1]
        return replace(self, schedule=tuple((i, v * s_r / base) for i, v in self.schedule))

    def kernel_config(self, diags):
        return gr.method_config(self.method, self.sampling, self.loss.beta, self.use_eg, self.optimize_t1,
                                self.full_tau, self.fd_h, self.rs0_sigma, self.rs0_samples,
                                self.joint_normalization, diags, self.score)


@dataclass(frozen=True, eq=False)
class TaskSpec:
    task_id: int
    shape1: str
    shape2: str
    diag1: float
    diag2: float
    pose1: Pose
    pose2: Pose
    target1_local: np.ndarray
    target2_local: np.ndarray
    seed: int

    def shapes(self) -> tuple[CompositeShape, CompositeShape]:
        return resolve_shape(self.shape1, self.diag1), resolve_shape(self.shape2, self.diag2)

    def problem(self, cfg: OptimizerConfig | None = None) -> gr.PoseProblem:
        cfg = cfg or OptimizerConfig()
        s1, s2 = self.shapes()
        return gr.PoseProblem(s1, self.pose1, s2, self.pose2, self.target1_local, self.target2_local,
                              cfg.loss, cfg.use_eg, cfg.optimize_t1)

    def to_json(self) -> dict:
        return {"task_id": self.task_id, "shape1": self.shape1, "shape2": self.shape2,
                "diag1": self.diag1, "diag2": self.diag2, "pose1": self.pose1.to_json(),
                "pose2": self.pose2.to_json(), "target1_local": self.target1_local.tolist(),
                "target2_local": self.target2_local.tolist(), "seed": self.seed}


@dataclass(frozen=True, eq=False)
class RunRecord:
    task_id: int
    method: str
    final_loss: float
    iterations: int
    trace: np.ndarray
    fwd_us: float
    bwd_us: float
    flags: int = 0
    fwd_iter_us: np.ndarray | None = None
    bwd_iter_us: np.ndarray | None = None
    final_pose2: Pose | None = None
    error: str | None = None

    @property
    def converged(self) -> bool:
        return bool(self.final_loss < CONVERGED_LOSS)

    def csv_row(self) -> dict:
        return {"task_id": self.task_id, "method": self.method, "final_loss": repr(float(self.final_loss)),
                "iters": self.iterations, "fwd_us": f"{self.fwd_us:.3f}", "bwd_us": f"{self.bwd_us:.3f}"}


@dataclass(frozen=True)
class MetricSummary:
    d5: float
    d9: float
    acc: float
    n_tasks: int

    def as_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# shapes and tasks


@lru_cache(maxsize=512)
def _raw_shape(source: str) -> CompositeShape:
    if source in bundled_names():
        return bundled(source)
    path = Path(source)
    if path.is_dir():
        return load_composite_dir(path)
    if path.is_file():
        return convex_shape(load_obj(path), path.stem)
    raise FileNotFoundError(f"shape {source!r} is neither a bundled name, an OBJ file nor a piece directory")


@lru_cache(maxsize=1024)
def resolve_shape(source: str, diag: float) -> CompositeShape:
    """Bundled name, OBJ file (its hull) or composite directory, scaled to ``diag``."""
    return normalize_scale(_raw_shape(source), diag)


def _stream(seed: int, *key) -> np.random.Generator:
    h = zlib.crc32("|".join(str(k) for k in key).encode())
    return np.random.default_rng(np.random.SeedSequence([int(seed), h]))


DIAG_RANGE = (0.01, 0.2)


def _sample_target(shape: CompositeShape, rng: np.random.Generator) -> np.ndarray:
    mesh = shape.source_mesh
    if rng.random() < 0.5:
        return mesh.vertices[rng.integers(mesh.n_vertices)].copy()
    pts, _ = sample_triangles(mesh, 1, rng)
    return pts[0]


def generate_tasks(pair, n_tasks: int, seed: int, diags=(0.1, 0.1), first_id: int = 0) -> list[TaskSpec]:
    """Random tasks for one shape pair.

    Object 1 sits at the origin with a random rotation; object 2 gets a
    random rotation and a translation in the shell
    ``[0.5, 1.5] * (diag1 + diag2) / 2``.  Each target is a mesh vertex or an
    area-weighted surface sample with equal probability.
    """
    if n_tasks < 1:
        raise ValueError("n_tasks must be >= 1")
    name1, name2 = pair
    d1, d2 = float(diags[0]), float(diags[1])
    s1, s2 = resolve_shape(name1, d1), resolve_shape(name2, d2)
    rng = _stream(seed, name1, name2, repr(d1), repr(d2))
    tasks = []
    for k in range(n_tasks):
        pose1 = Pose(random_rotation(rng), np.zeros(3))
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        radius = rng.uniform(0.5, 1.5) * (d1 + d2) / 2
        pose2 = Pose(random_rotation(rng), direction * radius)
        t1o = _sample_target(s1, rng)
        t2o = _sample_target(s2, rng)
        tasks.append(TaskSpec(first_id + k, name1, name2, d1, d2, pose1, pose2, t1o, t2o,
                              int(rng.integers(2**31 - 1))))
    return tasks


def generate_benchmark(shape_set, n_pairs: int, tasks_per_pair: int, seed: int,
                       diag_range=DIAG_RANGE, log_diag: bool = True) -> list[TaskSpec]:
    """Tasks over ``n_pairs`` random pairs drawn from ``shape_set``.

    Each object of a pair is rescaled to a diag drawn from ``diag_range``,
    log-uniformly by default (uniformly with ``log_diag=False``), and rounded
    to 0.1 mm so shape caches stay small.
    """
    rng = _stream(seed, "pairs", *shape_set)
    tasks = []
    for p in range(n_pairs):
        a, b = (shape_set[i] for i in rng.integers(len(shape_set), size=2))
        if log_diag:
            lo, hi = np.log(diag_range[0]), np.log(diag_range[1])
            d1, d2 = (round(float(np.exp(rng.uniform(lo, hi))), 4) for _ in range(2))
        else:
            d1, d2 = (round(float(rng.uniform(*diag_range)), 4) for _ in range(2))
        tasks += generate_tasks((a, b), tasks_per_pair, seed + p, (d1, d2), first_id=len(tasks))
    return tasks


# ---------------------------------------------------------------------------
# optimiser kernel


@nb.njit(cache=True)
def _normalized(vec, s_rot, s_trans, joint, out):
    nw = np.sqrt(vec[0] ** 2 + vec[1] ** 2 + vec[2] ** 2)
    nv = np.sqrt(vec[3] ** 2 + vec[4] ** 2 + vec[5] ** 2)
    if joint:
        nw = nv = np.sqrt(nw * nw + nv * nv)
    for j in range(3):
        out[j] = -s_rot * vec[j] / nw if nw > 1e-12 else 0.0
        out[3 + j] = -s_trans * vec[3 + j] / nv if nv > 1e-12 else 0.0


@nb.njit(cache=True)
def optimize_kernel(S1, S2, R1, t1, R2, t2, t1o, t2o, cfgi, cfgf, sched_it, sched_val,
                    iterations, step_unit, t_ratio, eg_steps, seed, trace, tfwd, tbwd):
    """Run gradient descent; returns (iterations used, flags, R1, t1, R2, t2).

    ``trace[k]`` is the loss before update ``k``; ``trace[used]`` is the final
    loss.  ``tfwd``/``tbwd`` receive per-iteration cycle counts.
    """
    np.random.seed(seed)
    R1 = R1.copy()
    t1 = t1.copy()
    R2 = R2.copy()
    t2 = t2.copy()
    res_f = np.zeros(npz.NF)
    res_i = np.zeros(npz.NI, np.int64)
    g = np.empty((4, 3))
    grad = np.empty(12)
    xi = np.empty(18)
    step = np.empty(6)
    step1 = np.empty(6)
    beta = cfgf[gr.CF_BETA]
    use_eg = cfgi[gr.CI_EG] != 0
    opt_t1 = cfgi[gr.CI_OPT_T1] != 0
    joint = cfgi[gr.CI_JOINT_NORM] != 0
    flags = 0
    stage = 0
    used = iterations
    for k in range(iterations):
        c0 = _cycles()
        L = gr.loss_at(S1, S2, R1, t1, R2, t2, t1o, t2o, beta, res_f, res_i, g)
        c1 = _cycles()
        trace[k] = L
        flags |= res_i[0]
        if L < EARLY_EXIT_LOSS:
            tfwd[k] = c1 - c0
            tbwd[k] = 0
            used = k
            break
        flags |= gr.gradient_kernel(S1, S2, R1, t1, R2, t2, t1o, t2o, res_f, res_i, L, g, cfgi, cfgf, grad)
        gr.algebra_step(grad, R1, t1, R2, t2, use_eg, xi)
        while stage + 1 < sched_it.shape[0] and sched_it[stage + 1] <= k:
            stage += 1
        s_rot = sched_val[stage] * step_unit
        s_trans = sched_val[stage] * t_ratio * step_unit
        if use_eg and eg_steps and not opt_t1:
            # normalise each pose's derivative, then move T2 by the T1 step
            # carried over with Ad_{T2^-1 T1}; the relative pose ends up
            # exactly where the joint (T1, T2) update would put it
            _normalized(xi[0:6], s_rot, s_trans, joint, step1)
            w, v = adjoint_vec(R2.T @ R1, R2.T @ (t1 - t2), step1[:3].copy(), step1[3:].copy())
            R2, t2 = compose_right(R2, t2, -w, -v)
            _normalized(xi[6:12], s_rot, s_trans, joint, step)
        else:
            _normalized(xi[12:18], s_rot, s_trans, joint, step)
        R2, t2 = compose_right(R2, t2, step[:3].copy(), step[3:].copy())
        if opt_t1:
            _normalized(xi[0:6], s_rot, s_trans, joint, step)
            R1, t1 = compose_right(R1, t1, step[:3].copy(), step[3:].copy())
        c2 = _cycles()
        tfwd[k] = c1 - c0
        tbwd[k] = c2 - c1
    if used == iterations:
        trace[used] = gr.loss_at(S1, S2, R1, t1, R2, t2, t1o, t2o, beta, res_f, res_i, g)
        flags |= res_i[0]
    return used, flags, R1, t1, R2, t2


def optimize_task(task: TaskSpec, cfg: OptimizerConfig, keep_timing: bool = False) -> RunRecord:
    """Optimise one task; exceptions become a failed record with infinite loss."""
    try:
        s1, s2 = task.shapes()
        S1, S2 = gr.prepare_shape(s1), gr.prepare_shape(s2)
        ci, cf = cfg.kernel_config((S1.diag, S2.diag))
        sched_it = np.array([i for i, _ in cfg.schedule], dtype=np.int64)
        sched_val = np.array([v for _, v in cfg.schedule], dtype=np.float64)
        n = cfg.iterations
        trace = np.full(n + 1, np.nan)
        tf = np.zeros(max(n, 1), dtype=np.int64)
        tb = np.zeros(max(n, 1), dtype=np.int64)
        used, flags, R1, t1, R2, t2 = optimize_kernel(
            S1, S2, task.pose1.R, task.pose1.t, task.pose2.R, task.pose2.t,
            np.asarray(task.target1_local, float), np.asarray(task.target2_local, float),
            ci, cf, sched_it, sched_val, n, cfg.step_unit, cfg.translation_ratio, cfg.eg_mode == "step",
            task.seed, trace, tf, tb)
    except Exception as exc:  # a broken task must not take the batch down
        return RunRecord(task.task_id, cfg.name, float("inf"), 0, np.array([np.inf]), 0.0, 0.0,
                         error=f"{type(exc).__name__}: {exc}")
    rate = cycles_per_us()
    fwd = tf[:used] / rate
    bwd = tb[:used] / rate
    return RunRecord(
        task.task_id, cfg.name, float(trace[used]), int(used), trace[:used + 1].copy(),
        float(fwd.mean()) if used else 0.0, float(bwd.mean()) if used else 0.0, int(flags),
        fwd if keep_timing else None, bwd if keep_timing else None,
        Pose(R2, t2),
    )


# ---------------------------------------------------------------------------
# batch execution


def worker_count(requested: int | None = None) -> int:
    env = os.environ.get("DIFFWITNESS_THREADS")
    if env:
        return max(1, int(env))
    return max(1, int(requested or 1))


def _run_chunk(args):
    tasks, cfg, keep_timing = args
    return [optimize_task(t, cfg, keep_timing) for t in tasks]


def run_tasks(tasks, cfg: OptimizerConfig, workers: int | None = None, keep_timing: bool = False) -> list[RunRecord]:
    """Optimise all tasks; results are sorted by task id whatever the worker count."""
    n_workers = worker_count(workers)
    tasks = list(tasks)
    if n_workers == 1 or len(tasks) < 2:
        records = _run_chunk((tasks, cfg, keep_timing))
    else:
        chunks = [tasks[i::n_workers] for i in range(n_workers)]
        with ProcessPoolExecutor(n_workers) as pool:
            records = [r for chunk in pool.map(_run_chunk, [(c, cfg, keep_timing) for c in chunks]) for r in chunk]
    return sorted(records, key=lambda r: r.task_id)


def summarize(records) -> MetricSummary:
    records = sorted(records, key=lambda r: r.task_id)
    if not records:
        raise ValueError("cannot summarize an empty record set")
    losses = np.array([r.final_loss for r in records], dtype=np.float64)
    return MetricSummary(
        float(np.quantile(losses, 0.5, method="lower")),
        float(np.quantile(losses, 0.9, method="lower")),
        float(np.mean(losses < CONVERGED_LOSS)),
        len(records),
    )


# named ablation variants: overrides applied on top of the base config
ABLATIONS = {
    "dist-neighbor": dict(method="ours", sampling=SamplingConfig("neighbor")),
    "dist-fixed": dict(method="ours", sampling=SamplingConfig("fixed")),
    "dist-adaptive": dict(method="ours", sampling=SamplingConfig("adaptive")),
    "dir-neighbor": dict(method="rs1_dir", sampling=SamplingConfig("neighbor")),
    "dir-fixed": dict(method="rs1_dir", sampling=SamplingConfig("fixed")),
    "dir-adaptive": dict(method="rs1_dir", sampling=SamplingConfig("adaptive")),
    "dist-t2-eg": dict(method="ours", use_eg=True, optimize_t1=False),
    "dist-t2-noeg": dict(method="ours", use_eg=False, optimize_t1=False),
    "dist-joint": dict(method="ours", use_eg=False, optimize_t1=True),
}


def sweep_config(axis: str, value, base: OptimizerConfig) -> OptimizerConfig:
    if axis == "margin":
        return replace(base, loss=gr.LossConfig(float(value)))
    if axis == "step_size":
        return base.with_initial_step(float(value))
    if axis == "ablation":
        return replace(base, label=str(value), **ABLATIONS[value])
    raise ValueError(f"unknown sweep axis {axis!r}")


def run_sweep(axis: str, grid, base: OptimizerConfig, tasks, methods=None, workers: int | None = None,
              record_sink=None) -> list[dict]:
    """One summary per grid point and method, all on the same task list.

    ``methods`` is a list of method names or of base configs (defaults to
    ``[base]``).  ``record_sink(axis, value, cfg, records)`` may be used to
    persist the per-task records.
    """
    if not grid:
        raise ValueError("grid must be nonempty")
    bases = [base] if methods is None else [m if isinstance(m, OptimizerConfig) else replace(base, method=m)
                                            for m in methods]
    rows = []
    for value in grid:
        for b in bases:
            cfg = sweep_config(axis, value, b)
            records = run_tasks(tasks, cfg, workers)
            if record_sink is not None:
                record_sink(axis, value, cfg, records)
            rows.append({"axis": axis, "value": value, "method": cfg.name, **summarize(records).as_dict()})
    return rows


def paired_bootstrap(a, b, confidence: float = 0.95, n_resamples: int = 10_000, seed: int = 0):
    """Difference of means ``a - b`` over paired samples with a percentile bootstrap interval.

    Returns ``(diff, low, high)``.  Used on per-task convergence flags, so
    the difference is an accuracy gap.
    """
    from scipy.stats import bootstrap
    a, b = np.asarray(a, float), np.asarray(b, float)
    if a.shape != b.shape or a.size == 0:
        raise ValueError("paired samples must be nonempty and of equal length")
    diff = float(a.mean() - b.mean())
    if np.all(a - b == a[0] - b[0]):
        return diff, diff, diff
    res = bootstrap((a, b), lambda x, y, axis: x.mean(axis=axis) - y.mean(axis=axis), paired=True,
                    vectorized=True, confidence_level=confidence, n_resamples=n_resamples,
                    method="percentile", random_state=np.random.default_rng(seed))
    return diff, float(res.confidence_interval.low), float(res.confidence_interval.high)


def measure_runtime(cfg: OptimizerConfig, tasks, repetitions: int = 1, warmup: int = 10) -> dict:
    """Median per-iteration forward/backward time in microseconds.

    The first ``warmup`` iterations of every run are excluded; a run with no
    timed iterations contributes nothing.
    """
    fwd, bwd = [], []
    for _ in range(max(repetitions, 0)):
        for task in tasks:
            rec = optimize_task(task, cfg, keep_timing=True)
            if rec.fwd_iter_us is not None and len(rec.fwd_iter_us) > warmup:
                fwd.append(rec.fwd_iter_us[warmup:])
                bwd.append(rec.bwd_iter_us[warmup:])
    if not fwd:
        return {"forward": 0.0, "backward": 0.0}
    return {"forward": float(np.median(np.concatenate(fwd))), "backward": float(np.median(np.concatenate(bwd)))}


# ---------------------------------------------------------------------------
# result files


def write_records_csv(records, path) -> None:
    import csv
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for r in sorted(records, key=lambda r: (r.method, r.task_id)):
            writer.writerow(r.csv_row())


def write_summary_json(summary: MetricSummary, path, **extra) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps({**extra, **summary.as_dict()}, indent=2, sort_keys=True) + "\n")


def format_table(rows) -> str:
    """Rows of ``{"method", "d5", "d9", "acc"}`` as a fixed-width text table."""
    lines = [f"{'method':<18}{'D5':>12}{'D9':>12}{'Acc(%)':>9}"]
    for r in rows:
        lines.append(f"{r['method']:<18}{r['d5']:>12.2e}{r['d9']:>12.2e}{100 * r['acc']:>9.1f}")
    return "\n".join(lines)
