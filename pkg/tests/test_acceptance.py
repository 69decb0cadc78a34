"""Acceptance criteria, one test each.

Every test prints a single ``CRITERION <n> PASS|FAIL`` line with the measured
numbers before asserting, so the outcome is visible in ``pytest -v`` output
even when an assertion fails.  The heavy benchmark runs are shared through a
module-level cache (the concave run feeds both the concave and the ablation
criteria).
"""
import time
from dataclasses import replace

import numpy as np
import pytest

from diffwitness import bench, shapes
from diffwitness.gradient import FrozenSurrogate, jacobian_errors
from diffwitness.narrowphase import Intersecting, epa_penetration, gjk_distance
from diffwitness.se3 import Pose, Twist, adjoint, exp_map, random_pose, transport_residual
from oracles import penetration_depth, polytope_distance, world

_cache = {}


@pytest.fixture
def report(capsys):
    def emit(n, title, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {n:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}", flush=True)
        assert ok, detail
    return emit


def _records(key, tasks, cfg):
    if key not in _cache:
        _cache[key] = bench.run_tasks(tasks, cfg, workers=1)
    return _cache[key]


def _flags(recs):
    return np.array([r.converged for r in recs], float)


def _convex_tasks():
    return bench.generate_benchmark(shapes.CONVEX_SET, 64, 4, 0)


def _concave_tasks():
    return bench.generate_benchmark(shapes.CONCAVE_SET, 64, 4, 0)


def test_criterion_01_transport_identity(report):
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(10_000):
        t1, t2 = random_pose(rng), random_pose(rng)
        xi = Twist.from_vector(rng.normal(size=6))
        worst = max(worst, transport_residual(t1, t2, xi, rng.uniform(1e-3, 10.0)))
    dt = time.perf_counter() - t0
    report(1, "transport identity", worst < 1e-9 and dt < 5.0,
           f"max Frobenius gap {worst:.2e} (< 1e-9) over 10^4 draws in {dt:.2f}s (< 5s)")


def test_criterion_02_adjoint_identity(report):
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(10_000):
        T = random_pose(rng)
        xi = Twist.from_vector(rng.normal(size=6))
        lam = rng.uniform(-3.0, 3.0)
        lhs = (T @ exp_map(lam * xi) @ T.inverse()).matrix()
        worst = max(worst, float(np.linalg.norm(lhs - exp_map(lam * adjoint(T, xi)).matrix())))
    report(2, "adjoint identity", worst < 1e-9, f"max Frobenius gap {worst:.2e} (< 1e-9) over 10^4 draws")


def _polytope_pair(rng):
    a = shapes.random_polytope(int(rng.integers(8, 65)), rng, 0.3).pieces[0]
    b = shapes.random_polytope(int(rng.integers(8, 65)), rng, 0.3).pieces[0]
    d = rng.normal(size=3)
    return a, random_pose(rng, 0.0), b, random_pose(rng, 0.0).R, d / np.linalg.norm(d)


def _contact_offset(a, ta, b, Rb, d):
    lo, hi = 0.0, 4.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        hit = isinstance(gjk_distance(a, ta, b, Pose(Rb, d * mid)), Intersecting)
        lo, hi = (mid, hi) if hit else (lo, mid)
    return hi


def test_criterion_03_gjk_epa(report):
    rng = np.random.default_rng(3)
    worst_sep, worst_pen, n_sep, n_pen, elapsed = 0.0, 0.0, 0, 0, 0.0
    for k in range(500):
        a, ta, b, Rb, d = _polytope_pair(rng)
        s = _contact_offset(a, ta, b, Rb, d)
        diag = 2 * max(a.bounding_radius, b.bounding_radius)
        if k % 2 == 0:
            tb = Pose(Rb, d * (s + rng.uniform(0.01, 1.0) * diag))
            t0 = time.perf_counter()
            r = gjk_distance(a, ta, b, tb)
            elapsed += time.perf_counter() - t0
            ref = polytope_distance(world(a, ta), a.faces, world(b, tb), b.faces)
            worst_sep = max(worst_sep, abs(r.signed_distance - ref))
            n_sep += 1
        else:
            tb = Pose(Rb, d * (s - rng.uniform(0.001, 0.04) * diag))
            t0 = time.perf_counter()
            g = gjk_distance(a, ta, b, tb)
            r = epa_penetration(a, ta, b, tb, g)
            elapsed += time.perf_counter() - t0
            ref = penetration_depth(world(a, ta), world(b, tb))
            worst_pen = max(worst_pen, abs(-r.signed_distance - ref) / ref)
            n_pen += 1
    ok = worst_sep < 1e-8 and worst_pen < 0.02 and elapsed < 60
    report(3, "GJK/EPA correctness", ok,
           f"{n_sep} separated: max |d - oracle| {worst_sep:.1e} (< 1e-8); {n_pen} shallow: max rel depth error "
           f"{worst_pen:.1e} (< 2%); narrow-phase time {elapsed:.2f}s (< 60s)")


def test_criterion_04_surrogate_jacobians(report):
    tasks = (bench.generate_benchmark(shapes.CONVEX_SET, 125, 4, 40)
             + bench.generate_benchmark(shapes.CONCAVE_SET, 125, 4, 41))
    worst = dict.fromkeys(("J11", "J22", "J12", "J21"), 0.0)
    bad = 0
    for t in tasks:
        err = jacobian_errors(FrozenSurrogate(t.problem()), h=1e-6)
        bad += max(err.values()) >= 1e-4
        for k, v in err.items():
            worst[k] = max(worst[k], v)
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    report(4, "surrogate Jacobians vs central differences", max(worst.values()) < 1e-4,
           f"{len(tasks)} tasks, worst relative error {detail} (< 1e-4); tasks over: {bad}")


def test_criterion_05_convex_convergence(report):
    recs = _records("convex", _convex_tasks(), bench.OptimizerConfig())
    s = bench.summarize(recs)
    report(5, "convex convergence", s.n_tasks >= 256 and s.acc >= 0.80 and s.d5 <= 1e-7,
           f"{s.n_tasks} tasks, Acc {100 * s.acc:.1f}% (>= 80), D5 {s.d5:.2e} (<= 1e-7), D9 {s.d9:.2e}")


def test_criterion_06_concave_convergence(report):
    recs = _records("concave", _concave_tasks(), bench.OptimizerConfig())
    s = bench.summarize(recs)
    report(6, "concave convergence", s.n_tasks >= 256 and s.acc >= 0.60,
           f"{s.n_tasks} tasks, Acc {100 * s.acc:.1f}% (>= 60), D5 {s.d5:.2e}, D9 {s.d9:.2e}")


def test_criterion_07_ablation_orderings(report):
    tasks = _concave_tasks()
    base = bench.OptimizerConfig()
    flags = {"dist-adaptive": _flags(_records("concave", tasks, base))}
    for name in ("dir-adaptive", "dist-fixed", "dist-t2-noeg", "dist-joint"):
        cfg = replace(base, label=name, **bench.ABLATIONS[name])
        flags[name] = _flags(_records(name, tasks, cfg))
    dist_dir = bench.paired_bootstrap(flags["dist-adaptive"], flags["dir-adaptive"])
    ad_fix = bench.paired_bootstrap(flags["dist-adaptive"], flags["dist-fixed"])
    eg_noeg = bench.paired_bootstrap(flags["dist-adaptive"], flags["dist-t2-noeg"])
    eg_joint = bench.paired_bootstrap(flags["dist-adaptive"], flags["dist-joint"])
    checks = {
        "Dist>Dir": dist_dir[1] > 0,
        "Adaptive>=Fixed": ad_fix[0] >= 0,
        "EG>noEG": eg_noeg[1] > 0,
        "|EG-joint|<=3": abs(eg_joint[0]) <= 0.03,
    }
    fmt = lambda c: f"{100 * c[0]:+.1f} [{100 * c[1]:+.1f},{100 * c[2]:+.1f}]"
    accs = " ".join(f"{k} {100 * v.mean():.1f}" for k, v in flags.items())
    detail = (f"Acc% {accs}; diffs (95% CI): Dist-Dir {fmt(dist_dir)}, Adaptive-Fixed {fmt(ad_fix)}, "
              f"EG-noEG {fmt(eg_noeg)}, EG-joint {fmt(eg_joint)}; failed: "
              f"{[k for k, v in checks.items() if not v] or 'none'}")
    report(7, "ablation orderings", all(checks.values()), detail)


def test_criterion_08_margin_robustness(report):
    tasks = _convex_tasks()[:128]
    ours = {b: bench.summarize(bench.run_tasks(tasks, bench.OptimizerConfig(loss=_loss(b)), 1)).acc
            for b in (0.0, 1e-5, 1e-4, 1e-3)}
    rs1 = {b: bench.summarize(bench.run_tasks(tasks, bench.OptimizerConfig(method="rs1_dir", loss=_loss(b)), 1)).acc
           for b in (0.0, 1e-3)}
    spread = max(ours.values()) - min(ours.values())
    gap = rs1[1e-3] - rs1[0.0]
    report(8, "margin robustness", spread <= 0.05 and gap >= 0.20,
           f"{len(tasks)} convex tasks; ours Acc% " + " ".join(f"b={b:g}:{100 * a:.1f}" for b, a in ours.items())
           + f" range {100 * spread:.1f} (<= 5); rs1_dir Acc% b=0:{100 * rs1[0.0]:.1f} b=1e-3:{100 * rs1[1e-3]:.1f}"
           + f" gap {100 * gap:.1f} (>= 20)")


def _loss(beta):
    from diffwitness.gradient import LossConfig
    return LossConfig(beta)


def test_criterion_09_step_size_robustness(report):
    tasks = _convex_tasks()[:32]
    grid = [1, 2, 5, 10, 20, 50, 100]
    rows = bench.run_sweep("step_size", grid, bench.OptimizerConfig(), tasks, ["ours", "rs0"], workers=1)
    acc = {m: [r["acc"] for r in rows if r["method"] == m] for m in ("ours", "rs0")}
    rng_ = {m: max(v) - min(v) for m, v in acc.items()}
    report(9, "step-size robustness", rng_["ours"] < 0.10 and rng_["rs0"] > rng_["ours"],
           f"{len(tasks)} convex tasks, s_r {grid}; ours Acc% {[round(100 * a, 1) for a in acc['ours']]} "
           f"range {100 * rng_['ours']:.1f} (< 10); rs0 Acc% {[round(100 * a, 1) for a in acc['rs0']]} "
           f"range {100 * rng_['rs0']:.1f} (> ours)")


def test_criterion_10_runtime_ordering(report):
    times = {}
    for name, shape_set in (("convex", shapes.CONVEX_SET), ("concave", shapes.CONCAVE_SET)):
        tasks = bench.generate_benchmark(shape_set, 4, 2, 10)
        for m in ("ours", "rs0"):
            times[name, m] = bench.measure_runtime(bench.OptimizerConfig(method=m, iterations=200), tasks)["backward"]
    ratio = times["concave", "ours"] / times["convex", "ours"]
    ok = all(times[c, "ours"] < times[c, "rs0"] for c in ("convex", "concave")) and ratio < 2.0
    report(10, "runtime ordering", ok,
           "backward us/iter " + ", ".join(f"{c}/{m} {v:.1f}" for (c, m), v in times.items())
           + f"; ours concave/convex {ratio:.2f} (< 2)")


def test_criterion_11_determinism(report):
    tasks = _concave_tasks()[:4] + _convex_tasks()[:4]
    same = True
    for m in ("ours", "rs0", "rs1_dir"):
        cfg = bench.OptimizerConfig(method=m, iterations=300)
        a, b = bench.run_tasks(tasks, cfg, workers=1), bench.run_tasks(tasks, cfg, workers=1)
        same &= all(x.trace.tobytes() == y.trace.tobytes() for x, y in zip(a, b))
    report(11, "determinism", same, f"{len(tasks)} tasks x 3 methods, loss traces bit-identical across two runs: {same}")
