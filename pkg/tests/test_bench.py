import csv
import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diffwitness import bench, shapes
from diffwitness.bench import (CSV_COLUMNS, OptimizerConfig, RunRecord, TaskSpec, generate_benchmark,
                               generate_tasks, measure_runtime, optimize_task, run_sweep, run_tasks, summarize)
from diffwitness.geom import distance_to_mesh
from diffwitness.narrowphase import composite_witness
from diffwitness.se3 import Pose, Twist, exp_map

SHORT = OptimizerConfig(iterations=60, schedule=((0, 10.0), (20, 1.0), (50, 0.1)))


def _record(i, loss):
    return RunRecord(i, "ours", loss, 1, np.array([loss]), 0.0, 0.0)


def test_summary_all_zero():
    s = summarize([_record(i, 0.0) for i in range(5)])
    assert (s.d5, s.d9, s.acc, s.n_tasks) == (0.0, 0.0, 1.0, 5)


def test_summary_hand_count():
    s = summarize([_record(i, 1e-8) for i in range(9)] + [_record(9, 1.0)])
    assert s.d5 == 1e-8 and s.acc == 0.9


def test_summary_quantiles_match_sort():
    losses = np.random.default_rng(0).lognormal(-10, 4, size=10_000)
    s = summarize([_record(i, x) for i, x in enumerate(losses)])
    srt = np.sort(losses)
    assert s.d5 == srt[int(np.floor(0.5 * 9_999))]
    assert s.d9 == srt[int(np.floor(0.9 * 9_999))]
    assert s.acc == np.count_nonzero(losses < 1e-6) / 10_000


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(min_value=0, max_value=1e3), min_size=1, max_size=50))
def test_summary_monotone(losses):
    s = summarize([_record(i, x) for i, x in enumerate(losses)])
    assert s.d5 <= s.d9 and 0 <= s.acc <= 1


def test_summary_empty_rejected():
    with pytest.raises(ValueError):
        summarize([])


@pytest.mark.parametrize("bad", [dict(schedule=((0, 1.0), (0, 0.5))), dict(schedule=((5, 1.0),)),
                                 dict(schedule=((0, -1.0),)), dict(method="sgd"), dict(eg_mode="x"),
                                 dict(iterations=-1)])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        OptimizerConfig(**bad)


def test_initial_step_rescales_schedule():
    cfg = OptimizerConfig().with_initial_step(50)
    assert cfg.schedule == ((0, 50.0), (200, 5.0), (1800, 0.5))


def test_tasks_deterministic():
    a = generate_tasks(("L", "torus"), 6, 3)
    b = generate_tasks(("L", "torus"), 6, 3)
    for x, y in zip(a, b):
        assert x.to_json() == y.to_json()


def test_tasks_differ_between_pairs():
    a = generate_tasks(("cube", "L"), 3, 0)
    b = generate_tasks(("cube", "torus"), 3, 0)
    assert not np.array_equal(a[0].target1_local, b[0].target1_local)


def test_task_construction_invariants():
    tasks = generate_benchmark(shapes.CONCAVE_SET + shapes.CONVEX_SET, 16, 16, 1)
    assert len(tasks) == 256 and [t.task_id for t in tasks] == list(range(256))
    for t in tasks[::8]:
        s1, s2 = t.shapes()
        for s, p in ((s1, t.target1_local), (s2, t.target2_local)):
            assert distance_to_mesh(p[None], s.source_mesh)[0] < 1e-9 * s.diag
        r = np.linalg.norm(t.pose2.t - t.pose1.t)
        assert 0.5 * (t.diag1 + t.diag2) / 2 <= r <= 1.5 * (t.diag1 + t.diag2) / 2
        assert 0.01 <= t.diag1 <= 0.2 and 0.01 <= t.diag2 <= 0.2


def test_bad_task_count():
    with pytest.raises(ValueError):
        generate_tasks(("cube", "cube"), 0, 0)


def _touching_task():
    # icosahedron vertex resting on the centre of a cube face, targets at the witnesses
    ico = bench.resolve_shape("icosahedron", 0.05)
    v = ico.pieces[0].vertices
    k = int(np.argmax(v[:, 0]))
    a, b = v[k] / np.linalg.norm(v[k]), np.array([-1.0, 0.0, 0.0])
    axis = np.cross(a, b)
    R = exp_map(Twist(axis / np.linalg.norm(axis) * np.arccos(a @ b), [0, 0, 0])).R
    half = bench.resolve_shape("cube", 0.1).pieces[0].vertices[:, 0].max()
    pose2 = Pose(R, [half - R[0] @ v[k], 0.0, 0.0])
    fwd = composite_witness(bench.resolve_shape("cube", 0.1), Pose.identity(), ico, pose2)
    return TaskSpec(0, "cube", "icosahedron", 0.1, 0.05, Pose.identity(), pose2, fwd.x1_local, fwd.x2_local, 7)


def test_near_optimum_start():
    rec = optimize_task(_touching_task(), OptimizerConfig(iterations=50))
    assert rec.final_loss < 1e-10 and rec.iterations <= 50


def test_trace_is_consistent():
    t = generate_tasks(("sphere162", "cube"), 1, 0)[0]
    rec = optimize_task(t, SHORT)
    assert len(rec.trace) == rec.iterations + 1 and rec.trace[-1] == rec.final_loss >= 0


def test_loss_decreases_on_convex_pair():
    t = generate_tasks(("sphere642", "capsule"), 1, 2)[0]
    rec = optimize_task(t, OptimizerConfig())
    assert rec.final_loss < 1e-3 * rec.trace[0]


def test_zero_iterations_zero_time():
    rec = optimize_task(generate_tasks(("cube", "cube"), 1, 0)[0], OptimizerConfig(iterations=0))
    assert rec.fwd_us == 0.0 and rec.bwd_us == 0.0 and rec.iterations == 0
    assert measure_runtime(OptimizerConfig(iterations=0), generate_tasks(("cube", "cube"), 2, 0)) == \
        {"forward": 0.0, "backward": 0.0}


def test_deterministic_traces():
    tasks = generate_benchmark(shapes.CONCAVE_SET, 2, 2, 4)
    for method in ("ours", "rs0", "rs1_dir"):
        cfg = replace(SHORT, method=method)
        a, b = run_tasks(tasks, cfg, workers=1), run_tasks(tasks, cfg, workers=1)
        for x, y in zip(a, b):
            assert np.array_equal(x.trace, y.trace)


def test_worker_count_does_not_change_results():
    tasks = generate_benchmark(shapes.CONVEX_SET, 3, 2, 9)
    a, b = run_tasks(tasks, SHORT, workers=1), run_tasks(tasks, SHORT, workers=2)
    assert [r.task_id for r in b] == list(range(6))
    assert [r.trace.tobytes() for r in a] == [r.trace.tobytes() for r in b]


def test_env_overrides_workers(monkeypatch):
    monkeypatch.setenv("DIFFWITNESS_THREADS", "3")
    assert bench.worker_count(1) == 3


def test_failed_task_counts_against_accuracy():
    good = generate_tasks(("cube", "cube"), 1, 0)[0]
    bad = replace(good, task_id=1, shape2="no-such-shape")
    recs = run_tasks([good, bad], SHORT)
    assert recs[1].final_loss == np.inf and "no-such-shape" in recs[1].error
    assert summarize(recs).n_tasks == 2


def test_eg_modes_differ_only_in_transport():
    t = generate_tasks(("ellipsoid", "capsule"), 1, 5)[0]
    a = optimize_task(t, replace(SHORT, eg_mode="step"))
    b = optimize_task(t, replace(SHORT, eg_mode="gradient"))
    assert a.trace[0] == b.trace[0]
    c = optimize_task(t, replace(SHORT, use_eg=False, eg_mode="step"))
    d = optimize_task(t, replace(SHORT, use_eg=False, eg_mode="gradient"))
    assert np.array_equal(c.trace, d.trace)


def test_margin_sweep_cardinality_and_shared_tasks():
    tasks = generate_tasks(("sphere162", "cube"), 2, 0)
    seen = []
    rows = run_sweep("margin", [0, 1e-5, 1e-4, 1e-3, 1e-2], SHORT, tasks,
                     record_sink=lambda axis, v, cfg, recs: seen.append([r.task_id for r in recs]))
    assert len(rows) == 5 and [r["value"] for r in rows] == [0, 1e-5, 1e-4, 1e-3, 1e-2]
    assert all(s == [0, 1] for s in seen)


def test_sweep_rejects_empty_grid():
    with pytest.raises(ValueError):
        run_sweep("margin", [], SHORT, [])


def test_ablation_sweep_labels():
    tasks = generate_tasks(("cube", "L"), 1, 0)
    rows = run_sweep("ablation", ["dist-t2-eg", "dist-joint"], SHORT, tasks)
    assert [r["method"] for r in rows] == ["dist-t2-eg", "dist-joint"]


def test_csv_and_json_schema(tmp_path):
    recs = [_record(1, 0.5), _record(0, 1e-9)]
    bench.write_records_csv(recs, tmp_path / "r.csv")
    text = (tmp_path / "r.csv").read_text().splitlines()
    assert text[0] == "task_id,method,final_loss,iters,fwd_us,bwd_us"
    assert tuple(next(csv.reader([text[0]]))) == CSV_COLUMNS
    assert text[1].startswith("0,ours,1e-09,1,")
    bench.write_summary_json(summarize(recs), tmp_path / "s.json", axis="margin", value=0.0)
    data = json.loads((tmp_path / "s.json").read_text())
    assert sorted(data) == ["acc", "axis", "d5", "d9", "n_tasks", "value"]


def test_table_format():
    out = bench.format_table([{"method": "ours", "d5": 1e-9, "d9": 1e-6, "acc": 0.911}])
    assert out.splitlines()[1].split() == ["ours", "1.00e-09", "1.00e-06", "91.1"]


def test_paired_bootstrap():
    rng = np.random.default_rng(0)
    a = (rng.random(256) < 0.8).astype(float)
    b = a * (rng.random(256) < 0.6)
    d, lo, hi = bench.paired_bootstrap(a, b)
    assert d == pytest.approx(a.mean() - b.mean()) and 0 < lo <= d <= hi
    # a hand-rolled percentile bootstrap over task indices agrees to resampling noise
    idx = rng.integers(0, 256, size=(4000, 256))
    manual = np.percentile((a[idx] - b[idx]).mean(axis=1), [2.5, 97.5])
    assert lo == pytest.approx(manual[0], abs=0.015) and hi == pytest.approx(manual[1], abs=0.015)
    assert bench.paired_bootstrap(a, a) == (0.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        bench.paired_bootstrap(a, b[:10])
