"""Shared argument handling for the experiment scripts."""
import argparse
import json
import time
from pathlib import Path

from diffwitness import bench, shapes

SETS = {"convex": shapes.CONVEX_SET, "concave": shapes.CONCAVE_SET}


def parser(doc, n_pairs=64, tasks_per_pair=4, shape_set="concave"):
    p = argparse.ArgumentParser(description=doc)
    p.add_argument("--set", choices=sorted(SETS), default=shape_set)
    p.add_argument("--n-pairs", type=int, default=n_pairs)
    p.add_argument("--tasks-per-pair", type=int, default=tasks_per_pair)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", default="results")
    return p


def tasks(args):
    return bench.generate_benchmark(SETS[args.set], args.n_pairs, args.tasks_per_pair, args.seed)


def run(tasks, cfg, workers, out_dir, stem):
    t0 = time.time()
    recs = bench.run_tasks(tasks, cfg, workers)
    summary = bench.summarize(recs)
    out = Path(out_dir)
    bench.write_records_csv(recs, out / f"{stem}.csv")
    bench.write_summary_json(summary, out / f"{stem}.json", method=cfg.name, seconds=round(time.time() - t0, 1))
    print(f"{stem:<32} D5 {summary.d5:.2e}  D9 {summary.d9:.2e}  Acc {100 * summary.acc:5.1f}%  "
          f"({time.time() - t0:.0f}s)", flush=True)
    return recs, summary


def dump(obj, path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=2) + "\n")
