"""Median per-iteration forward and backward time per method and shape class (microseconds)."""
from dataclasses import replace

from _common import SETS, dump, parser
from diffwitness import bench

p = parser(__doc__, n_pairs=4, tasks_per_pair=2)
p.add_argument("--methods", default="ours,rs1_dir,analytical,fd,rs0")
p.add_argument("--iterations", type=int, default=200)
args = p.parse_args()

rows = []
print(f"{'set':<9}{'method':<12}{'forward':>10}{'backward':>10}")
for name, shape_set in SETS.items():
    task_list = bench.generate_benchmark(shape_set, args.n_pairs, args.tasks_per_pair, args.seed)
    for m in args.methods.split(","):
        cfg = replace(bench.OptimizerConfig(method=m), iterations=args.iterations)
        t = bench.measure_runtime(cfg, task_list)
        rows.append({"set": name, "method": m, **t})
        print(f"{name:<9}{m:<12}{t['forward']:>10.1f}{t['backward']:>10.1f}", flush=True)
dump(rows, f"{args.out}/runtime.json")
