"""Convergence table: D5, D9 and Acc per method on the convex and concave bundles."""
from _common import SETS, dump, parser, run
from diffwitness import bench

p = parser(__doc__)
p.add_argument("--methods", default="ours,rs1_dir,analytical,fd,rs0")
p.add_argument("--sets", default="convex,concave")
args = p.parse_args()

rows = []
for name in args.sets.split(","):
    args.set = name
    tasks = bench.generate_benchmark(SETS[name], args.n_pairs, args.tasks_per_pair, args.seed)
    for method in args.methods.split(","):
        _, s = run(tasks, bench.OptimizerConfig(method=method), args.workers, args.out, f"table_{name}_{method}")
        rows.append({"set": name, "method": method, **s.as_dict()})
dump(rows, f"{args.out}/convergence_table.json")
for name in args.sets.split(","):
    print(f"\n{name}")
    print(bench.format_table([r for r in rows if r["set"] == name]))
