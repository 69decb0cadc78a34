"""Accuracy versus initial rotation step s_r (translation step s_r/100), ours against RS-0."""
from _common import dump, parser, tasks
from diffwitness import bench

p = parser(__doc__, n_pairs=12, shape_set="convex")
p.add_argument("--grid", default="1,2,5,10,20,50,100")
p.add_argument("--methods", default="ours,rs0")
args = p.parse_args()

task_list = tasks(args)
rows = bench.run_sweep("step_size", [float(v) for v in args.grid.split(",")], bench.OptimizerConfig(), task_list,
                       args.methods.split(","), args.workers)
dump(rows, f"{args.out}/step_sweep.json")
for m in args.methods.split(","):
    accs = [r["acc"] for r in rows if r["method"] == m]
    print(f"{m:<6} " + "  ".join(f"{100 * a:5.1f}" for a in accs) + f"   range {100 * (max(accs) - min(accs)):.1f} pts")
