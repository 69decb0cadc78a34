"""Accuracy versus contact margin beta for ours and the direction-score baseline."""
from _common import dump, parser, run, tasks
from diffwitness import bench

p = parser(__doc__, n_pairs=32, shape_set="convex")
p.add_argument("--grid", default="0,1e-5,1e-4,1e-3,1e-2")
p.add_argument("--methods", default="ours,rs1_dir")
args = p.parse_args()

task_list = tasks(args)
rows = bench.run_sweep("margin", [float(v) for v in args.grid.split(",")], bench.OptimizerConfig(), task_list,
                       args.methods.split(","), args.workers,
                       lambda axis, v, cfg, recs: bench.write_records_csv(recs, f"{args.out}/margin_{v}_{cfg.name}.csv"))
dump(rows, f"{args.out}/margin_sweep.json")
for r in rows:
    print(f"{r['method']:<10} beta={r['value']:<8g} Acc {100 * r['acc']:5.1f}%  D5 {r['d5']:.2e}")
