"""Ablations on the concave bundle: score x sampling grid and the EG / joint-optimisation rows.

Prints each variant and paired-bootstrap intervals for the orderings of interest.
"""
from dataclasses import replace

from _common import dump, parser, run, tasks
from diffwitness import bench

p = parser(__doc__)
p.add_argument("--variants", default=",".join(bench.ABLATIONS))
args = p.parse_args()

task_list = tasks(args)
flags, rows = {}, []
for name in args.variants.split(","):
    cfg = replace(bench.OptimizerConfig(), label=name, **bench.ABLATIONS[name])
    recs, s = run(task_list, cfg, args.workers, args.out, f"ablation_{name}")
    flags[name] = [r.converged for r in recs]
    rows.append({"variant": name, **s.as_dict()})

comparisons = [("dist-adaptive", "dir-adaptive"), ("dist-neighbor", "dir-neighbor"), ("dist-fixed", "dir-fixed"),
               ("dist-adaptive", "dist-fixed"), ("dist-t2-eg", "dist-t2-noeg"), ("dist-t2-eg", "dist-joint")]
cis = []
print()
for a, b in comparisons:
    if a in flags and b in flags:
        d, lo, hi = bench.paired_bootstrap(flags[a], flags[b])
        cis.append({"a": a, "b": b, "diff": d, "low": lo, "high": hi})
        print(f"{a:>14} - {b:<14} {100 * d:+6.1f} pts  95% CI [{100 * lo:+6.1f}, {100 * hi:+6.1f}]")
dump({"variants": rows, "comparisons": cis}, f"{args.out}/ablation.json")
