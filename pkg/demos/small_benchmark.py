"""Run the full method grid on two models at a reduced scale and print the report table.

Run with ``python3 demos/small_benchmark.py [out_dir]``. The scale factor shrinks
every sample size, so the numbers are noisier than a full-size run.
"""
import sys
from pathlib import Path

from cdebench import harness

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_results")
config = harness.RunConfig(model=["M1", "M10"], methods="all", runs=2, scale_factor=0.05, base_seed=1)

todo, skipped = harness.plan_cells(config)
for model, method, reason in skipped:
    print(f"skipping {method} on {model}: {reason}")



def show(row):
    status = f"W1 {row.metrics.w1:.3f}" if row.ok else f"failed ({row.failure})"
    print(f"{row.model} {row.method} run {row.run}: {status}", flush=True)


table = harness.run_experiment(config, progress=show)
harness.write_reports(table, out, config)
print((out / "results.md").read_text())
