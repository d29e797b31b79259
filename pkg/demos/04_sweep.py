"""A reduced (d, n_d) sweep on the 141-bus feeder, written to ``sweep_demo/``.

The acceptance suite runs the full 3 x 3 x 10 grid; three seeds are enough
to see the trends.  Check the summary with ``scripts/recompute_summary.py``.

    python3 demos/04_sweep.py
"""

from pfpcmc.bench import summary_markdown, sweep_hyperparameters

grid = {"cases": ["case141"], "fads": [0.32], "seeds": 3, "ds": [3, 5], "n_ds": [500, 700, 900]}
run = sweep_hyperparameters(grid, "sweep_demo", progress=lambda r: print(f"d={r.d} n_d={r.n_d} seed={r.seed}: {r.mape_vmag:.3f}% in {r.wall_time:.1f}s"))
print()
print(summary_markdown(run.summary))
