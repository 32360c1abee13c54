"""Hyperparameter grid search with per-cell CSV logs.

Each cell of the Cartesian product gets a seed derived from the base
seed and its index, its own CSV log and a row in summary.csv.  Diverged
cells are kept in the summary but never selected as best.  The same
sweep is available as `kronqn grid --config base.ini --grid grid.ini`.
"""

import tempfile

from kronqn.config import RunConfig
from kronqn.harness import parse_grid, run_grid

base = RunConfig()
base.model.arch = "64-32-8-32-64"
base.data.dims = "8"
base.data.n_samples = 1000
base.run.epochs = 5
base.run.batch_size = 100
base.optimizer.name = "kbfgs"

axes = parse_grid("""
[grid]
optimizer.lr = 0.003, 0.03, 3.0
optimizer.damping = 0.3, 3
""")

with tempfile.TemporaryDirectory() as out:
    rows, best = run_grid(base, axes, out)
    for r in rows:
        print(f"cell {r['cell']}: lr={r['optimizer.lr']:>5s} damping={r['optimizer.damping']:>3s} "
              f"{r['status']:9s} final loss {r['final_loss']:.3f}")
    print(f"\nbest: cell {best['cell']} (lr={best['optimizer.lr']}, damping={best['optimizer.damping']})")
