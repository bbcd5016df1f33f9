"""
Run directories, summaries and plot data
========================================

``run_training`` writes a self-contained run directory. ``summarize`` and
``emit_plot_data`` read only metrics.csv, so every reported number can be
recomputed from it.
"""
import tempfile
from pathlib import Path

from qsac import harness

root = Path(tempfile.mkdtemp())
runs = []
for algo in ("classical-sac", "quantum-sac"):
    cfg = harness.TrainConfig(algo=algo, seed=1, total_steps=2000, eval_every=1000, eval_episodes=3,
                              output_dir=str(root / algo))
    cfg.policy.n_qubits = 3
    runs.append(harness.run_training(cfg))
    print(algo, sorted(p.name for p in runs[-1].iterdir()))

# %%
print((runs[0] / "metrics.csv").read_text().splitlines()[:3])

# %%
summary = harness.summarize(runs)
print(harness.format_table(summary))

# %%
result = harness.emit_plot_data(runs, root / "plots")
for path in result["files"]:
    print(path, len(Path(path).read_text().splitlines()) - 1, "rows")
