"""
Running a sweep from a config file
==================================

The same pipeline the ``fedshift`` command uses: load a YAML config, run
every (strategy, seed) pair, write the tidy result bundle and the per-figure
plot tables. Output goes to a temporary directory here.
"""

import csv
import tempfile
from pathlib import Path

from fedshift.experiment import load_config, run

config = load_config(Path(__file__).resolve().parents[1] / "configs" / "smoke_localized.yaml")
print(f"scenario {config.scenario}: {[s.label for s in config.strategies]} x seeds {config.seeds}")

with tempfile.TemporaryDirectory() as tmp:
    bundle, out = run(config, Path(tmp) / "bundle")
    print("files:", sorted(p.name for p in out.iterdir()))
    with open(out / "plot_task_ltr.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            print(f"  {row['strategy']:6s} task {row['trained_task']}: "
                  f"LTR {float(row['mean']):.3f} +/- {float(row['std']):.3f}")
