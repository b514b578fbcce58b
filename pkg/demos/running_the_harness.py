"""
Running verification suites from Python
=======================================

Every check in the library is reachable through ``run_experiment``.  A config
is a frozen dataclass that serializes to JSON; rows carry the measured value,
its threshold and a pass flag, and are identical for identical seeds.
"""

import tempfile

from lp_ends import ExperimentConfig, run_experiment
from lp_ends.harness import rows_to_csv

cfg = ExperimentConfig().replace(seed=7)
print(cfg.to_json()[:200], "...")

for suite in ("partition", "khintchine", "cz"):
    rows = run_experiment(cfg, suite)
    bad = [r for r in rows if not r.passed]
    print(f"{suite:10s} {len(rows):3d} rows, {len(bad)} failing")

with tempfile.TemporaryDirectory() as out:
    a = rows_to_csv(run_experiment(cfg, "partition", out_dir=out))
    b = rows_to_csv(run_experiment(cfg, "partition"))
    print("repeatable:", a == b)
