"""Run the two cached benchmark trainings sequentially.

Safe to rerun: completed recipes are skipped via their checkpoint files.
"""
import time

import torch

from pfrecon.experiments import train_aggregation_trio, train_strategy_comparison

torch.set_num_threads(torch.get_num_threads())

t0 = time.time()
paths = train_aggregation_trio("/root/pkg/artifacts")
print(f"aggregation trio done at {(time.time() - t0) / 60:.1f} min: "
      f"{sorted(p.name for p in paths.values())}", flush=True)

paths = train_strategy_comparison("/root/pkg/artifacts")
print(f"strategy comparison done at {(time.time() - t0) / 60:.1f} min: "
      f"{sorted(p.name for p in paths.values())}", flush=True)
