"""Cart-pole swing-up from demonstrations: Select-DPC against full-data DeePC.

    python3 demos/swingup.py [seed]
"""
import sys

import numpy as np

from selectdpc.controller import combination_profile
from selectdpc.harness.config import load_config
from selectdpc.harness.data import from_config
from selectdpc.harness.experiments import build_controller, run_episode
from selectdpc.plants import upright_error

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
cfg = load_config("cartpole_swingup")
data = from_config(cfg)
print(f"{data.n_d} demonstration windows")

for baseline in ("select_norm", "full_deepc"):
    trace = run_episode(cfg, build_controller(cfg, data, baseline), seed)
    err = upright_error(trace.y)
    line = f"{baseline:12s} cost {trace.cost:.4g}  final-50 max angle error {err[-50:].max():.3f} rad"
    if baseline == "select_norm":
        line += f"  median active weights {np.median(combination_profile(trace)):g}"
    print(line)
