"""Cumulative prediction residual versus N_cols on cart-pole IID data.

    python3 demos/residual_curve.py
"""
from selectdpc.harness.config import load_config
from selectdpc.harness.data import from_config, holdout_dataset
from selectdpc.harness.experiments import fit_embedding, residual_sweep

cfg = load_config("cartpole_iid")
s = cfg.sweep
data = from_config(cfg)
holdout = holdout_dataset(cfg.plant.name, s.holdout_steps, s.holdout_seed, cfg.dpc.T_p, cfg.dpc.T_f,
                          init_low=s.holdout_low, init_high=s.holdout_high,
                          detune=s.holdout_detune, dither=s.holdout_dither)
rows = residual_sweep(data, holdout, s.n_cols + [data.n_d], s.methods, fit_embedding(cfg, data),
                      cfg.selection_method(), cfg.dpc.affine)
print(f"{'method':>9} {'n_cols':>7} {'residual':>10}")
for r in rows:
    print(f"{r['method']:>9} {r['n_cols']:>7} {r['cum_residual']:>10.4g}")
