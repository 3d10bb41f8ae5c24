"""Relative contrast of raw L1 distances and Isomap distances on rocket trajectories.

    python3 demos/contrast.py
"""
from selectdpc.harness.config import load_config
from selectdpc.harness.data import from_config
from selectdpc.harness.experiments import contrast_curve

cfg = load_config("rocket_iid")
rows = contrast_curve(from_config(cfg), cfg.sweep.contrast_dims, cfg.sweep.isomap_points,
                      cfg.sweep.contrast_queries, cfg.isomap.k_neighbors, n_est=cfg.isomap.n_est)
print(f"{'dim':>5} {'L1':>7} {'iso fixed d':>12} {'iso n+T_f m':>12}")
for r in rows:
    print(f"{r['dim']:>5} {r['delta_l1']:>7.3f} {r['delta_iso_fixed']:>12.3f} {r['delta_iso_varying']:>12.3f}")
