"""``selectdpc`` command line.

Exit codes: 0 success, 2 usage or configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .. import __version__, isomap
from ..deepc import ConfigError
from ..predictor import SingularPredictorError
from ..qp import NonConvexError
from ..trajectory_data import save_dataset
from . import data as datamod
from . import experiments as ex
from .config import load_config

log = logging.getLogger("selectdpc")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

BASELINE_OF = {"norm": "select_norm", "manifold": "select_manifold", "random": "select_random",
               "full": "full_deepc", "windowed": "time_windowed"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="config file, or the name of a shipped config")
    common.add_argument("--seed", type=int, default=None, help="override the run / data seed")
    common.add_argument("--out", default=None, help="output directory (default: the config's output_dir)")
    common.add_argument("--method", default=None, choices=sorted(BASELINE_OF),
                        help="controller or selection method")
    common.add_argument("--n-cols", type=int, default=None, help="selected trajectories per solve")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="selectdpc", description="Select-DPC experiments")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, text in [
        ("gen-data", "generate the training dataset and write it as CSV"),
        ("fit-embedding", "fit and cache the Isomap model of the training data"),
        ("run", "one closed-loop episode: trace CSV plus summary JSON"),
        ("sweep-residual", "prediction residual versus N_cols per selection method"),
        ("sweep-cost", "closed-loop cost versus N_cols per baseline"),
        ("sweep-isomap", "reconstruction error over the (k, d_embed) grid"),
        ("contrast", "relative contrast versus trajectory length"),
    ]:
        sub.add_parser(name, parents=[common], help=text, description=text)
    return p


def _write_rows(path: Path, rows: list[dict]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        if rows:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            for r in rows:
                w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return path


def _json_safe(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, np.generic):
        return _json_safe(obj.item())
    return obj


def _write_summary(path: Path, cfg, command: str, seeds, totals: dict, checks: dict) -> Path:
    doc = dict(command=command, config=cfg.name, config_hash=cfg.digest(), seeds=list(seeds),
               totals=totals, checks=checks, version=__version__)
    path.write_text(json.dumps(_json_safe(doc), indent=2, sort_keys=True) + "\n")
    return path


def _dataset(cfg, seed):
    if seed is not None:
        cfg.data.seed = seed
    return datamod.from_config(cfg)


def _holdout(cfg):
    s = cfg.sweep
    return datamod.holdout_dataset(cfg.plant.name, s.holdout_steps, s.holdout_seed, cfg.dpc.T_p, cfg.dpc.T_f,
                                   init_low=s.holdout_low, init_high=s.holdout_high,
                                   detune=s.holdout_detune, dither=s.holdout_dither)


def cmd_gen_data(cfg, args, out: Path) -> int:
    ds = _dataset(cfg, args.seed)
    path, meta = save_dataset(ds, out / "dataset.csv", dt=ds.meta.get("dt"), env=cfg.plant.name)
    _write_summary(out / "summary.json", cfg, "gen-data", [cfg.data.seed],
                   dict(windows=ds.n_d, episodes=len(ds.episodes or [])), {})
    print(f"{ds.n_d} trajectories -> {path}")
    return EXIT_OK


def cmd_fit_embedding(cfg, args, out: Path) -> int:
    ds = _dataset(cfg, args.seed)
    cfg.isomap.cache_dir = cfg.isomap.cache_dir or str(out / "cache")
    model = ex.fit_embedding(cfg, ds)
    err = isomap.reconstruction_error(model)
    _write_summary(out / "summary.json", cfg, "fit-embedding", [cfg.data.seed],
                   dict(n_d=model.n_d, d_embed=model.d_embed, k=model.k_neighbors, recon_error=err), {})
    print(f"embedding n_d={model.n_d} d={model.d_embed} k={model.k_neighbors} error={err:.4g}")
    return EXIT_OK


def cmd_run(cfg, args, out: Path) -> int:
    seed = cfg.sweep.seeds[0] if args.seed is None else args.seed
    ds = datamod.from_config(cfg)
    baseline = BASELINE_OF[args.method or cfg.selection.kind]
    ctl = ex.build_controller(cfg, ds, baseline, args.n_cols)
    tr = ex.run_episode(cfg, ctl, seed)
    tr.to_csv(out / "trace.csv", cfg.run.snapshot_steps)
    s = ex.trace_summary(tr)
    checks = dict(finite_cost=not tr.diverged)
    _write_summary(out / "summary.json", cfg, "run", [seed], dict(method=baseline, **s), checks)
    print(f"{baseline}: cost={s['cost']:.6g} diverged={s['diverged']} steps={s['steps']}")
    return EXIT_OK


def cmd_sweep_residual(cfg, args, out: Path) -> int:
    ds = _dataset(cfg, args.seed)
    methods = [args.method] if args.method else cfg.sweep.methods
    n_list = [args.n_cols] if args.n_cols else cfg.sweep.n_cols
    model = ex.fit_embedding(cfg, ds) if "manifold" in methods else None
    rows = ex.residual_sweep(ds, _holdout(cfg), n_list + [ds.n_d], methods, model,
                             cfg.selection_method(), cfg.dpc.affine, cfg.selection.seed)
    _write_rows(out / "residual.csv", rows)
    full = next(r["cum_residual"] for r in rows if r["n_cols"] == ds.n_d)
    checks = {f"{m}_beats_full": min(r["cum_residual"] for r in rows if r["method"] == m) < full
              for m in methods if m != "full"}
    _write_summary(out / "summary.json", cfg, "sweep-residual", [cfg.data.seed], dict(full=full), checks)
    print(f"{len(rows)} rows -> {out / 'residual.csv'}")
    return EXIT_OK


def cmd_sweep_cost(cfg, args, out: Path) -> int:
    ds = datamod.from_config(cfg)
    seeds = [args.seed] if args.seed is not None else cfg.sweep.seeds
    n_list = [args.n_cols] if args.n_cols else cfg.sweep.n_cols
    baselines = [BASELINE_OF[args.method]] if args.method else cfg.sweep.baselines
    rows = ex.cost_sweep(cfg, ds, seeds, n_list, baselines)
    _write_rows(out / "cost.csv", rows)
    totals = {b: int(sum(r["diverged"] for r in rows if r["method"] == b)) for b in baselines}
    _write_summary(out / "summary.json", cfg, "sweep-cost", seeds, dict(diverged_runs=totals), {})
    print(f"{len(rows)} rows -> {out / 'cost.csv'}")
    return EXIT_OK


def cmd_sweep_isomap(cfg, args, out: Path) -> int:
    ds = _dataset(cfg, args.seed)
    w = ex.resolve_weights(ds, cfg.selection_method("manifold"))
    pts = ex.subsample(ds.flat * w, cfg.sweep.isomap_points, cfg.data.seed)
    rows = ex.isomap_grid(pts, cfg.sweep.k_neighbors, cfg.sweep.d_embed)
    _write_rows(out / "isomap_grid.csv", rows)
    _write_summary(out / "summary.json", cfg, "sweep-isomap", [cfg.data.seed], dict(points=len(pts)), {})
    print(f"{len(rows)} rows -> {out / 'isomap_grid.csv'}")
    return EXIT_OK


def cmd_contrast(cfg, args, out: Path) -> int:
    ds = _dataset(cfg, args.seed)
    T_f_list = cfg.sweep.contrast_dims or [cfg.dpc.T_f]
    rows = ex.contrast_curve(ds, T_f_list, cfg.sweep.isomap_points, cfg.sweep.contrast_queries,
                             cfg.isomap.k_neighbors, n_est=cfg.isomap.n_est, seed=cfg.data.seed)
    _write_rows(out / "contrast.csv", rows)
    checks = {f"{v}_at_least_l1": all(r[f"delta_iso_{v}"] >= r["delta_l1"] for r in rows[1:])
              for v in ("fixed", "varying")}
    _write_summary(out / "summary.json", cfg, "contrast", [cfg.data.seed], {}, checks)
    print(f"{len(rows)} rows -> {out / 'contrast.csv'}")
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data, "fit-embedding": cmd_fit_embedding, "run": cmd_run,
    "sweep-residual": cmd_sweep_residual, "sweep-cost": cmd_sweep_cost,
    "sweep-isomap": cmd_sweep_isomap, "contrast": cmd_contrast,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.n_cols is not None and args.n_cols < 1:
            raise ConfigError("--n-cols must be >= 1")
        out = Path(args.out or cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, args, out)
    except (ConfigError, FileNotFoundError, KeyError) as exc:
        print(f"selectdpc: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (np.linalg.LinAlgError, SingularPredictorError, NonConvexError, isomap.DisconnectedGraphError,
            FloatingPointError) as exc:
        print(f"selectdpc: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
