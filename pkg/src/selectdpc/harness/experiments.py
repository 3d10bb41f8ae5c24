"""Experiment drivers: residual, closed-loop cost, Isomap grid and contrast sweeps.

Every driver returns a list of plain dict rows sorted by its key columns, so
cells can be computed in any order (or in isolation) and written unchanged.
"""
from __future__ import annotations

import dataclasses
import logging
import math

import numpy as np

from .. import isomap
from ..controller import ClosedLoopTrace, FullDeePC, SelectDPC, TimeWindowedDeePC, run_closed_loop
from ..plants import make_plant
from ..predictor import PredictorContext, ls_predict, prediction_residual
from ..selection import SelectionMethod, Selector, distances, relative_contrast_from_distances, resolve_weights
from ..trajectory_data import Dataset, blocks_from, extract_trajectories

log = logging.getLogger(__name__)


class OverlapError(ValueError):
    """The holdout shares trajectories with the training data."""


def _row_keys(flat: np.ndarray) -> set:
    return {r.tobytes() for r in np.ascontiguousarray(flat)}


def check_disjoint(dataset: Dataset, holdout: Dataset):
    if _row_keys(dataset.flat) & _row_keys(holdout.flat):
        raise OverlapError("holdout trajectories also appear in the training dataset")


# -- residual sweep ----------------------------------------------------------

def _predict(dataset: Dataset, idx, traj, affine: bool) -> np.ndarray:
    ctx = PredictorContext(blocks_from(dataset, idx, affine=affine))
    return ls_predict(ctx, traj.u_p, traj.y_p, traj.u_f)


def residual_sweep(dataset: Dataset, holdout: Dataset, n_cols_list, methods=("norm", "manifold", "random"),
                   model: isomap.EmbeddingModel | None = None, selection: SelectionMethod = SelectionMethod(),
                   affine: bool = True, seed: int = 0, allow_overlap: bool = False) -> list[dict]:
    """Cumulative least-squares prediction residual per ``(method, n_cols)``.

    Each holdout window is used as the query; its ``N_cols`` nearest data
    trajectories (or a random subset) form the predictor, and
    ``‖ŷ_f − y_f‖₂`` is summed over the holdout.  ``N_cols >= n_d`` uses all
    of the data for every method.  ``allow_overlap`` permits queries drawn
    from the training data, which is only meaningful as a leakage check.
    """
    if not allow_overlap:
        check_disjoint(dataset, holdout)
    n_d = dataset.n_d
    n_list = sorted({min(int(n), n_d) for n in n_cols_list})
    queries = holdout.trajectories
    full_res = None
    if n_d in n_list or "full" in methods:
        full = PredictorContext(blocks_from(dataset, affine=affine))
        full_res = sum(prediction_residual(ls_predict(full, q.u_p, q.y_p, q.u_f), q.y_f) for q in queries)
    rows = []
    for method in methods:
        if method == "full":
            rows.append(dict(method="full", n_cols=n_d, cum_residual=full_res))
            continue
        totals = dict.fromkeys(n_list, 0.0)
        todo = [n for n in n_list if n < n_d]
        if todo:
            sel = None
            if method in ("norm", "manifold"):
                sel = Selector(dataset, dataclasses.replace(selection, kind=method), model)
            rng = np.random.default_rng(seed)
            for q in queries:
                if sel is not None:
                    order = sel.select(q, max(todo)).indices
                for n in todo:
                    idx = order[:n] if sel is not None else rng.choice(n_d, size=n, replace=False)
                    totals[n] += prediction_residual(_predict(dataset, idx, q, affine), q.y_f)
        for n in n_list:
            res = full_res if n == n_d else totals[n]
            rows.append(dict(method=method, n_cols=n, cum_residual=res))
    return sorted(rows, key=lambda r: (r["method"], r["n_cols"]))


# -- closed loop --------------------------------------------------------------

def build_controller(cfg, dataset: Dataset, baseline: str, n_cols: int | None = None,
                     model: isomap.EmbeddingModel | None = None):
    """Controller for one of the configured baselines."""
    dpc = cfg.dpc_config()
    if baseline == "full_deepc":
        return FullDeePC(dataset, dpc)
    if baseline == "time_windowed":
        return TimeWindowedDeePC(dpc, cfg.run.time_window)
    kind = {"select_norm": "norm", "select_manifold": "manifold", "select_random": "random"}.get(baseline)
    if kind is None:
        raise ValueError(f"unknown baseline {baseline!r}")
    if kind == "manifold" and model is None:
        model = fit_embedding(cfg, dataset)
    return SelectDPC(dataset, dpc, cfg.outer_settings(n_cols, kind), model if kind == "manifold" else None)


def fit_embedding(cfg, dataset: Dataset, d_embed: int | None = None, k: int | None = None):
    """Isomap model on the standardised trajectories, as manifold selection expects."""
    w = resolve_weights(dataset, cfg.selection_method("manifold"))
    iso = cfg.isomap
    d = d_embed or iso.d_embed or isomap.default_d_embed(cfg.dpc.T_f, dataset.m, dataset.p, iso.n_est)
    d = min(d, dataset.n_d - 1)
    return isomap.fit_cached(dataset.flat * w, k or iso.k_neighbors, d, iso.cache_dir)


def run_episode(cfg, controller, seed: int, steps: int | None = None) -> ClosedLoopTrace:
    """One closed-loop episode from the configured start, perturbed by ``seed``."""
    r = cfg.run
    plant = make_plant(cfg.plant.name, **cfg.plant.overrides)
    plant.reset(r.x0, perturbation=r.init_perturbation, seed=seed)
    return run_closed_loop(plant, controller, steps or r.steps, cfg.dpc_config(), seed=seed,
                           warmup_scale=r.warmup_scale, blowup=r.blowup)


def trace_summary(trace: ClosedLoopTrace) -> dict:
    return dict(cost=trace.cost, diverged=bool(trace.diverged), steps=trace.steps,
                sel_ms_total=float(np.sum(trace.sel_ms)), qp_ms_total=float(np.sum(trace.qp_ms)),
                mean_iters=float(np.mean(trace.iterations)) if trace.steps else 0.0,
                degraded_steps=int(np.sum(trace.degraded)))


def cost_sweep(cfg, dataset: Dataset, seeds=None, n_cols_list=None, baselines=None,
               model: isomap.EmbeddingModel | None = None) -> list[dict]:
    """Closed-loop cost per ``(baseline, n_cols, seed)``; divergence shows as ``cost = inf``.

    ``n_cols`` only varies for the selection baselines; the others get one
    row per seed with ``n_cols = 0``.
    """
    seeds = cfg.sweep.seeds if seeds is None else seeds
    n_cols_list = cfg.sweep.n_cols if n_cols_list is None else n_cols_list
    baselines = cfg.sweep.baselines if baselines is None else baselines
    if "select_manifold" in baselines and model is None:
        model = fit_embedding(cfg, dataset)
    rows = []
    for b in baselines:
        cols = n_cols_list if b.startswith("select_") else [0]
        for n in cols:
            ctl = build_controller(cfg, dataset, b, n or None, model)
            for s in seeds:
                tr = run_episode(cfg, ctl, s)
                rows.append(dict(method=b, n_cols=int(n), seed=int(s), **trace_summary(tr)))
                log.info("%s n_cols=%s seed=%s cost=%.4g", b, n, s, rows[-1]["cost"])
    return sorted(rows, key=lambda r: (r["method"], r["n_cols"], r["seed"]))


# -- Isomap grid and relative contrast ---------------------------------------

def subsample(points: np.ndarray, n: int, seed: int = 0) -> np.ndarray:
    if n >= points.shape[0]:
        return points
    idx = np.sort(np.random.default_rng(seed).choice(points.shape[0], size=n, replace=False))
    return points[idx]


def isomap_grid(points, k_list, d_list) -> list[dict]:
    """Reconstruction error for every ``(k, d_embed)``; disconnected graphs give ``nan``.

    One eigendecomposition per ``k`` at the largest ``d`` serves every
    smaller ``d``, since the leading eigenpairs do not depend on how many
    are requested.
    """
    X = np.asarray(points, dtype=float)
    d_max = min(max(d_list), X.shape[0] - 1)
    rows = []
    for k in k_list:
        try:
            model = isomap.fit(X, k, d_max)
        except isomap.DisconnectedGraphError as exc:
            log.info("k=%d: %s", k, exc)
            rows += [dict(k=int(k), d_embed=int(d), recon_error=math.nan) for d in d_list]
            continue
        for d in d_list:
            rows.append(dict(k=int(k), d_embed=int(d),
                             recon_error=isomap.reconstruction_error(isomap.truncate(model, d))))
    return sorted(rows, key=lambda r: (r["k"], r["d_embed"]))


def contrast_curve(dataset: Dataset, T_f_list, n_points: int = 1000, n_queries: int = 20,
                   k_neighbors: int = 10, d_fixed: int | None = None, n_est: int | None = None,
                   seed: int = 0) -> list[dict]:
    """Mean relative contrast of raw L1 distances and of Isomap distances versus trajectory length.

    The source episodes are re-windowed with each ``T_f`` (``T_p`` fixed).
    Queries are held out of the Isomap fit and projected out of sample.
    ``delta_iso_fixed`` uses ``d_fixed`` embedding dimensions, and
    ``delta_iso_varying`` uses ``n + T_f·m``.
    """
    if dataset.episodes is None:
        raise ValueError("contrast curve needs the source episodes")
    rows = []
    for T_f in T_f_list:
        ds = extract_trajectories(dataset.episodes, dataset.T_p, int(T_f))
        X = ds.flat * resolve_weights(ds, SelectionMethod())
        X = subsample(X, n_points + n_queries, seed)
        rng = np.random.default_rng(seed)
        perm = rng.permutation(X.shape[0])
        Q, P = X[perm[:n_queries]], X[perm[n_queries:]]
        d_var = isomap.default_d_embed(int(T_f), ds.m, ds.p, n_est)
        d_fix = d_fixed or isomap.default_d_embed(int(T_f_list[0]), ds.m, ds.p, n_est)
        dims = sorted({min(d_var, P.shape[0] - 1), min(d_fix, P.shape[0] - 1)})
        model = isomap.fit(P, k_neighbors, max(dims))
        fixed, varying = isomap.truncate(model, d_fix), isomap.truncate(model, d_var)
        raw, iso_f, iso_v = [], [], []
        for q in Q:
            raw.append(relative_contrast_from_distances(distances(P, q, 1)))
            geo, _ = isomap.link(model, q)
            for m, acc in ((fixed, iso_f), (varying, iso_v)):
                e = isomap.embed_from_geodesic(m, geo)
                acc.append(relative_contrast_from_distances(distances(m.embedding, e, 2)))
        rows.append(dict(T_f=int(T_f), dim=int(ds.dim), delta_l1=float(np.mean(raw)),
                         delta_iso_fixed=float(np.mean(iso_f)), delta_iso_varying=float(np.mean(iso_v)),
                         d_fixed=int(fixed.d_embed), d_varying=int(varying.d_embed)))
    return sorted(rows, key=lambda r: r["T_f"])
