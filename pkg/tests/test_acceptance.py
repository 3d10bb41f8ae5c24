"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the lines are printed
outside pytest's capture, so they appear in the normal log.
"""
import dataclasses
import time

import numpy as np
import pytest
from scipy.stats import spearmanr

from selectdpc import isomap
from selectdpc.controller import SelectDPC, combination_profile
from selectdpc.deepc import DeePCController, DPCConfig
from selectdpc.harness import data as datamod
from selectdpc.harness.config import load_config
from selectdpc.harness.experiments import (build_controller, contrast_curve, fit_embedding, residual_sweep,
                                           run_episode)
from selectdpc.plants import LTIPlant, random_lti, upright_error
from selectdpc.predictor import PredictorContext, ls_predict
from selectdpc.qp import QPStatus, QuadraticProgram, kkt_residuals, solve
from selectdpc.trajectory_data import blocks_from, build_hankel, check_persistency, extract_trajectories

from conftest import simulate_lti
from test_deepc import mpc_oracle
from test_isomap import free_response_windows
from test_qp import active_set_oracle, random_qp

pytestmark = pytest.mark.acceptance


@pytest.fixture
def report(capsys):
    """``report(no, title, ok, detail, elapsed, limit)`` prints one line, then asserts."""
    def _report(no, title, ok, detail, elapsed, limit):
        in_time = elapsed < limit
        verdict = "PASS" if ok and in_time else "FAIL"
        with capsys.disabled():
            print(f"\n[criterion {no:2d}] {verdict}  {title}: {detail} ({elapsed:.1f}s / {limit:.0f}s)")
        assert ok, detail
        assert in_time, f"runtime {elapsed:.1f}s exceeds {limit}s"
    return _report


def test_01_fundamental_lemma(report):
    t0 = time.perf_counter()
    n, m, p, L = 4, 1, 1, 20
    A, B, C, D = random_lti(n, m, p, seed=11)
    rng = np.random.default_rng(11)
    u = rng.uniform(-1, 1, (600, m))
    pe = check_persistency(u, L * m + n).exciting
    y = simulate_lti(A, B, C, D, u)
    H = np.vstack([build_hankel(u, L), build_hankel(y, L)])
    worst = 0.0
    for _ in range(100):
        uv = rng.standard_normal((L, m))
        yv = simulate_lti(A, B, C, D, uv, rng.standard_normal(n))
        w = np.concatenate([uv.ravel(), yv.ravel()])
        g = np.linalg.lstsq(H, w, rcond=None)[0]
        worst = max(worst, np.linalg.norm(H @ g - w))
    report(1, "fundamental lemma", pe and worst < 1e-6, f"PE={pe}, worst residual {worst:.2e}",
           time.perf_counter() - t0, 10)


def test_02_predictor_oracle(report):
    t0 = time.perf_counter()
    n, T_p, T_f = 4, 4, 20
    A, B, C, D = random_lti(n, 1, 1, seed=12)
    rng = np.random.default_rng(12)
    u = rng.uniform(-1, 1, (800, 1))
    ds = extract_trajectories([(u, simulate_lti(A, B, C, D, u))], T_p, T_f)
    ctx = PredictorContext(blocks_from(ds, affine=False), regularization_eps=0.0)
    worst = 0.0
    for _ in range(100):
        uq = rng.standard_normal((T_p + T_f, 1))
        yq = simulate_lti(A, B, C, D, uq, rng.standard_normal(n))
        y_hat = ls_predict(ctx, uq[:T_p], yq[:T_p], uq[T_p:])
        truth = yq[T_p:].ravel()
        worst = max(worst, np.linalg.norm(y_hat - truth) / np.linalg.norm(truth))
    report(2, "explicit predictor", worst < 1e-6, f"worst relative error {worst:.2e}",
           time.perf_counter() - t0, 5)


def test_03_qp_certification(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    kkt, dx, bad = 0.0, 0.0, 0
    for _ in range(200):
        qp = random_qp(rng)
        s = solve(qp)
        if s.status is not QPStatus.OPTIMAL:
            bad += 1
            continue
        kkt = max(kkt, *kkt_residuals(qp, s.x, s.y))
        dx = max(dx, np.max(np.abs(s.x - active_set_oracle(qp))))
    # infeasible: contradictory bounds on a random direction
    flagged = 0
    for _ in range(20):
        qp = random_qp(rng, k=10)
        a = rng.standard_normal(qp.n)
        A = np.vstack([qp.A, a, a])
        l = np.concatenate([qp.l, [1.0, -np.inf]])
        u = np.concatenate([qp.u, [np.inf, 0.0]])
        flagged += solve(QuadraticProgram(qp.P, qp.q, A, l, u)).status is QPStatus.PRIMAL_INFEASIBLE
    ok = bad == 0 and kkt <= 1e-6 and dx <= 1e-5 and flagged == 20
    report(3, "QP certification", ok,
           f"non-optimal {bad}, max KKT {kkt:.1e}, max |x - oracle| {dx:.1e}, infeasible flagged {flagged}/20",
           time.perf_counter() - t0, 30)


def test_04_deepc_equals_mpc(report):
    t0 = time.perf_counter()
    T_p, T_f = 4, 15
    A, B, C, D = random_lti(4, 1, 1, seed=3)
    rng = np.random.default_rng(0)
    u = rng.uniform(-1, 1, (400, 1))
    ds = extract_trajectories([(u, simulate_lti(A, B, C, D, u))], T_p, T_f)
    Q, R, r = np.eye(1), 0.1 * np.eye(1), np.ones(1)
    cfg = DPCConfig(T_p, T_f, Q, R, y_ref=r, slack_weight=0, affine=False)
    oracle = mpc_oracle(A, B, C, D, Q, R, r, T_f)
    ctl, blocks = DeePCController(cfg), blocks_from(ds, affine=False)
    p1, p2 = LTIPlant(A, B, C, D), LTIPlant(A, B, C, D)
    uh = list(rng.uniform(-1, 1, (T_p, 1)))
    yh = [p1.step(v) for v in uh]
    for v in uh:
        p2.step(v)
    worst = 0.0
    for _ in range(50):
        a = ctl.compute_action(blocks, np.array(uh[-T_p:]), np.array(yh[-T_p:])).u_f[:1]
        o = oracle(p2.x)
        worst = max(worst, float(np.max(np.abs(a - o))))
        uh.append(a)
        yh.append(p1.step(a))
        p2.step(o)
    report(4, "DeePC = MPC on LTI", worst < 1e-3, f"worst input gap {worst:.2e} over 50 steps",
           time.perf_counter() - t0, 30)


def test_05_sweet_spot_residual(report):
    t0 = time.perf_counter()
    cfg = load_config("cartpole_iid")
    ds = datamod.from_config(cfg)
    s = cfg.sweep
    holdout = datamod.holdout_dataset(cfg.plant.name, s.holdout_steps, s.holdout_seed, cfg.dpc.T_p, cfg.dpc.T_f,
                                      init_low=s.holdout_low, init_high=s.holdout_high,
                                      detune=s.holdout_detune, dither=s.holdout_dither)
    model = fit_embedding(cfg, ds)
    rows = residual_sweep(ds, holdout, s.n_cols + [ds.n_d], ("norm", "manifold", "random"), model,
                          cfg.selection_method(), cfg.dpc.affine, cfg.selection.seed)
    full = next(r["cum_residual"] for r in rows if r["n_cols"] == ds.n_d)
    curve = {m: {r["n_cols"]: r["cum_residual"] for r in rows if r["method"] == m and r["n_cols"] < ds.n_d}
             for m in ("norm", "manifold", "random")}
    best = {m: min(c.values()) for m, c in curve.items()}
    random_worse = all(curve["random"][n] > curve["norm"][n] for n in curve["norm"])
    ok = best["norm"] < full and best["manifold"] < full and random_worse
    report(5, "sweet-spot residual", ok,
           f"n_d={ds.n_d}, full {full:.4g}, best norm {best['norm']:.4g}, best manifold {best['manifold']:.4g}, "
           f"random worse than norm at every N_cols: {random_worse}", time.perf_counter() - t0, 600)


@pytest.fixture(scope="module")
def swingup_runs():
    t0 = time.perf_counter()
    cfg = load_config("cartpole_swingup")
    ds = datamod.from_config(cfg)
    runs = {}
    for baseline in ("select_norm", "full_deepc"):
        ctl = build_controller(cfg, ds, baseline)
        runs[baseline] = [run_episode(cfg, ctl, s) for s in cfg.sweep.seeds]
    return cfg, runs, time.perf_counter() - t0


def _upright_tail(trace, tail=50, tol=0.1):
    return trace.steps >= tail and not trace.diverged and bool(np.all(upright_error(trace.y[-tail:]) < tol))


def test_06_swingup(report, swingup_runs):
    cfg, runs, elapsed = swingup_runs
    sel = [_upright_tail(t) for t in runs["select_norm"]]
    full = [_upright_tail(t) for t in runs["full_deepc"]]
    ok = sum(sel) >= 4 and not any(full)
    report(6, "cart-pole swing-up", ok,
           f"Select-DPC upright on {sum(sel)}/{len(sel)} seeds, full DeePC on {sum(full)}/{len(full)}",
           elapsed, 900)


def test_07_combination(report, swingup_runs):
    t0 = time.perf_counter()
    _, runs, _ = swingup_runs
    good = [t for t in runs["select_norm"] if _upright_tail(t)]
    counts = np.concatenate([combination_profile(t) for t in good]) if good else np.zeros(0)
    med = float(np.median(counts)) if counts.size else 0.0
    report(7, "combination evidence", bool(good) and med > 1,
           f"median active-g count {med:g} over {len(good)} successful runs", time.perf_counter() - t0, 60)


def test_08_timing(report):
    t0 = time.perf_counter()
    cfg = load_config("rocket_iid")
    ds = datamod.from_config(cfg)
    n_list = [25, 50, 100, 200, 400]
    sel_ms, qp_ms = [], []
    for n in n_list:
        # one selection and one QP per step, so the per-step split is clean
        settings = dataclasses.replace(cfg.outer_settings(n, "norm"), max_outer_iters=1)
        tr = run_episode(cfg, SelectDPC(ds, cfg.dpc_config(), settings), seed=0, steps=15)
        sel_ms.append(float(np.median(tr.sel_ms)))
        qp_ms.append(float(np.median(tr.qp_ms)))
    rho = spearmanr(n_list, qp_ms)[0]
    ratio = max(sel_ms) / min(sel_ms)
    report(8, "timing decomposition", rho > 0.9 and ratio < 2,
           f"QP ms {[round(v, 1) for v in qp_ms]} (Spearman {rho:.2f}), selection ms "
           f"{[round(v, 2) for v in sel_ms]} (max/min {ratio:.2f})", time.perf_counter() - t0, 600)


def test_09_isomap(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    P = rng.uniform(0, 1, (11, 2))
    Qm, _ = np.linalg.qr(rng.standard_normal((10, 10)))
    planar = isomap.reconstruction_error(isomap.fit(np.hstack([P, np.zeros((11, 8))]) @ Qm.T, 10, 2))

    t = 1.5 * np.pi * (1 + 2 * rng.uniform(size=1000))
    h = 21 * rng.uniform(size=1000)
    roll = isomap.fit(np.c_[t * np.cos(t), h, t * np.sin(t)], 10, 2)
    iu = np.triu_indices(1000, 1)
    emb = np.linalg.norm(roll.embedding[:, None] - roll.embedding[None], axis=-1)
    corr = np.corrcoef(roll.geodesic[iu], emb[iu])[0, 1]

    n, T_f, m = 4, 4, 1
    bound = n + T_f * m
    model = isomap.fit(free_response_windows(n, T_f=T_f, n_windows=1000), 20, bound + 10)
    err = {d: isomap.reconstruction_error(isomap.truncate(model, d)) for d in (bound, bound + 10)}
    gain = err[bound] - err[bound + 10]
    ok = planar < 1e-6 and corr > 0.99 and gain < 0.01
    report(9, "Isomap sanity", ok,
           f"planar error {planar:.1e}, swiss-roll corr {corr:.4f}, "
           f"gain beyond d={bound}: {100 * gain:.2f}%", time.perf_counter() - t0, 300)


def test_10_relative_contrast(report):
    t0 = time.perf_counter()
    cfg = load_config("rocket_iid")
    ds = datamod.from_config(cfg)
    rows = contrast_curve(ds, cfg.sweep.contrast_dims, cfg.sweep.isomap_points, cfg.sweep.contrast_queries,
                          cfg.isomap.k_neighbors, n_est=cfg.isomap.n_est, seed=cfg.data.seed)
    # the selector embeds with one fixed dimension, so that variant carries the check
    ok = all(r["delta_iso_fixed"] >= r["delta_l1"] for r in rows[1:])
    detail = ", ".join(f"dim {r['dim']}: iso {r['delta_iso_fixed']:.3g} (d={r['d_fixed']}) / "
                       f"{r['delta_iso_varying']:.3g} (d={r['d_varying']}) vs L1 {r['delta_l1']:.3g}" for r in rows)
    report(10, "relative contrast", ok, detail, time.perf_counter() - t0, 600)


def test_11_closed_loop_benefit(report):
    t0 = time.perf_counter()
    cfg = load_config("rocket_iid")
    ds = datamod.from_config(cfg)
    seeds = cfg.sweep.seeds
    full = {s: run_episode(cfg, build_controller(cfg, ds, "full_deepc"), s).cost for s in seeds}
    best = {s: np.inf for s in seeds}
    for n in cfg.sweep.n_cols:
        ctl = build_controller(cfg, ds, "select_norm", n)
        for s in seeds:
            best[s] = min(best[s], run_episode(cfg, ctl, s).cost)
    iid_wins = sum(best[s] <= 0.8 * full[s] for s in seeds)

    rw = load_config("rocket_random_walk")
    ds_rw = datamod.from_config(rw)
    rw_ok = 0
    for s in rw.sweep.seeds:
        f = run_episode(rw, build_controller(rw, ds_rw, "full_deepc"), s)
        sel = run_episode(rw, build_controller(rw, ds_rw, "select_norm", rw.outer.n_cols), s)
        rw_ok += bool(f.diverged) and np.isfinite(sel.cost)
    ratios = [round(best[s] / full[s], 2) for s in seeds]
    report(11, "closed-loop cost benefit", iid_wins >= 4 and rw_ok >= 4,
           f"IID select/full ratios {ratios} ({iid_wins}/5 <= 0.8), "
           f"random walk: full diverged with finite select on {rw_ok}/5", time.perf_counter() - t0, 1800)
