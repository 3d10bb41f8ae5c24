"""Closed-loop controllers built on the DeePC QP.

:class:`SelectDPC` alternates between choosing the data columns closest to
the current open-loop prediction and re-solving DeePC on them until the
prediction stops moving.  :class:`FullDeePC` and :class:`TimeWindowedDeePC`
are the fixed-data and recent-data baselines; all three share the
``reset / act / observe`` interface consumed by :func:`run_closed_loop`.
"""
from __future__ import annotations

import csv
import logging
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import isomap
from .deepc import DeePCController, DPCConfig, DPCSolution
from .plants import input_scaling
from .qp import QPSettings
from .selection import Selection, SelectionMethod, Selector
from .trajectory_data import (Dataset, HankelBlocks, Trajectory, blocks_from, build_hankel,
                              lq_compress, numeric_rank)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class OuterLoopSettings:
    n_cols: int = 100
    selection: SelectionMethod = SelectionMethod()
    eps_conv: float = 1e-3
    max_outer_iters: int = 10
    warm_shift: bool = True
    compress: bool = False

    def __post_init__(self):
        if self.eps_conv <= 0:
            raise ValueError("eps_conv must be positive")
        if self.max_outer_iters < 1:
            raise ValueError("max_outer_iters must be >= 1")
        if self.n_cols < 1:
            raise ValueError("n_cols must be >= 1")


@dataclass
class StepDiagnostics:
    iterations: int = 0
    converged: bool = False
    degraded: bool = False
    sel_ms: float = 0.0
    qp_ms: float = 0.0
    changes: list = field(default_factory=list)
    indices: list = field(default_factory=list)
    qp_status: list = field(default_factory=list)
    fallback: bool = False
    rank: int | None = None
    solution: DPCSolution | None = None


@dataclass
class SelectDPCState:
    tau_tilde: Trajectory | None = None
    last_solution: DPCSolution | None = None
    iteration_count: int = 0
    converged: bool = False


def init_prediction(u_p, y_p, T_p: int, T_f: int, prev: Trajectory | None = None,
                    warm_shift: bool = True) -> Trajectory:
    """Initial linearisation point for one sampling instant.

    With a previous prediction and ``warm_shift`` its future half is advanced
    one step (last step repeated); otherwise the last input and measurement
    are held over the horizon.  The past half is always ``(u_p, y_p)``.
    """
    U = np.reshape(np.asarray(u_p, dtype=float), (T_p, -1))
    Y = np.reshape(np.asarray(y_p, dtype=float), (T_p, -1))
    if prev is not None and warm_shift:
        uf = prev.u_seq[T_p:]
        yf = prev.y_seq[T_p:]
        uf = np.vstack([uf[1:], uf[-1:]])
        yf = np.vstack([yf[1:], yf[-1:]])
    else:
        uf = np.repeat(U[-1:], T_f, axis=0)
        yf = np.repeat(Y[-1:], T_f, axis=0)
    return Trajectory(np.vstack([U, uf]), np.vstack([Y, yf]), T_p, T_f)


def prediction_change(new: Trajectory, old: Trajectory) -> float:
    return float(np.linalg.norm(new.flatten() - old.flatten()))


def _hold(u_p, m: int) -> np.ndarray:
    return np.reshape(np.asarray(u_p, dtype=float), (-1, m))[-1].copy()


class SelectDPC:
    """Iterated select-then-solve controller."""

    def __init__(self, dataset: Dataset, cfg: DPCConfig, settings: OuterLoopSettings = OuterLoopSettings(),
                 model: isomap.EmbeddingModel | None = None, qp_settings: QPSettings | None = None):
        if (dataset.T_p, dataset.T_f, dataset.m, dataset.p) != (cfg.T_p, cfg.T_f, cfg.m, cfg.p):
            raise ValueError("dataset dimensions do not match the controller configuration")
        self.dataset = dataset
        self.cfg = cfg
        self.settings = settings
        self.selector = Selector(dataset, settings.selection, model)
        self.dpc = DeePCController(cfg, qp_settings)
        self.state = SelectDPCState()

    def reset(self):
        self.dpc.reset()
        self.selector = Selector(self.dataset, self.settings.selection, self.selector.model)
        self.state = SelectDPCState()

    def _blocks(self, sel: Selection) -> HankelBlocks:
        b = blocks_from(self.dataset, sel.indices, affine=self.cfg.affine)
        return lq_compress(b) if self.settings.compress else b

    def step(self, u_p, y_p) -> tuple[np.ndarray, StepDiagnostics]:
        cfg, st = self.cfg, self.settings
        tau = init_prediction(u_p, y_p, cfg.T_p, cfg.T_f, self.state.tau_tilde, st.warm_shift)
        init = tau
        diag = StepDiagnostics()
        best: DPCSolution | None = None
        prev_set = None
        for it in range(st.max_outer_iters):
            t0 = time.perf_counter()
            sel = self.selector.select(tau, st.n_cols)
            cur_set = frozenset(sel.indices.tolist())
            if best is not None and cur_set == prev_set and self.settings.selection.kind != "random":
                # same subset as the last solve: that solution is already the fixed point
                diag.sel_ms += 1e3 * (time.perf_counter() - t0)
                diag.converged = True
                break
            prev_set = cur_set
            blocks = self._blocks(sel)
            t1 = time.perf_counter()
            sol = self.dpc.compute_action(blocks, u_p, y_p)
            t2 = time.perf_counter()
            diag.sel_ms += 1e3 * (t1 - t0)
            diag.qp_ms += 1e3 * (t2 - t1)
            diag.indices.append(sel.indices)
            diag.qp_status.append(sol.status.value)
            diag.fallback |= sel.fallback
            diag.iterations = it + 1
            if not sol.ok:
                break
            best = sol
            new = self.dpc.get_last_prediction(u_p, y_p)
            change = prediction_change(new, tau)
            diag.changes.append(change)
            done = change <= st.eps_conv * (1.0 + np.linalg.norm(tau.flatten()))
            tau = new
            if done:
                diag.converged = True
                break
        if best is None:
            diag.degraded = True
            self.state = SelectDPCState(init, None, diag.iterations, False)
            return _hold(u_p, cfg.m), diag
        diag.solution = best
        self.state = SelectDPCState(tau, best, diag.iterations, diag.converged)
        return best.u_f[: cfg.m].copy(), diag

    act = step

    def observe(self, u, y):
        pass


class FullDeePC:
    """DeePC on one fixed set of blocks (all of the data, LQ-compressed by default)."""

    def __init__(self, dataset_or_blocks, cfg: DPCConfig, compress: bool = True,
                 qp_settings: QPSettings | None = None):
        if isinstance(dataset_or_blocks, Dataset):
            blocks = blocks_from(dataset_or_blocks, affine=cfg.affine)
        else:
            blocks = dataset_or_blocks
        self.blocks = lq_compress(blocks) if compress else blocks
        self.cfg = cfg
        self.dpc = DeePCController(cfg, qp_settings)

    def reset(self):
        self.dpc.reset()

    def act(self, u_p, y_p):
        diag = StepDiagnostics()
        t0 = time.perf_counter()
        sol = self.dpc.compute_action(self.blocks, u_p, y_p)
        diag.qp_ms = 1e3 * (time.perf_counter() - t0)
        diag.iterations = 1
        diag.qp_status.append(sol.status.value)
        if not sol.ok:
            diag.degraded = True
            return _hold(u_p, self.cfg.m), diag
        diag.converged = True
        diag.solution = sol
        return sol.u_f[: self.cfg.m].copy(), diag

    def observe(self, u, y):
        pass


class TimeWindowedDeePC:
    """DeePC on a Hankel matrix of the most recent ``W`` closed-loop samples."""

    def __init__(self, cfg: DPCConfig, W: int | None = None, history=None,
                 qp_settings: QPSettings | None = None):
        self.cfg = cfg
        self.W = 10 * (cfg.T_p + cfg.T_f) if W is None else int(W)
        if self.W < cfg.T_p + cfg.T_f:
            raise ValueError("window shorter than one trajectory")
        self.buffer: deque = deque(maxlen=self.W)
        self._history = history
        self.dpc = DeePCController(cfg, qp_settings)
        self.reset()

    def reset(self):
        self.buffer.clear()
        self.dpc.reset()
        if self._history is not None:
            for u, y in zip(*self._history):
                self.buffer.append((np.ravel(u), np.ravel(y)))

    def observe(self, u, y):
        self.buffer.append((np.asarray(u, dtype=float).ravel(), np.asarray(y, dtype=float).ravel()))

    def window_blocks(self) -> HankelBlocks | None:
        cfg = self.cfg
        L = cfg.T_p + cfg.T_f
        if len(self.buffer) < L:
            return None
        U = np.array([b[0] for b in self.buffer])
        Y = np.array([b[1] for b in self.buffer])
        Hu, Hy = build_hankel(U, L), build_hankel(Y, L)
        a, b = cfg.T_p * cfg.m, cfg.T_p * cfg.p
        return HankelBlocks(Hu[:a], Hu[a:], Hy[:b], Hy[b:], affine=cfg.affine)

    def act(self, u_p, y_p):
        diag = StepDiagnostics()
        blocks = self.window_blocks()
        if blocks is None:
            diag.degraded = True
            return _hold(u_p, self.cfg.m), diag
        diag.rank = numeric_rank(blocks.stacked())
        if diag.rank < blocks.stacked().shape[0]:
            log.debug("time window Hankel matrix is rank deficient (%d)", diag.rank)
        t0 = time.perf_counter()
        sol = self.dpc.compute_action(blocks, u_p, y_p)
        diag.qp_ms = 1e3 * (time.perf_counter() - t0)
        diag.iterations = 1
        diag.qp_status.append(sol.status.value)
        if not sol.ok:
            diag.degraded = True
            return _hold(u_p, self.cfg.m), diag
        diag.converged = True
        diag.solution = sol
        return sol.u_f[: self.cfg.m].copy(), diag


# -- closed loop -----------------------------------------------------------

@dataclass
class ClosedLoopTrace:
    u: np.ndarray
    y: np.ndarray
    stage_cost: np.ndarray
    iterations: np.ndarray
    sel_ms: np.ndarray
    qp_ms: np.ndarray
    converged: np.ndarray
    degraded: np.ndarray
    g: list
    predictions: list
    warmup_u: np.ndarray
    warmup_y: np.ndarray
    diverged: bool = False

    @property
    def steps(self) -> int:
        return self.u.shape[0]

    @property
    def cost(self) -> float:
        return np.inf if self.diverged else float(np.sum(self.stage_cost))

    def to_csv(self, path, snapshot_steps=()) -> Path:
        """Write the per-step record; predictions at ``snapshot_steps`` go to a sibling file."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        m, p = self.u.shape[1], self.y.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", *[f"u_{i}" for i in range(m)], *[f"y_{i}" for i in range(p)],
                        "cost", "iters", "sel_ms", "qp_ms", "converged"])
            for k in range(self.steps):
                w.writerow([k, *map(repr, self.u[k]), *map(repr, self.y[k]), repr(self.stage_cost[k]),
                            int(self.iterations[k]), f"{self.sel_ms[k]:.3f}", f"{self.qp_ms[k]:.3f}",
                            int(self.converged[k])])
        snaps = [k for k in snapshot_steps if 0 <= k < self.steps and self.predictions[k] is not None]
        if snaps:
            with open(path.with_name(path.stem + "_predictions.csv"), "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["step", "horizon", *[f"u_{i}" for i in range(m)], *[f"y_{i}" for i in range(p)]])
                for k in snaps:
                    uf, yf = self.predictions[k]
                    for h in range(uf.shape[0]):
                        w.writerow([k, h, *map(repr, uf[h]), *map(repr, yf[h])])
        return path


def active_count(g, rel_threshold: float = 1e-6) -> int:
    """Number of entries of ``g`` above ``rel_threshold · ‖g‖_∞``."""
    g = np.abs(np.asarray(g, dtype=float).ravel())
    if g.size == 0 or g.max() == 0:
        return 0
    return int(np.sum(g > rel_threshold * g.max()))


def combination_profile(trace: ClosedLoopTrace, rel_threshold: float = 1e-6) -> np.ndarray:
    return np.array([active_count(g, rel_threshold) if g is not None else 0 for g in trace.g])


def run_closed_loop(plant, controller, steps: int, cfg: DPCConfig | None = None, seed: int = 0,
                    warmup_scale: float = 0.1, warmup_inputs=None, blowup: float = 1e3) -> ClosedLoopTrace:
    """Run ``steps`` controlled steps after a ``T_p``-step excitation warm-up.

    The plant must already be reset.  Warm-up inputs are IID uniform with
    half-width ``warmup_scale`` times the plant's input half-range unless
    ``warmup_inputs`` gives them explicitly.  Stage costs are summed over the
    controlled steps only.  A non-finite measurement or one with
    ``‖y‖_∞ > blowup`` ends the run and marks it as diverged.
    """
    cfg = cfg or controller.cfg
    T_p, m = cfg.T_p, cfg.m
    spec = plant.spec
    rng = np.random.default_rng(seed)
    controller.reset()
    mid, half = input_scaling(spec)
    us, ys = [], []
    for k in range(T_p):
        u = np.asarray(warmup_inputs[k], dtype=float) if warmup_inputs is not None else \
            mid + warmup_scale * half * rng.uniform(-1, 1, m)
        u = plant.saturate(u)
        y = plant.step(u)
        controller.observe(u, y)
        us.append(u); ys.append(y)
    wu, wy = np.array(us), np.array(ys)
    rec = {k: [] for k in ("u", "y", "c", "it", "sel", "qp", "conv", "deg", "g", "pred")}
    diverged = False
    for k in range(steps):
        u_p = np.concatenate(us[-T_p:])
        y_p = np.concatenate(ys[-T_p:])
        u, diag = controller.act(u_p, y_p)
        u = plant.saturate(u)
        y = plant.step(u)
        controller.observe(u, y)
        us.append(u); ys.append(y)
        rec["u"].append(u); rec["y"].append(y)
        rec["c"].append(cfg.stage_cost(u, y))
        rec["it"].append(diag.iterations); rec["sel"].append(diag.sel_ms); rec["qp"].append(diag.qp_ms)
        rec["conv"].append(diag.converged); rec["deg"].append(diag.degraded)
        sol = diag.solution
        rec["g"].append(None if sol is None else sol.g)
        rec["pred"].append(None if sol is None else
                           (sol.u_f.reshape(cfg.T_f, m), sol.y_f.reshape(cfg.T_f, cfg.p)))
        if not np.all(np.isfinite(y)) or np.max(np.abs(y)) > blowup:
            diverged = True
            break
    p = cfg.p
    return ClosedLoopTrace(
        np.array(rec["u"]).reshape(-1, m), np.array(rec["y"]).reshape(-1, p), np.array(rec["c"]),
        np.array(rec["it"], dtype=int), np.array(rec["sel"]), np.array(rec["qp"]),
        np.array(rec["conv"], dtype=bool), np.array(rec["deg"], dtype=bool), rec["g"], rec["pred"],
        wu, wy, diverged)
