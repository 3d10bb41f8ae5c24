"""Regularised DeePC as a convex QP over a set of Hankel columns.

Decision vector ``[g; u_f; y_f; sigma; t]``:

* ``g`` combination weights over the N data columns;
* ``u_f``, ``y_f`` future inputs and outputs, time-major;
* ``sigma`` slack on the past-output match ``Y_p g = y_p + sigma``
  (absent when the slack is hard);
* ``t`` epigraph of ``|g|`` for the 1-norm term (absent when ``lambda_1 = 0``).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import scipy.linalg

from . import qp as qpmod
from .predictor import default_ridge
from .trajectory_data import HankelBlocks, Trajectory


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class OutputConstraint:
    """``low <= coeffs · y_{f,i} <= high`` on the future steps in ``steps``.

    ``steps=None`` applies the constraint at every future step.
    """

    coeffs: Sequence[float]
    low: float = -np.inf
    high: float = np.inf
    steps: Sequence[int] | None = None


@dataclass(frozen=True)
class DPCConfig:
    T_p: int
    T_f: int
    Q: np.ndarray
    R: np.ndarray
    y_ref: np.ndarray | None = None
    lambda_1: float = 0.0
    lambda_pi: float = 0.0
    slack_weight: float | None = None
    u_bounds: np.ndarray | None = None
    y_constraints: tuple[OutputConstraint, ...] = ()
    affine: bool = True
    regularization_eps: float | None = None
    tikhonov: float = 1e-10

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1] or R.shape[0] != R.shape[1]:
            raise ConfigError("Q and R must be square")
        if self.T_p < 1 or self.T_f < 1:
            raise ConfigError("horizons must be >= 1")
        if np.min(np.linalg.eigvalsh(0.5 * (Q + Q.T))) < -1e-10 * max(1.0, np.abs(Q).max()):
            raise ConfigError("Q must be positive semidefinite")
        if np.min(np.linalg.eigvalsh(0.5 * (R + R.T))) <= 0:
            raise ConfigError("R must be positive definite")
        if self.lambda_1 < 0 or self.lambda_pi < 0:
            raise ConfigError("regulariser weights must be >= 0")
        if self.slack_weight is not None and self.slack_weight < 0:
            raise ConfigError("slack_weight must be >= 0")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)
        p, m = Q.shape[0], R.shape[0]
        y_ref = np.zeros(p) if self.y_ref is None else np.asarray(self.y_ref, dtype=float).ravel()
        if y_ref.size != p:
            raise ConfigError(f"y_ref has {y_ref.size} entries, Q is {p}x{p}")
        object.__setattr__(self, "y_ref", y_ref)
        if self.u_bounds is not None:
            ub = np.asarray(self.u_bounds, dtype=float).reshape(m, 2)
            if np.any(ub[:, 0] > ub[:, 1]):
                raise ConfigError("input bounds must satisfy low <= high")
            object.__setattr__(self, "u_bounds", ub)
        cons = tuple(self.y_constraints)
        for c in cons:
            if len(c.coeffs) != p:
                raise ConfigError("output constraint coefficients must have one entry per output")
            if c.low > c.high:
                raise ConfigError("output constraint bounds must satisfy low <= high")
        object.__setattr__(self, "y_constraints", cons)

    @property
    def m(self) -> int:
        return self.R.shape[0]

    @property
    def p(self) -> int:
        return self.Q.shape[0]

    def effective_slack_weight(self) -> float:
        """0 means the past-output match is a hard equality."""
        if self.slack_weight is None:
            return 1e5 * float(np.max(np.diag(self.Q)))
        return float(self.slack_weight)

    def stage_cost(self, u, y) -> float:
        e = np.asarray(y, dtype=float) - self.y_ref
        u = np.asarray(u, dtype=float)
        return float(e @ self.Q @ e + u @ self.R @ u)


def projection_matrix(blocks: HankelBlocks, eps: float | None = None, affine: bool | None = None) -> np.ndarray:
    """``H_zᵀ (H_z H_zᵀ + eps I)⁻¹ H_z`` over the consistency rows ``[U_p; U_f; Y_p; (1)]``."""
    if affine is not None:
        blocks = blocks.with_affine(affine)
    H_z = blocks.H_z()
    eps = default_ridge(H_z) if eps is None else eps
    G = H_z @ H_z.T
    G[np.diag_indices_from(G)] += eps
    if eps > 0:
        c = scipy.linalg.cho_factor(G, lower=True, check_finite=False)
        return H_z.T @ scipy.linalg.cho_solve(c, H_z, check_finite=False)
    return H_z.T @ np.linalg.pinv(G, hermitian=True) @ H_z


@dataclass(frozen=True)
class Layout:
    """Slices of each block of the decision vector."""

    g: slice
    u_f: slice
    y_f: slice
    sigma: slice
    t: slice
    n: int
    const: float = 0.0


def build_qp(cfg: DPCConfig, blocks: HankelBlocks, u_p, y_p) -> tuple[qpmod.QuadraticProgram, Layout]:
    """Assemble the regularised DeePC QP for the measured past ``(u_p, y_p)``."""
    m, p, T_p, T_f = cfg.m, cfg.p, cfg.T_p, cfg.T_f
    u_p = np.asarray(u_p, dtype=float).ravel()
    y_p = np.asarray(y_p, dtype=float).ravel()
    if blocks.U_p.shape[0] != T_p * m or blocks.Y_f.shape[0] != T_f * p:
        raise ConfigError("blocks do not match the configured horizons and dimensions")
    if u_p.size != T_p * m or y_p.size != T_p * p:
        raise ValueError("past data do not match the configured horizon")
    blocks = blocks.with_affine(cfg.affine)
    N = blocks.n_cols
    w_sl = cfg.effective_slack_weight()
    n_sig = T_p * p if w_sl > 0 else 0
    n_t = N if cfg.lambda_1 > 0 else 0
    nu, ny = T_f * m, T_f * p
    o = np.cumsum([0, N, nu, ny, n_sig, n_t])
    L = Layout(slice(o[0], o[1]), slice(o[1], o[2]), slice(o[2], o[3]), slice(o[3], o[4]),
               slice(o[4], o[5]), int(o[5]))
    n = L.n

    scale = max(1.0, float(np.max(np.abs(cfg.Q))), float(np.max(np.abs(cfg.R))))
    P = np.zeros((n, n))
    q = np.zeros(n)
    P[L.u_f, L.u_f] = 2 * np.kron(np.eye(T_f), cfg.R)
    P[L.y_f, L.y_f] = 2 * np.kron(np.eye(T_f), cfg.Q)
    Qr = cfg.Q @ cfg.y_ref
    q[L.y_f] = -2 * np.tile(Qr, T_f)
    const = T_f * float(cfg.y_ref @ Qr)
    if cfg.lambda_pi > 0:
        Pi = projection_matrix(blocks, cfg.regularization_eps)
        Mres = np.eye(N) - Pi
        P[L.g, L.g] = 2 * cfg.lambda_pi * (Mres.T @ Mres)
    P[L.g, L.g] += 2 * cfg.tikhonov * scale * np.eye(N)
    if n_sig:
        P[L.sigma, L.sigma] = 2 * w_sl * np.eye(n_sig)
    if n_t:
        q[L.t] = cfg.lambda_1
    P = 0.5 * (P + P.T)

    rows, lo, hi = [], [], []

    def add(block_rows, low, high):
        rows.append(block_rows)
        lo.append(np.broadcast_to(low, block_rows.shape[0]).astype(float))
        hi.append(np.broadcast_to(high, block_rows.shape[0]).astype(float))

    def zeros(r):
        return np.zeros((r, n))

    A = zeros(T_p * m); A[:, L.g] = blocks.U_p
    add(A, u_p, u_p)
    A = zeros(T_p * p); A[:, L.g] = blocks.Y_p
    if n_sig:
        A[:, L.sigma] = -np.eye(n_sig)
    add(A, y_p, y_p)
    A = zeros(nu); A[:, L.g] = blocks.U_f; A[:, L.u_f] = -np.eye(nu)
    add(A, 0.0, 0.0)
    A = zeros(ny); A[:, L.g] = blocks.Y_f; A[:, L.y_f] = -np.eye(ny)
    add(A, 0.0, 0.0)
    if cfg.affine:
        A = zeros(1); A[0, L.g] = blocks.ones
        add(A, 1.0, 1.0)
    if n_t:
        A = zeros(N); A[:, L.t] = np.eye(N); A[:, L.g] = -np.eye(N)
        add(A, 0.0, np.inf)
        A = zeros(N); A[:, L.t] = np.eye(N); A[:, L.g] = np.eye(N)
        add(A, 0.0, np.inf)
    if cfg.u_bounds is not None:
        finite = np.isfinite(cfg.u_bounds).any(axis=1)
        if np.any(finite):
            A = zeros(nu); A[:, L.u_f] = np.eye(nu)
            add(A, np.tile(cfg.u_bounds[:, 0], T_f), np.tile(cfg.u_bounds[:, 1], T_f))
    for c in cfg.y_constraints:
        steps = range(T_f) if c.steps is None else c.steps
        for i in steps:
            if not 0 <= i < T_f:
                raise ConfigError(f"output constraint step {i} outside the horizon")
            A = zeros(1)
            A[0, L.y_f.start + i * p: L.y_f.start + (i + 1) * p] = c.coeffs
            add(A, c.low, c.high)
    # convex by construction: every P block above is a Gram matrix or a positive diagonal
    qp = qpmod.QuadraticProgram(P, q, np.vstack(rows), np.concatenate(lo), np.concatenate(hi), check=False)
    return qp, replace(L, const=const)


@dataclass
class DPCSolution:
    g: np.ndarray
    u_f: np.ndarray
    y_f: np.ndarray
    sigma: np.ndarray
    objective: float
    qp_stats: qpmod.QPSolution
    u_p: np.ndarray = field(default=None)
    y_p: np.ndarray = field(default=None)

    @property
    def ok(self) -> bool:
        return self.qp_stats.status is qpmod.QPStatus.OPTIMAL

    @property
    def status(self) -> qpmod.QPStatus:
        return self.qp_stats.status


class DeePCController:
    """Solves one DeePC problem per call and caches the last solution."""

    def __init__(self, cfg: DPCConfig, qp_settings: qpmod.QPSettings | None = None):
        self.cfg = cfg
        # interior-point iterates already meet the tolerances; the active-set
        # polish roughly doubles the cost of each solve
        self.qp_settings = qp_settings or qpmod.QPSettings(polish=False)
        self.last: DPCSolution | None = None
        self._warm: dict | None = None

    def reset(self):
        self.last = None
        self._warm = None

    def compute_action(self, blocks: HankelBlocks, u_p, y_p) -> DPCSolution:
        cfg = self.cfg
        qp, L = build_qp(cfg, blocks, u_p, y_p)
        warm = self._warm if self._warm and self._warm["warm_start"][0].size == qp.n \
            and self._warm["warm_start"][1].size == qp.k else {}
        sol = qpmod.solve(qp, self.qp_settings, **warm)
        x = sol.x
        u_f = x[L.u_f].copy()
        if cfg.u_bounds is not None and np.all(np.isfinite(u_f)):
            u_f = np.clip(u_f.reshape(cfg.T_f, cfg.m), cfg.u_bounds[:, 0], cfg.u_bounds[:, 1]).ravel()
        out = DPCSolution(
            g=x[L.g].copy(), u_f=u_f, y_f=x[L.y_f].copy(),
            sigma=x[L.sigma].copy() if L.sigma.stop > L.sigma.start else np.zeros(0),
            objective=sol.objective + L.const if sol.optimal else np.nan, qp_stats=sol,
            u_p=np.asarray(u_p, dtype=float).ravel(), y_p=np.asarray(y_p, dtype=float).ravel())
        if out.ok:
            self.last = out
            self._warm = qpmod.warm_start(sol)
        return out

    def get_last_prediction(self, u_p, y_p) -> Trajectory | None:
        """The cached open-loop solution with its past half set to ``(u_p, y_p)``."""
        if self.last is None:
            return None
        cfg = self.cfg
        return Trajectory(
            np.vstack([np.reshape(u_p, (cfg.T_p, cfg.m)), self.last.u_f.reshape(cfg.T_f, cfg.m)]),
            np.vstack([np.reshape(y_p, (cfg.T_p, cfg.p)), self.last.y_f.reshape(cfg.T_f, cfg.p)]),
            cfg.T_p, cfg.T_f)
