"""Convex quadratic programming.

Problems have the form::

    minimize    ½ xᵀ P x + qᵀ x
    subject to  l <= A x <= u

with equalities encoded as ``l_i == u_i``.  Dual variables follow the sign
convention ``P x + q + Aᵀ y = 0``: ``y_i > 0`` when the upper bound is
active and ``y_i < 0`` when the lower bound is.

The solver removes the equality rows through a null-space basis and runs a
Mehrotra predictor-corrector interior-point method on what is left, then
polishes the result by solving the KKT system of the detected active set.
Infeasibility is decided by small feasibility LPs when the iteration fails
to converge.
"""
from __future__ import annotations

import csv
import logging
import time
import warnings
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np
import scipy.linalg
import scipy.sparse
from scipy.optimize import linprog

log = logging.getLogger(__name__)

INF = np.inf


class QPStatus(str, Enum):
    OPTIMAL = "optimal"
    MAX_ITERATIONS = "max_iterations"
    PRIMAL_INFEASIBLE = "primal_infeasible"
    DUAL_INFEASIBLE = "dual_infeasible"


class NonConvexError(ValueError):
    pass


@dataclass
class QuadraticProgram:
    P: np.ndarray
    q: np.ndarray
    A: np.ndarray
    l: np.ndarray
    u: np.ndarray
    check: bool = field(default=True, repr=False)

    def __post_init__(self):
        self.P = np.atleast_2d(np.asarray(self.P, dtype=float))
        self.q = np.asarray(self.q, dtype=float).ravel()
        n = self.q.size
        if self.P.shape != (n, n):
            raise ValueError(f"P must be {n}x{n}, got {self.P.shape}")
        A = np.asarray(self.A, dtype=float)
        self.A = A.reshape(0, n) if A.size == 0 else np.atleast_2d(A)
        k = self.A.shape[0]
        if self.A.shape[1] != n:
            raise ValueError(f"A must have {n} columns, got {self.A.shape[1]}")
        self.l = np.full(k, -INF) if self.l is None else np.asarray(self.l, dtype=float).ravel()
        self.u = np.full(k, INF) if self.u is None else np.asarray(self.u, dtype=float).ravel()
        if self.l.size != k or self.u.size != k:
            raise ValueError("l and u need one entry per row of A")
        if np.any(self.l > self.u):
            bad = np.flatnonzero(self.l > self.u)
            raise ValueError(f"l > u on constraint rows {bad.tolist()}")
        if self.check:
            self._check_convex()

    def _check_convex(self):
        P = self.P
        scale = max(1.0, float(np.max(np.abs(P))) if P.size else 1.0)
        if not np.allclose(P, P.T, rtol=0.0, atol=1e-10 * scale):
            raise NonConvexError("P is not symmetric")
        if P.size == 0:
            return
        shift = 1e-8 * scale
        try:
            np.linalg.cholesky(P + shift * np.eye(P.shape[0]))
        except np.linalg.LinAlgError:
            lam = float(np.linalg.eigvalsh(P)[0])
            raise NonConvexError(f"P is not positive semidefinite (min eigenvalue {lam:.3g})") from None

    @property
    def n(self) -> int:
        return self.q.size

    @property
    def k(self) -> int:
        return self.A.shape[0]

    def objective(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.P @ x + self.q @ x)


@dataclass(frozen=True)
class QPSettings:
    eps_abs: float = 1e-6
    eps_rel: float = 1e-6
    max_iter: int = 20000
    warm_start: tuple[np.ndarray, np.ndarray] | None = None
    polish: bool = True


@dataclass
class QPSolution:
    x: np.ndarray
    y: np.ndarray
    status: QPStatus
    iterations: int
    primal_residual: float
    dual_residual: float
    objective: float = np.nan
    polished: bool = False
    solve_time: float = 0.0

    @property
    def optimal(self) -> bool:
        return self.status is QPStatus.OPTIMAL


def warm_start(solution: QPSolution) -> dict:
    """Settings fragment that starts the next solve from ``solution``."""
    return {"warm_start": (np.array(solution.x, dtype=float), np.array(solution.y, dtype=float))}


def kkt_residuals(qp: QuadraticProgram, x, y) -> tuple[float, float]:
    """Infinity norms of the primal and dual residuals."""
    Ax = qp.A @ x
    prim = float(np.max(np.abs(Ax - np.clip(Ax, qp.l, qp.u)), initial=0.0))
    dual = float(np.max(np.abs(qp.P @ x + qp.q + qp.A.T @ y), initial=0.0))
    return prim, dual


def _tolerances(qp: QuadraticProgram, x, y, s: QPSettings) -> tuple[float, float]:
    Ax = qp.A @ x
    z = np.clip(Ax, qp.l, qp.u)
    tp = s.eps_abs + s.eps_rel * max(np.max(np.abs(Ax), initial=0.0), np.max(np.abs(z), initial=0.0))
    td = s.eps_abs + s.eps_rel * max(np.max(np.abs(qp.P @ x), initial=0.0),
                                     np.max(np.abs(qp.A.T @ y), initial=0.0),
                                     np.max(np.abs(qp.q), initial=0.0))
    return tp, td


def _complementary(qp: QuadraticProgram, x, y, s: QPSettings) -> bool:
    """Duals only sit on bounds that are (nearly) active."""
    Ax = qp.A @ x
    up = np.maximum(y, 0.0)
    lo = np.maximum(-y, 0.0)
    if np.any((up > 0) & ~np.isfinite(qp.u)) or np.any((lo > 0) & ~np.isfinite(qp.l)):
        big = max(np.max(up[~np.isfinite(qp.u)], initial=0.0), np.max(lo[~np.isfinite(qp.l)], initial=0.0))
        if big > s.eps_abs:
            return False
    gap_u = np.where(np.isfinite(qp.u), qp.u - Ax, 0.0)
    gap_l = np.where(np.isfinite(qp.l), Ax - qp.l, 0.0)
    comp = np.abs(up * gap_u) + np.abs(lo * gap_l)
    scale = 1.0 + abs(qp.objective(x))
    return float(np.sum(comp)) <= max(s.eps_abs, s.eps_rel) * scale


def _is_optimal(qp, x, y, s) -> tuple[bool, float, float]:
    prim, dual = kkt_residuals(qp, x, y)
    tp, td = _tolerances(qp, x, y, s)
    ok = prim <= tp and dual <= td and _complementary(qp, x, y, s)
    return ok, prim, dual


# -- equality elimination --------------------------------------------------

@dataclass
class _Reduction:
    """``x = x0 + Z w`` parametrises ``A_e x = b_e``.

    Rows in ``def_rows`` each define one variable (``def_cols``) that appears
    in no other equality row; the remaining rows ``rest_rows`` are handled by
    a pivoted QR over the free columns.
    """

    x0: np.ndarray
    Z: np.ndarray
    A_e: np.ndarray
    def_rows: np.ndarray
    def_cols: np.ndarray
    free: np.ndarray
    rest_rows: np.ndarray
    Q1: np.ndarray | None
    R11: np.ndarray | None
    piv_rows: np.ndarray

    def equality_duals(self, k_e: int, d: np.ndarray) -> np.ndarray:
        """``y_e`` with ``A_eᵀ y_e = -d`` in the least-squares sense."""
        y = np.zeros(k_e)
        if self.def_rows.size:
            y[self.def_rows] = -d[self.def_cols] / self.A_e[self.def_rows, self.def_cols]
            d = d + self.A_e[self.def_rows].T @ y[self.def_rows]
        if self.Q1 is not None:
            y_piv = -scipy.linalg.solve_triangular(self.R11, self.Q1.T @ d[self.free], check_finite=False)
            y[self.rest_rows[self.piv_rows]] = y_piv
        return y


def _singletons(A_e) -> tuple[np.ndarray, np.ndarray]:
    """Pairs (row, col) where ``col`` is nonzero in exactly one equality row.

    At most one column is taken per row, preferring coefficients of unit
    magnitude.
    """
    nz = A_e != 0
    counts = nz.sum(axis=0)
    rows, cols = [], []
    taken = np.zeros(A_e.shape[0], dtype=bool)
    cand = np.flatnonzero(counts == 1)
    if cand.size == 0:
        return np.zeros(0, dtype=int), np.zeros(0, dtype=int)
    owner = np.argmax(nz[:, cand], axis=0)
    mag = np.abs(A_e[owner, cand])
    scale = np.max(np.abs(A_e), axis=1)[owner]
    good = mag >= 1e-3 * scale
    order = np.lexsort((cand, ~np.isclose(mag, 1.0)))
    for j in order:
        if good[j] and not taken[owner[j]]:
            taken[owner[j]] = True
            rows.append(owner[j])
            cols.append(cand[j])
    return np.array(rows, dtype=int), np.array(cols, dtype=int)


def _reduce(A_e, b_e, n) -> _Reduction | None:
    """Null-space parametrisation of ``A_e x = b_e``; ``None`` if inconsistent."""
    k_e = A_e.shape[0]
    none = np.zeros(0, dtype=int)
    if k_e == 0:
        return _Reduction(np.zeros(n), np.eye(n), A_e, none, none, np.arange(n), none, None, None, none)
    d_rows, d_cols = _singletons(A_e)
    is_def = np.zeros(n, dtype=bool)
    is_def[d_cols] = True
    free = np.flatnonzero(~is_def)
    rest = np.setdiff1d(np.arange(k_e), d_rows)
    # x_D = (b_D - A_DF x_F) / a_D   =>   x = T x_F + t0
    a_d = A_e[d_rows, d_cols]
    T = np.zeros((n, free.size))
    T[free, np.arange(free.size)] = 1.0
    T[d_cols] = -A_e[np.ix_(d_rows, free)] / a_d[:, None]
    t0 = np.zeros(n)
    t0[d_cols] = b_e[d_rows] / a_d
    A_r = A_e[np.ix_(rest, free)]
    b_r = b_e[rest]
    Q1 = R11 = None
    piv_rows = none
    xf0, Zf = np.zeros(free.size), np.eye(free.size)
    # columns untouched by the remaining rows stay as identity directions
    inv = np.flatnonzero(np.any(A_r != 0, axis=0)) if rest.size else none
    if inv.size:
        Q, R, piv = scipy.linalg.qr(A_r[:, inv].T, mode="full", pivoting=True, check_finite=False)
        dg = np.abs(np.diag(R))
        r = 0 if dg.size == 0 or dg[0] == 0 else int(np.sum(dg > max(A_r.shape) * np.finfo(float).eps * dg[0] * 10))
        if r > 0:
            R11 = R[:r, :r]
            Q1 = np.zeros((free.size, r))
            Q1[inv] = Q[:, :r]
            piv_rows = piv[:r]
            v = scipy.linalg.solve_triangular(R11, b_r[piv_rows], trans="T", check_finite=False)
            xf0 = Q1 @ v
            untouched = np.setdiff1d(np.arange(free.size), inv)
            Zf = np.zeros((free.size, free.size - r))
            Zf[inv, :inv.size - r] = Q[:, r:]
            Zf[untouched, inv.size - r + np.arange(untouched.size)] = 1.0
    elif rest.size and np.max(np.abs(b_r)) > 1e-9 * (1.0 + np.max(np.abs(b_e))):
        return None
    x0 = T @ xf0 + t0
    scale = 1.0 + np.max(np.abs(b_e)) + np.max(np.abs(A_e)) * np.max(np.abs(x0), initial=0.0)
    if np.max(np.abs(A_e @ x0 - b_e)) > 1e-9 * scale:
        return None
    return _Reduction(x0, T @ Zf, A_e, d_rows, d_cols, free, rest, Q1, R11, piv_rows)


# -- interior point on the reduced problem ---------------------------------

def _maybe_sparse(M, density: float = 0.1):
    """CSR view of ``M`` when that makes products cheaper."""
    if M.size > 10000 and np.count_nonzero(M) < density * M.size:
        return scipy.sparse.csr_matrix(M)
    return M


def _max_step(v, dv):
    neg = dv < 0
    if not np.any(neg):
        return INF
    return float(np.min(-v[neg] / dv[neg]))


def _chol(M):
    reg = 0.0
    diag_scale = max(1.0, float(np.max(np.abs(np.diag(M))))) if M.size else 1.0
    for _ in range(12):
        try:
            return scipy.linalg.cho_factor(M + reg * np.eye(M.shape[0]), lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            reg = 1e-14 * diag_scale if reg == 0.0 else reg * 100.0
    raise np.linalg.LinAlgError("KKT matrix could not be factorised")


class _Normal:
    """Factorisations of ``H + Gᵀ diag(D) G``.

    Columns in ``sep`` have no quadratic coupling to the rest and at most one
    nonzero per row of ``G``, so their block is diagonal and is eliminated by
    a Schur complement before the dense Cholesky.
    """

    def __init__(self, H, G, sep):
        self.H, self.G = H, G
        n = H.shape[0]
        self.sep = sep if sep is not None and sep.size else None
        if self.sep is not None:
            keep = np.ones(n, dtype=bool)
            keep[self.sep] = False
            self.rest = np.flatnonzero(keep)
            Gs = G[:, self.sep]
            rows, cols = np.nonzero(Gs)
            self.E = scipy.sparse.csr_matrix((Gs[rows, cols], (cols, rows)), shape=(self.sep.size, G.shape[0]))
            self.E2 = self.E.multiply(self.E).tocsr()
            self.G_r = G[:, self.rest]
            self.H_rr = H[np.ix_(self.rest, self.rest)]
            self.h_ss = np.diag(H)[self.sep]

    def factor(self, D):
        if self.sep is None:
            W = self.G * np.sqrt(D)[:, None]
            self.cf = _chol(self.H + W.T @ W)
            return self
        W = self.G_r * np.sqrt(D)[:, None]
        A = self.H_rr + W.T @ W
        d = np.maximum(self.h_ss + self.E2 @ D, 1e-300)
        Bt = np.asarray(self.E @ (D[:, None] * self.G_r))
        self.d, self.Bt = d, Bt
        self.cf = _chol(A - (Bt.T / d) @ Bt)
        return self

    def solve(self, rhs):
        if self.sep is None:
            return scipy.linalg.cho_solve(self.cf, rhs, check_finite=False)
        r_r, r_s = rhs[self.rest], rhs[self.sep]
        x_r = scipy.linalg.cho_solve(self.cf, r_r - self.Bt.T @ (r_s / self.d), check_finite=False)
        out = np.empty_like(rhs)
        out[self.rest] = x_r
        out[self.sep] = (r_s - self.Bt @ x_r) / self.d
        return out


def _separable(H, G) -> np.ndarray | None:
    """Columns whose block of every normal matrix is diagonal."""
    n = H.shape[0]
    if n < 32 or G.shape[0] == 0:
        return None
    off = H - np.diag(np.diag(H))
    cand = np.flatnonzero(~np.any(off != 0, axis=0))
    if cand.size < 8:
        return None
    nz = G[:, cand] != 0
    # drop candidates sharing a row with another candidate, densest first
    while cand.size:
        per_row = nz.sum(axis=1)
        bad = per_row > 1
        if not np.any(bad):
            break
        worst = np.argmax(nz[bad].sum(axis=0))
        cand = np.delete(cand, worst)
        nz = np.delete(nz, worst, axis=1)
    # each kept column needs curvature or at least one row
    ok = (np.diag(H)[cand] > 0) | nz.any(axis=0)
    cand = cand[ok]
    return cand if cand.size >= 8 else None


def _ipm(H, c, G, h, max_iter, tol, check, sep=None):
    """Mehrotra predictor-corrector for min ½wᵀHw + cᵀw s.t. Gw <= h.

    ``check(w, z, s)`` decides convergence on the original problem.
    Returns ``(w, z, s, iterations, converged)``.
    """
    r, mi = H.shape[0], G.shape[0]
    normal = _Normal(H, G, sep)
    w = normal.factor(np.ones(mi)).solve(-c + G.T @ h)
    res = G @ w - h
    s = -res.copy()
    z = res.copy()
    if mi:
        a = -np.min(s)
        if a >= -1e-8:
            s = s + 1.0 + a
        a = -np.min(z)
        if a >= -1e-8:
            z = z + 1.0 + a
        s = np.maximum(s, 1e-8)
        z = np.maximum(z, 1e-8)
    big = 1e14 * (1.0 + np.max(np.abs(c), initial=0.0) + np.max(np.abs(h), initial=0.0))
    stall = 0
    for it in range(1, max_iter + 1):
        r_d = H @ w + c + G.T @ z
        r_p = G @ w + s - h
        mu = float(s @ z) / mi
        if check(w, z, s, r_p, r_d, mu):
            return w, z, s, it - 1, True
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(z))) or \
                np.max(np.abs(z)) > big or np.max(np.abs(w)) > big:
            return w, z, s, it, False
        D = z / s
        normal.factor(D)

        def direction(r_c):
            rhs = -r_d - G.T @ (D * r_p - r_c / s)
            dw = normal.solve(rhs)
            dz = D * (G @ dw + r_p) - r_c / s
            ds = -(r_c + s * dz) / z
            return dw, dz, ds

        dw, dz, ds = direction(s * z)
        a_aff = min(1.0, _max_step(s, ds), _max_step(z, dz))
        mu_aff = float((s + a_aff * ds) @ (z + a_aff * dz)) / mi
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
        dw, dz, ds = direction(s * z + ds * dz - sigma * mu)
        alpha = min(1.0, 0.99 * min(_max_step(s, ds), _max_step(z, dz)))
        w = w + alpha * dw
        z = z + alpha * dz
        s = s + alpha * ds
        s = np.maximum(s, 1e-300)
        z = np.maximum(z, 1e-300)
        stall = stall + 1 if alpha < 1e-8 else 0
        if stall >= 5:
            return w, z, s, it, False
    return w, z, s, max_iter, False


# -- infeasibility checks ---------------------------------------------------

def _primal_infeasible(G, h) -> bool:
    """LP: smallest uniform violation ``t`` with ``G w - t <= h``."""
    r = G.shape[1]
    if G.shape[0] == 0:
        return False
    cost = np.zeros(r + 1)
    cost[-1] = 1.0
    A_ub = np.hstack([G, -np.ones((G.shape[0], 1))])
    bounds = [(None, None)] * r + [(-1.0, None)]
    res = linprog(cost, A_ub=A_ub, b_ub=h, bounds=bounds, method="highs")
    if res.status != 0:
        return False
    return res.x[-1] > 1e-7 * (1.0 + np.max(np.abs(h)))


def _dual_infeasible(H, c, G) -> bool:
    """LP: a descent direction ``d`` of the reduced problem with ``Hd = 0``, ``Gd <= 0``."""
    r = H.shape[0]
    if r == 0:
        return False
    scale = max(1.0, float(np.max(np.abs(H)))) if H.size else 1.0
    tol = 1e-9 * scale
    A_ub = np.vstack([G, H, -H]) if G.size else np.vstack([H, -H])
    b_ub = np.concatenate([np.zeros(G.shape[0]), np.full(2 * r, tol)])
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=[(-1.0, 1.0)] * r, method="highs")
    if res.status != 0:
        return False
    return res.fun < -1e-7 * (1.0 + np.max(np.abs(c)))


# -- polish ----------------------------------------------------------------

def _polish(qp: QuadraticProgram, x, y, s: QPSettings):
    """Solve the KKT system of the active set guessed from ``(x, y)``."""
    eq = qp.u - qp.l <= 1e-12 * np.maximum(1.0, np.abs(qp.l))
    Ax = qp.A @ x
    ytol = 1e-9 * max(1.0, float(np.max(np.abs(y), initial=0.0)))
    # a bound counts as active when its multiplier outweighs its slack
    lo = ~eq & np.isfinite(qp.l) & (y < -ytol) & (Ax - qp.l < -y)
    up = ~eq & np.isfinite(qp.u) & (y > ytol) & (qp.u - Ax < y)
    act = np.flatnonzero(eq | lo | up)
    b = np.where(up, qp.u, qp.l)[act]
    n = qp.n
    A_act = qp.A[act]
    delta = 1e-11 * max(1.0, float(np.max(np.abs(qp.P)))) if qp.P.size else 1e-11
    K = np.block([[qp.P + delta * np.eye(n), A_act.T],
                  [A_act, -delta * np.eye(act.size)]])
    rhs = np.concatenate([-qp.q, b])
    try:
        lu = scipy.linalg.lu_factor(K, check_finite=False)
    except (ValueError, np.linalg.LinAlgError):
        return None
    Kexact = np.block([[qp.P, A_act.T], [A_act, np.zeros((act.size, act.size))]])
    with np.errstate(all="ignore"):
        sol = scipy.linalg.lu_solve(lu, rhs, check_finite=False)
        for _ in range(3):
            sol = sol + scipy.linalg.lu_solve(lu, rhs - Kexact @ sol, check_finite=False)
    if not np.all(np.isfinite(sol)):
        return None
    xp = sol[:n]
    yp = np.zeros(qp.k)
    yp[act] = sol[n:]
    # sign consistency of the multipliers
    if np.any(yp[up] < -ytol) or np.any(yp[lo] > ytol):
        return None
    return xp, yp


def _try_polish(qp, x, y, s):
    cand = _polish(qp, x, y, s)
    if cand is None:
        return None
    xp, yp = cand
    ok, prim, dual = _is_optimal(qp, xp, yp, s)
    if not ok:
        return None
    return xp, yp, prim, dual


# -- driver ----------------------------------------------------------------

def solve(qp: QuadraticProgram, settings: QPSettings | None = None, **overrides) -> QPSolution:
    """Solve a convex QP.

    Args:
        qp: the problem.
        settings: tolerances and limits; keyword overrides are applied on top
            (e.g. ``solve(qp, **warm_start(prev))``).

    Returns:
        A :class:`QPSolution`.  Infeasible or unbounded problems are reported
        through ``status``; only malformed input raises.
    """
    s = replace(settings or QPSettings(), **overrides)
    t0 = time.perf_counter()
    n, k = qp.n, qp.k

    def finish(x, y, status, iters, polished=False):
        prim, dual = kkt_residuals(qp, x, y) if np.all(np.isfinite(x)) else (INF, INF)
        obj = qp.objective(x) if status is QPStatus.OPTIMAL else np.nan
        return QPSolution(x, y, status, iters, prim, dual, obj, polished, time.perf_counter() - t0)

    if s.warm_start is not None:
        xw, yw = (np.asarray(v, dtype=float).ravel() for v in s.warm_start)
        if xw.size != n or yw.size != k:
            warnings.warn("warm start ignored: dimensions do not match the problem", RuntimeWarning,
                          stacklevel=2)
        elif np.any(xw) or np.any(yw):
            ok, _, _ = _is_optimal(qp, xw, yw, s)
            if ok:
                return finish(xw, yw, QPStatus.OPTIMAL, 0)
            got = _try_polish(qp, xw, yw, s) if s.polish else None
            if got is not None:
                return finish(got[0], got[1], QPStatus.OPTIMAL, 1, polished=True)

    eq = (qp.u - qp.l) <= 1e-12 * np.maximum(1.0, np.abs(qp.l))
    eq &= np.isfinite(qp.l)
    eq_rows = np.flatnonzero(eq)
    red = _reduce(qp.A[eq_rows], qp.l[eq_rows], n)
    if red is None:
        return finish(np.full(n, np.nan), np.full(k, np.nan), QPStatus.PRIMAL_INFEASIBLE, 0)

    Z, x0 = red.Z, red.x0
    H = Z.T @ _maybe_sparse(qp.P).dot(Z)
    H = 0.5 * (H + H.T)
    c = Z.T @ (qp.P @ x0 + qp.q)

    # inequality rows as G w <= h, row-normalised
    ineq = np.flatnonzero(~eq)
    AZ = np.asarray(_maybe_sparse(qp.A[ineq]).dot(Z)).reshape(ineq.size, Z.shape[1])
    Ax0 = qp.A[ineq] @ x0
    has_u = np.isfinite(qp.u[ineq])
    has_l = np.isfinite(qp.l[ineq])
    r = Z.shape[1]
    G = np.vstack([AZ[has_u], -AZ[has_l]])
    hvec = np.concatenate([qp.u[ineq][has_u] - Ax0[has_u], Ax0[has_l] - qp.l[ineq][has_l]])
    owner = np.concatenate([ineq[has_u], ineq[has_l]]).astype(int)
    sign = np.concatenate([np.ones(has_u.sum()), -np.ones(has_l.sum())])
    norms = np.linalg.norm(G, axis=1)
    gscale = max(1.0, float(np.max(norms, initial=0.0)))
    live = norms > 1e-13 * gscale
    if np.any(hvec[~live] < -1e-9 * (1.0 + np.abs(hvec[~live]))):
        return finish(np.full(n, np.nan), np.full(k, np.nan), QPStatus.PRIMAL_INFEASIBLE, 0)
    G, hvec, owner, sign, norms = G[live], hvec[live], owner[live], sign[live], norms[live]
    G = G / norms[:, None]
    hvec = hvec / norms

    def recover(w, zs):
        x = x0 + Z @ w
        y = np.zeros(k)
        np.add.at(y, owner, sign * zs / norms)
        d = qp.P @ x + qp.q + qp.A.T @ y
        if eq_rows.size:
            y[eq_rows] = red.equality_duals(eq_rows.size, d)
        return x, y

    if G.shape[0] == 0:
        # equality constrained only
        try:
            w = scipy.linalg.lstsq(H, -c, check_finite=False)[0] if r else np.zeros(0)
        except np.linalg.LinAlgError:
            w = np.zeros(r)
        if r and np.max(np.abs(H @ w + c)) > 1e-8 * (1 + np.max(np.abs(c))):
            return finish(np.full(n, np.nan), np.full(k, np.nan), QPStatus.DUAL_INFEASIBLE, 0)
        x, y = recover(w, np.zeros(0))
        return finish(x, y, QPStatus.OPTIMAL, 1)

    inner_tol = 0.1 * min(s.eps_abs, s.eps_rel)
    cscale = 1.0 + max(np.max(np.abs(c), initial=0.0), np.max(np.abs(H), initial=0.0))
    state = {}

    def check(w, zs, sl, r_p, r_d, mu):
        hscale = 1.0 + np.max(np.abs(hvec))
        if np.max(np.abs(r_p)) > inner_tol * hscale or np.max(np.abs(r_d)) > inner_tol * cscale:
            return False
        if mu * G.shape[0] > 1e-3 * inner_tol * (1.0 + abs(0.5 * w @ H @ w + c @ w)):
            return False
        x, y = recover(w, zs)
        ok, _, _ = _is_optimal(qp, x, y, s)
        state["xy"] = (x, y)
        return ok

    w, zs, sl, iters, converged = _ipm(H, c, G, hvec, s.max_iter, inner_tol, check, _separable(H, G))
    if converged:
        x, y = state["xy"]
        if s.polish:
            got = _try_polish(qp, x, y, s)
            if got is not None:
                px, py, pprim, pdual = got
                prim, dual = kkt_residuals(qp, x, y)
                if max(pprim, pdual) <= max(prim, dual):
                    return finish(px, py, QPStatus.OPTIMAL, iters, polished=True)
        return finish(x, y, QPStatus.OPTIMAL, iters)

    x, y = recover(w, zs)
    ok, _, _ = _is_optimal(qp, x, y, s)
    if ok:
        return finish(x, y, QPStatus.OPTIMAL, iters)
    if s.polish:
        got = _try_polish(qp, x, y, s)
        if got is not None:
            return finish(got[0], got[1], QPStatus.OPTIMAL, iters, polished=True)
    if _primal_infeasible(G, hvec):
        status = QPStatus.PRIMAL_INFEASIBLE
    elif _dual_infeasible(H, c, G):
        status = QPStatus.DUAL_INFEASIBLE
    else:
        status = QPStatus.MAX_ITERATIONS
    log.debug("QP solve ended with %s after %d iterations", status.value, iters)
    return finish(x, y, status, iters)


def dump_qp(qp: QuadraticProgram, path) -> Path:
    """Write ``(P, q, A, l, u)`` as a CSV of ``matrix,row,col,value`` triplets."""
    path = Path(path)
    with open(path, "w") as fh:
        fh.write("matrix,row,col,value\n")
        for name, M in (("P", qp.P), ("A", qp.A)):
            rows, cols = np.nonzero(M)
            for i, j in zip(rows, cols):
                fh.write(f"{name},{i},{j},{float(M[i, j])!r}\n")
        for name, v in (("q", qp.q), ("l", qp.l), ("u", qp.u)):
            for i, val in enumerate(v):
                fh.write(f"{name},{i},0,{float(val)!r}\n")
        fh.write(f"shape,{qp.n},{qp.k},0\n")
    return path


def load_qp(path) -> QuadraticProgram:
    """Read a problem written by :func:`dump_qp`."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    shape = next(r for r in rows if r[0] == "shape")
    n, k = int(shape[1]), int(shape[2])
    mats = {"P": np.zeros((n, n)), "A": np.zeros((k, n))}
    vecs = {"q": np.zeros(n), "l": np.zeros(k), "u": np.zeros(k)}
    for name, i, j, val in rows:
        if name in mats:
            mats[name][int(i), int(j)] = float(val)
        elif name in vecs:
            vecs[name][int(i)] = float(val)
    return QuadraticProgram(mats["P"], vecs["q"], mats["A"], vecs["l"], vecs["u"])
