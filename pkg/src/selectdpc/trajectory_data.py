"""Input-output trajectory datasets and Hankel-matrix machinery.

A *trajectory* is a window of ``T_p + T_f`` consecutive samples of an
input-output record.  Its flattening stacks the partitions
``[u_p; u_f; y_p; y_f]`` (each time-major), which is also the row layout of
the stacked Hankel blocks ``[U_p; U_f; Y_p; Y_f]`` so that column ``j`` of the
blocks built from a dataset equals the flattening of trajectory ``j``.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
import scipy.linalg


def _as_2d(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise ValueError(f"expected a 1-D or 2-D array, got shape {a.shape}")
    return a


@dataclass(frozen=True)
class Trajectory:
    """A fixed-length input-output segment split into past and future.

    Attributes:
        u_seq: ``(T_p + T_f, m)`` inputs, time ascending.
        y_seq: ``(T_p + T_f, p)`` measurements, time ascending.
        T_p: number of past samples.
        T_f: number of future samples.
    """

    u_seq: np.ndarray
    y_seq: np.ndarray
    T_p: int
    T_f: int

    def __post_init__(self):
        u = _as_2d(self.u_seq)
        y = _as_2d(self.y_seq)
        object.__setattr__(self, "u_seq", u)
        object.__setattr__(self, "y_seq", y)
        if self.T_p < 1 or self.T_f < 1:
            raise ValueError("T_p and T_f must both be >= 1")
        L = self.T_p + self.T_f
        if u.shape[0] != L or y.shape[0] != L:
            raise ValueError(
                f"u_seq and y_seq need {L} rows, got {u.shape[0]} and {y.shape[0]}")

    @property
    def m(self) -> int:
        return self.u_seq.shape[1]

    @property
    def p(self) -> int:
        return self.y_seq.shape[1]

    @property
    def dim(self) -> int:
        return (self.T_p + self.T_f) * (self.m + self.p)

    @property
    def u_p(self) -> np.ndarray:
        return self.u_seq[: self.T_p].ravel()

    @property
    def u_f(self) -> np.ndarray:
        return self.u_seq[self.T_p:].ravel()

    @property
    def y_p(self) -> np.ndarray:
        return self.y_seq[: self.T_p].ravel()

    @property
    def y_f(self) -> np.ndarray:
        return self.y_seq[self.T_p:].ravel()

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.u_p, self.u_f, self.y_p, self.y_f])

    @classmethod
    def unflatten(cls, vec, T_p: int, T_f: int, m: int, p: int) -> "Trajectory":
        vec = np.asarray(vec, dtype=float).ravel()
        sizes = [T_p * m, T_f * m, T_p * p, T_f * p]
        if vec.size != sum(sizes):
            raise ValueError(f"vector of size {vec.size} does not match "
                             f"(T_p+T_f)(m+p) = {sum(sizes)}")
        u_p, u_f, y_p, y_f = np.split(vec, np.cumsum(sizes)[:-1])
        u = np.vstack([u_p.reshape(T_p, m), u_f.reshape(T_f, m)])
        y = np.vstack([y_p.reshape(T_p, p), y_f.reshape(T_f, p)])
        return cls(u, y, T_p, T_f)


def partition_sizes(T_p: int, T_f: int, m: int, p: int) -> list[int]:
    """Row counts of the ``[u_p, u_f, y_p, y_f]`` partitions."""
    return [T_p * m, T_f * m, T_p * p, T_f * p]


@dataclass
class Dataset:
    """A collection of equally shaped trajectories.

    Trajectories are stored flattened, one per row of ``flat``, which is the
    representation used for distance computations.  ``episodes`` keeps the
    raw records the windows were cut from (when known) so the dataset can be
    written back to disk in per-timestep form.
    """

    flat: np.ndarray
    episode_ids: np.ndarray
    T_p: int
    T_f: int
    m: int
    p: int
    episodes: list[tuple[np.ndarray, np.ndarray]] | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.flat = np.atleast_2d(np.asarray(self.flat, dtype=float))
        self.episode_ids = np.asarray(self.episode_ids, dtype=int).ravel()
        if self.flat.shape[0] < 1:
            raise ValueError("a dataset needs at least one trajectory")
        if self.flat.shape[1] != (self.T_p + self.T_f) * (self.m + self.p):
            raise ValueError("flattened width does not match (T_p+T_f)(m+p)")
        if self.episode_ids.size != self.flat.shape[0]:
            raise ValueError("one episode id per trajectory is required")

    @classmethod
    def from_trajectories(cls, trajectories: Sequence[Trajectory],
                          episode_ids=None) -> "Dataset":
        if len(trajectories) == 0:
            raise ValueError("a dataset needs at least one trajectory")
        t0 = trajectories[0]
        shape = (t0.T_p, t0.T_f, t0.m, t0.p)
        for t in trajectories:
            if (t.T_p, t.T_f, t.m, t.p) != shape:
                raise ValueError("all trajectories must share (T_p, T_f, m, p)")
        if episode_ids is None:
            episode_ids = np.arange(len(trajectories))
        flat = np.vstack([t.flatten() for t in trajectories])
        return cls(flat, episode_ids, *shape)

    def __len__(self) -> int:
        return self.flat.shape[0]

    def __getitem__(self, i: int) -> Trajectory:
        return Trajectory.unflatten(self.flat[i], self.T_p, self.T_f, self.m, self.p)

    @property
    def trajectories(self) -> list[Trajectory]:
        return [self[i] for i in range(len(self))]

    @property
    def n_d(self) -> int:
        return len(self)

    @property
    def dim(self) -> int:
        return self.flat.shape[1]

    def subset(self, indices) -> "Dataset":
        indices = np.asarray(indices, dtype=int)
        return Dataset(self.flat[indices], self.episode_ids[indices],
                       self.T_p, self.T_f, self.m, self.p, meta=dict(self.meta))

    def channel_slices(self) -> tuple[list[np.ndarray], list[np.ndarray]]:
        """Column indices in ``flat`` belonging to each input / output channel."""
        L = self.T_p + self.T_f
        m, p = self.m, self.p
        u_cols = [[] for _ in range(m)]
        y_cols = [[] for _ in range(p)]
        for t in range(L):
            base = t * m
            for c in range(m):
                u_cols[c].append(base + c)
            base = L * m + t * p
            for c in range(p):
                y_cols[c].append(base + c)
        return ([np.array(c) for c in u_cols], [np.array(c) for c in y_cols])


class HankelBlocks:
    """Partitioned data matrices ``U_p, U_f, Y_p, Y_f`` sharing ``N`` columns.

    When ``affine`` is set the stacked matrix gains a final row that must
    combine to one.  That row is all ones for raw data; after
    :func:`lq_compress` it is whatever the compression maps it to, which is
    why it is stored explicitly in ``ones``.
    """

    def __init__(self, U_p, U_f, Y_p, Y_f, affine: bool = False, ones=None):
        self.U_p = np.atleast_2d(np.asarray(U_p, dtype=float))
        self.U_f = np.atleast_2d(np.asarray(U_f, dtype=float))
        self.Y_p = np.atleast_2d(np.asarray(Y_p, dtype=float))
        self.Y_f = np.atleast_2d(np.asarray(Y_f, dtype=float))
        N = self.U_p.shape[1]
        for B in (self.U_f, self.Y_p, self.Y_f):
            if B.shape[1] != N:
                raise ValueError("all Hankel blocks must share the column count")
        self.affine = bool(affine)
        self.ones = np.ones(N) if ones is None else np.asarray(ones, dtype=float).ravel()
        if self.ones.size != N:
            raise ValueError("affine row length must equal the column count")

    @property
    def n_cols(self) -> int:
        return self.U_p.shape[1]

    def H_z(self) -> np.ndarray:
        """Rows the predictor conditions on: ``[U_p; U_f; Y_p; (1ᵀ)]``."""
        rows = [self.U_p, self.U_f, self.Y_p]
        if self.affine:
            rows.append(self.ones[None, :])
        return np.vstack(rows)

    def stacked(self) -> np.ndarray:
        rows = [self.U_p, self.U_f, self.Y_p, self.Y_f]
        if self.affine:
            rows.append(self.ones[None, :])
        return np.vstack(rows)

    @classmethod
    def from_stacked(cls, H, row_sizes, affine: bool) -> "HankelBlocks":
        parts = np.split(np.asarray(H), np.cumsum(row_sizes))
        ones = parts[4][0] if affine else None
        return cls(*parts[:4], affine=affine, ones=ones)

    def row_sizes(self) -> list[int]:
        return [B.shape[0] for B in (self.U_p, self.U_f, self.Y_p, self.Y_f)]

    def with_affine(self, affine: bool) -> "HankelBlocks":
        if affine == self.affine:
            return self
        return HankelBlocks(self.U_p, self.U_f, self.Y_p, self.Y_f, affine=affine, ones=self.ones)


def build_hankel(signal, depth: int) -> np.ndarray:
    """Hankel matrix of the given depth.

    Args:
        signal: ``(T, q)`` samples (a 1-D array is treated as ``q = 1``).
        depth: number of block rows ``L``.

    Returns:
        ``(L*q, T-L+1)`` matrix whose column ``j`` stacks rows ``j..j+L-1``.
    """
    X = _as_2d(signal)
    T, q = X.shape
    if depth < 1:
        raise ValueError("depth must be >= 1")
    if T < depth:
        raise ValueError(f"signal length {T} is shorter than depth {depth}")
    windows = np.lib.stride_tricks.sliding_window_view(X, depth, axis=0)
    # windows: (T-L+1, q, L) -> column j = X[j:j+L].ravel()
    return np.ascontiguousarray(windows.transpose(0, 2, 1).reshape(T - depth + 1, depth * q).T)


def extract_trajectories(episodes, T_p: int, T_f: int, meta: dict | None = None) -> Dataset:
    """Cut stride-1 windows of length ``T_p + T_f`` out of each episode.

    Windows never cross episode boundaries; episodes shorter than the window
    contribute nothing.

    Args:
        episodes: sequence of ``(u, y)`` arrays with ``T_k`` rows each.
        T_p, T_f: past/future lengths.

    Raises:
        ValueError: if no episode is long enough to yield a window.
    """
    L = T_p + T_f
    flats, ids, kept = [], [], []
    m = p = None
    for k, (u, y) in enumerate(episodes):
        u, y = _as_2d(u), _as_2d(y)
        if u.shape[0] != y.shape[0]:
            raise ValueError(f"episode {k}: u and y lengths differ")
        if m is None:
            m, p = u.shape[1], y.shape[1]
        elif (u.shape[1], y.shape[1]) != (m, p):
            raise ValueError(f"episode {k}: channel counts differ from episode 0")
        kept.append((u, y))
        if u.shape[0] < L:
            continue
        Hu = build_hankel(u, L)
        Hy = build_hankel(y, L)
        flats.append(np.vstack([Hu[: T_p * m], Hu[T_p * m:], Hy[: T_p * p], Hy[T_p * p:]]).T)
        ids.append(np.full(Hu.shape[1], k))
    if not flats:
        raise ValueError(f"no episode is at least T_p + T_f = {L} steps long")
    return Dataset(np.vstack(flats), np.concatenate(ids), T_p, T_f, m, p,
                   episodes=kept, meta=dict(meta or {}))


class PersistencyCheck(NamedTuple):
    exciting: bool
    rank: int
    rows: int


def numeric_rank(M: np.ndarray) -> int:
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    tol = max(M.shape) * np.finfo(float).eps * s[0]
    return int(np.sum(s > tol))


def check_persistency(u, order: int) -> PersistencyCheck:
    """Whether ``u`` is persistently exciting of the given order.

    Full row rank of the depth-``order`` Hankel matrix is judged with the
    usual ``max(rows, cols) * eps * sigma_max`` singular-value cut.
    """
    U = _as_2d(u)
    if U.shape[0] < order:
        return PersistencyCheck(False, 0, order * U.shape[1])
    H = build_hankel(U, order)
    r = numeric_rank(H)
    return PersistencyCheck(r == H.shape[0], r, H.shape[0])


def blocks_from(dataset: Dataset, indices=None, affine: bool = False) -> HankelBlocks:
    """Hankel blocks whose columns are the selected trajectories, in order."""
    if indices is None:
        cols = dataset.flat
    else:
        indices = np.asarray(indices, dtype=int).ravel()
        if indices.size == 0:
            raise ValueError("cannot build Hankel blocks from an empty selection")
        cols = dataset.flat[indices]
    sizes = partition_sizes(dataset.T_p, dataset.T_f, dataset.m, dataset.p)
    parts = np.split(cols.T, np.cumsum(sizes)[:-1])
    return HankelBlocks(*parts, affine=affine)


def lq_compress(blocks: HankelBlocks) -> HankelBlocks:
    """Replace the data columns by a basis of their span.

    With ``Hᵀ Π = Q R`` (pivoted QR of the transposed stacked matrix) we have
    ``H = Π Rᵀ Qᵀ``; keeping the ``r`` leading columns of ``Π Rᵀ`` whose
    pivots clear the rank threshold gives ``r <= rows`` columns spanning the
    same column space.  Because ``Q`` has orthonormal columns, least-squares
    predictions computed from the result are unchanged.
    """
    H = blocks.stacked()
    if H.shape[1] == 1:
        return blocks
    Q, R, piv = scipy.linalg.qr(H.T, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    if d.size == 0 or d[0] == 0.0:
        r = 1
    else:
        tol = max(H.shape) * np.finfo(float).eps * d[0]
        r = max(1, int(np.sum(d > tol)))
    # Hᵀ[:, piv] = Q R  =>  H[piv, :] = Rᵀ Qᵀ  =>  H = P Rᵀ Qᵀ
    Hc = np.empty((H.shape[0], r))
    Hc[piv, :] = R[:r, :].T
    return HankelBlocks.from_stacked(Hc, blocks.row_sizes(), blocks.affine)


# -- serialization ---------------------------------------------------------

def save_dataset(dataset: Dataset, path, dt: float | None = None,
                 env: str | None = None) -> tuple[Path, Path]:
    """Write the dataset as a per-timestep CSV plus a JSON sidecar.

    The CSV header is ``u_0..u_{m-1}, y_0..y_{p-1}, episode_id, step``.  If
    the dataset does not remember its source episodes, each trajectory is
    written as its own episode.
    """
    path = Path(path)
    meta_path = path.with_suffix(path.suffix + ".json")
    m, p = dataset.m, dataset.p
    if dataset.episodes is not None:
        episodes = dataset.episodes
        window_ids = None
    else:
        episodes = [(t.u_seq, t.y_seq) for t in dataset.trajectories]
        window_ids = dataset.episode_ids.tolist()
    header = [f"u_{i}" for i in range(m)] + [f"y_{i}" for i in range(p)] + ["episode_id", "step"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for k, (u, y) in enumerate(episodes):
            u, y = _as_2d(u), _as_2d(y)
            for t in range(u.shape[0]):
                w.writerow([repr(float(v)) for v in u[t]] + [repr(float(v)) for v in y[t]] + [k, t])
    meta = dict(dataset.meta)
    meta.update(m=m, p=p, T_p=dataset.T_p, T_f=dataset.T_f, format_version=1)
    if dt is not None:
        meta["dt"] = dt
    if env is not None:
        meta["env"] = env
    if window_ids is not None:
        meta["window_episode_ids"] = window_ids
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True))
    return path, meta_path


def load_episodes(path) -> tuple[list[tuple[np.ndarray, np.ndarray]], dict]:
    path = Path(path)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    m, p = meta["m"], meta["p"]
    raw = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    episodes = []
    ep = raw[:, m + p].astype(int)
    for k in np.unique(ep):
        rows = raw[ep == k]
        rows = rows[np.argsort(rows[:, m + p + 1], kind="stable")]
        episodes.append((rows[:, :m], rows[:, m:m + p]))
    return episodes, meta


def load_dataset(path, T_p: int | None = None, T_f: int | None = None) -> Dataset:
    """Read a dataset written by :func:`save_dataset`.

    ``T_p``/``T_f`` default to the values in the sidecar; passing others
    re-windows the same episodes.
    """
    episodes, meta = load_episodes(path)
    T_p = meta["T_p"] if T_p is None else T_p
    T_f = meta["T_f"] if T_f is None else T_f
    keep = {k: v for k, v in meta.items() if k in ("dt", "env")}
    ds = extract_trajectories(episodes, T_p, T_f, meta=keep)
    if "window_episode_ids" in meta and (T_p, T_f) == (meta["T_p"], meta["T_f"]):
        ds.episode_ids = np.asarray(meta["window_episode_ids"], dtype=int)
        ds.episodes = None
    return ds
