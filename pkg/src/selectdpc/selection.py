"""Picking the data columns most relevant to a query trajectory.

Distances are spatial (in trajectory space or in an Isomap embedding of it),
not temporal.  Every selector returns indices in ascending distance with
ties broken by dataset index.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.spatial.distance import cdist

from . import isomap
from .trajectory_data import Dataset, Trajectory

log = logging.getLogger(__name__)

KINDS = ("norm", "manifold", "random", "full")


class SelectionWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SelectionMethod:
    """Which selector to run and how to measure distance.

    ``feature_weights=None`` means per-channel standardisation (each input and
    output channel divided by its dataset-wide standard deviation) when
    ``standardize`` is set, and unit weights otherwise.
    """

    kind: str = "norm"
    norm_order: float = 1
    feature_weights: np.ndarray | None = None
    standardize: bool = True
    seed: int = 0
    link_tolerance: float = 2.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown selection kind {self.kind!r}; expected one of {KINDS}")
        if self.norm_order not in (1, 2, np.inf):
            raise ValueError("norm_order must be 1, 2 or inf")
        if self.feature_weights is not None:
            w = np.asarray(self.feature_weights, dtype=float).ravel()
            if np.any(w <= 0) or not np.all(np.isfinite(w)):
                raise ValueError("feature weights must be finite and positive")
            object.__setattr__(self, "feature_weights", w)


class Selection(NamedTuple):
    indices: np.ndarray
    distances: np.ndarray
    clamped: bool = False
    fallback: bool = False


def channel_weights(dataset: Dataset) -> np.ndarray:
    """``1 / std`` of each input/output channel, broadcast to trajectory coordinates."""
    w = np.ones(dataset.dim)
    u_cols, y_cols = dataset.channel_slices()
    for cols in (*u_cols, *y_cols):
        sd = float(np.std(dataset.flat[:, cols]))
        w[cols] = 1.0 / sd if sd > 1e-12 else 1.0
    return w


def resolve_weights(dataset: Dataset, method: SelectionMethod) -> np.ndarray:
    if method.feature_weights is not None:
        if method.feature_weights.size != dataset.dim:
            raise ValueError(f"feature_weights has {method.feature_weights.size} entries, "
                             f"trajectories have {dataset.dim}")
        return method.feature_weights
    return channel_weights(dataset) if method.standardize else np.ones(dataset.dim)


def _vec(query, dim: int) -> np.ndarray:
    q = query.flatten() if isinstance(query, Trajectory) else np.asarray(query, dtype=float).ravel()
    if q.size != dim:
        raise ValueError(f"query has dimension {q.size}, dataset trajectories have {dim}")
    return q


def _clamp(n_cols: int, n_d: int) -> tuple[int, bool]:
    if n_cols < 1:
        raise ValueError("n_cols must be >= 1")
    if n_cols > n_d:
        warnings.warn(f"n_cols={n_cols} exceeds the {n_d} available trajectories; using all",
                      SelectionWarning, stacklevel=3)
        return n_d, True
    return n_cols, False


def nearest(d: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` smallest entries of ``d``, ascending, ties by index."""
    n = d.size
    if k < n:
        kth = np.partition(d, k - 1)[k - 1]
        cand = np.flatnonzero(d <= kth)
    else:
        cand = np.arange(n)
    order = np.lexsort((cand, d[cand]))
    return cand[order[:k]]


_METRIC = {1: "cityblock", 2: "euclidean", np.inf: "chebyshev"}


def distances(X: np.ndarray, q: np.ndarray, order: float) -> np.ndarray:
    """Row-wise ``‖X_i - q‖`` in the given norm."""
    return cdist(X, np.reshape(q, (1, -1)), _METRIC[order])[:, 0]


class Selector:
    """Pre-weighted view of a dataset that answers selection queries.

    Args:
        dataset: the trajectory dataset.
        method: selection settings.
        model: fitted embedding for ``kind="manifold"``; it must have been fitted
            on ``dataset.flat * weights`` for the weights this selector uses.
    """

    def __init__(self, dataset: Dataset, method: SelectionMethod = SelectionMethod(),
                 model: isomap.EmbeddingModel | None = None):
        self.dataset = dataset
        self.method = method
        self.weights = resolve_weights(dataset, method)
        self.X = dataset.flat * self.weights
        self.model = model
        if method.kind == "manifold":
            if model is None:
                raise ValueError("manifold selection needs a fitted embedding model")
            if model.training_points.shape != self.X.shape:
                raise ValueError("embedding model was fitted on a different dataset")
        self._rng = np.random.default_rng(method.seed)

    def select(self, query, n_cols: int) -> Selection:
        kind = self.method.kind
        n_d = self.dataset.n_d
        if kind == "full":
            q = _vec(query, self.dataset.dim) * self.weights
            return Selection(np.arange(n_d), distances(self.X, q, self.method.norm_order))
        if kind == "random":
            k, clamped = _clamp(n_cols, n_d)
            return Selection(self._rng.choice(n_d, size=k, replace=False), np.full(k, np.nan), clamped)
        q = _vec(query, self.dataset.dim) * self.weights
        k, clamped = _clamp(n_cols, n_d)
        if kind == "manifold":
            d_geo, d_near = isomap.link(self.model, q)
            if d_near > self.method.link_tolerance * self.model.max_edge:
                warnings.warn("query lies outside the neighbourhood graph; using norm selection",
                              SelectionWarning, stacklevel=2)
                d = distances(self.X, q, self.method.norm_order)
                idx = nearest(d, k)
                return Selection(idx, d[idx], clamped, fallback=True)
            e = isomap.embed_from_geodesic(self.model, d_geo)
            d = distances(self.model.embedding, e, 2)
            idx = nearest(d, k)
            return Selection(idx, d[idx], clamped)
        d = distances(self.X, q, self.method.norm_order)
        idx = nearest(d, k)
        return Selection(idx, d[idx], clamped)


def select_norm(dataset: Dataset, query, n_cols: int, method: SelectionMethod = SelectionMethod()) -> Selection:
    return Selector(dataset, SelectionMethod(**{**method.__dict__, "kind": "norm"})).select(query, n_cols)


def select_random(dataset: Dataset, n_cols: int, seed: int = 0) -> Selection:
    return Selector(dataset, SelectionMethod(kind="random", seed=seed)).select(None, n_cols)


def select_manifold(dataset: Dataset, model: isomap.EmbeddingModel, query, n_cols: int,
                    method: SelectionMethod | None = None) -> Selection:
    method = method or SelectionMethod(kind="manifold")
    method = SelectionMethod(**{**method.__dict__, "kind": "manifold"})
    return Selector(dataset, method, model).select(query, n_cols)


def relative_contrast(points, query, metric: float = 1) -> float:
    """``(d_max - d_min) / d_min`` of the query's distances to ``points``.

    Returns ``inf`` when the query coincides with a point.
    """
    X = np.atleast_2d(np.asarray(points, dtype=float))
    if X.shape[0] < 2:
        raise ValueError("relative contrast needs at least two points")
    d = distances(X, np.asarray(query, dtype=float).ravel(), metric)
    dmin, dmax = float(d.min()), float(d.max())
    if dmin == 0.0:
        return np.inf
    return (dmax - dmin) / dmin


def relative_contrast_from_distances(d) -> float:
    d = np.asarray(d, dtype=float).ravel()
    if d.size < 2:
        raise ValueError("relative contrast needs at least two distances")
    dmin = float(d.min())
    return np.inf if dmin == 0.0 else (float(d.max()) - dmin) / dmin
