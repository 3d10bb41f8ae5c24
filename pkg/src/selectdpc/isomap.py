"""Isomap: kNN graph geodesics followed by classical MDS.

Out-of-sample points are linked into the graph through their k nearest
training points and projected with the Nyström formula, which reproduces
the training embedding exactly when the query is a training point.
"""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import scipy.sparse
from scipy.sparse.csgraph import connected_components, shortest_path
from scipy.sparse.linalg import eigsh
from scipy.spatial.distance import cdist

log = logging.getLogger(__name__)

CACHE_VERSION = 1


class DisconnectedGraphError(ValueError):
    def __init__(self, sizes):
        self.sizes = sorted((int(s) for s in sizes), reverse=True)
        super().__init__(f"neighbourhood graph has {len(self.sizes)} components of sizes {self.sizes}; "
                         "increase k_neighbors")


@dataclass(frozen=True)
class EmbeddingModel:
    training_points: np.ndarray
    k_neighbors: int
    d_embed: int
    geodesic: np.ndarray
    eigvals: np.ndarray
    eigvecs: np.ndarray
    embedding: np.ndarray
    mean_sq_geodesic_rows: np.ndarray
    max_edge: float

    @property
    def n_d(self) -> int:
        return self.training_points.shape[0]


def knn(points: np.ndarray, queries: np.ndarray, k: int, exclude_self: bool = False,
        chunk: int = 512) -> tuple[np.ndarray, np.ndarray]:
    """Indices and Euclidean distances of the ``k`` nearest points, by rows."""
    n_q = queries.shape[0]
    idx = np.empty((n_q, k), dtype=np.int64)
    dist = np.empty((n_q, k))
    for a in range(0, n_q, chunk):
        b = min(a + chunk, n_q)
        D = cdist(queries[a:b], points)
        if exclude_self:
            D[np.arange(b - a), np.arange(a, b)] = np.inf
        part = np.argpartition(D, k - 1, axis=1)[:, :k] if k < D.shape[1] else \
            np.tile(np.arange(D.shape[1]), (b - a, 1))
        dp = np.take_along_axis(D, part, axis=1)
        order = np.lexsort((part, dp), axis=1)
        idx[a:b] = np.take_along_axis(part, order, axis=1)
        dist[a:b] = np.take_along_axis(dp, order, axis=1)
    return idx, dist


def neighbourhood_graph(points: np.ndarray, k: int) -> scipy.sparse.csr_matrix:
    """Symmetric kNN graph: an edge whenever either endpoint lists the other."""
    n = points.shape[0]
    idx, dist = knn(points, points, k, exclude_self=True)
    rows = np.repeat(np.arange(n), k)
    G = scipy.sparse.coo_matrix((dist.ravel(), (rows, idx.ravel())), shape=(n, n)).tocsr()
    # coincident points would give zero-weight edges, which csgraph reads as absent
    G.data = np.maximum(G.data, 1e-300)
    return G.maximum(G.T).tocsr()


def fit(points, k_neighbors: int = 10, d_embed: int = 2) -> EmbeddingModel:
    X = np.asarray(points, dtype=float)
    n = X.shape[0]
    if not 1 <= k_neighbors < n:
        raise ValueError(f"need 1 <= k_neighbors < n_d, got k={k_neighbors}, n_d={n}")
    if not 1 <= d_embed <= n - 1:
        raise ValueError(f"need 1 <= d_embed <= n_d - 1, got {d_embed}")
    G = neighbourhood_graph(X, k_neighbors)
    n_comp, labels = connected_components(G, directed=False)
    if n_comp > 1:
        raise DisconnectedGraphError(np.bincount(labels))
    D = shortest_path(G, method="D", directed=False)
    D = 0.5 * (D + D.T)
    np.fill_diagonal(D, 0.0)
    D2 = D * D
    row_mean = D2.mean(axis=1)
    B = -0.5 * (D2 - row_mean[:, None] - row_mean[None, :] + row_mean.mean())
    B = 0.5 * (B + B.T)
    if d_embed >= n - 1 or n <= 64:
        w, V = np.linalg.eigh(B)
        w, V = w[::-1][:d_embed], V[:, ::-1][:, :d_embed]
    else:
        v0 = np.ones(n) / np.sqrt(n) + np.linspace(0.0, 1e-3, n)
        w, V = eigsh(B, k=d_embed, which="LA", v0=v0)
        order = np.argsort(-w)
        w, V = w[order], V[:, order]
    # deterministic sign: largest-magnitude entry positive
    flip = np.sign(V[np.argmax(np.abs(V), axis=0), np.arange(V.shape[1])])
    V = V * np.where(flip == 0, 1.0, flip)
    keep = w > 0
    w, V = w[keep], V[:, keep]
    emb = V * np.sqrt(w)
    return EmbeddingModel(X, int(k_neighbors), int(w.size), D, w, V, emb, row_mean,
                          float(G.data.max()) if G.nnz else 0.0)


def link(model: EmbeddingModel, x) -> tuple[np.ndarray, float]:
    """Geodesic distances from ``x`` to every training point, plus its nearest-neighbour distance."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    if x.shape[1] != model.training_points.shape[1]:
        raise ValueError(f"query has dimension {x.shape[1]}, model expects {model.training_points.shape[1]}")
    k = min(model.k_neighbors, model.n_d)
    idx, dist = knn(model.training_points, x, k)
    d = np.min(dist[0][:, None] + model.geodesic[idx[0]], axis=0)
    return d, float(dist[0, 0])


def embed_from_geodesic(model: EmbeddingModel, d: np.ndarray) -> np.ndarray:
    """Nyström projection of a point given its geodesic distances."""
    return 0.5 * (model.eigvecs.T @ (model.mean_sq_geodesic_rows - d * d)) / np.sqrt(model.eigvals)


def embed(model: EmbeddingModel, x) -> np.ndarray:
    d, _ = link(model, x)
    return embed_from_geodesic(model, d)


def truncate(model: EmbeddingModel, d: int) -> EmbeddingModel:
    """The same model keeping only its ``d`` leading coordinates."""
    d = min(d, model.d_embed)
    return replace(model, d_embed=d, eigvals=model.eigvals[:d], eigvecs=model.eigvecs[:, :d],
                   embedding=model.embedding[:, :d])


def reconstruction_error(model: EmbeddingModel) -> float:
    """Residual variance ``1 - R²`` between geodesic and embedded distances."""
    iu = np.triu_indices(model.n_d, 1)
    g = model.geodesic[iu]
    e = cdist(model.embedding, model.embedding)[iu]
    if g.size < 2 or np.std(g) == 0 or np.std(e) == 0:
        return 0.0 if np.allclose(g, e) else 1.0
    r = np.corrcoef(g, e)[0, 1]
    return float(np.clip(1.0 - r * r, 0.0, 1.0))


def default_d_embed(T_f: int, m: int, p: int, n_est: int | None = None) -> int:
    """Latent order plus future input freedom; ``2p`` stands in for an unknown order."""
    return int((2 * p if n_est is None else n_est) + T_f * m)


# -- cache -----------------------------------------------------------------

def dataset_hash(points: np.ndarray) -> str:
    a = np.ascontiguousarray(points, dtype=np.float64)
    h = hashlib.sha256()
    h.update(str(a.shape).encode())
    h.update(a.tobytes())
    return h.hexdigest()


def cache_path(cache_dir, points, k_neighbors, d_embed) -> Path:
    key = dataset_hash(points)[:24]
    return Path(cache_dir) / f"isomap-{key}-k{k_neighbors}-d{d_embed}.npz"


def save_model(model: EmbeddingModel, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, version=CACHE_VERSION, points_hash=dataset_hash(model.training_points),
                 k=model.k_neighbors, d_embed=model.d_embed, geodesic=model.geodesic,
                 eigvals=model.eigvals, eigvecs=model.eigvecs, embedding=model.embedding,
                 mean_sq=model.mean_sq_geodesic_rows, max_edge=model.max_edge)
    return path


def load_model(path, points) -> EmbeddingModel:
    with np.load(path) as z:
        if int(z["version"]) != CACHE_VERSION:
            raise ValueError(f"cache version {int(z['version'])} != {CACHE_VERSION}")
        if str(z["points_hash"]) != dataset_hash(points):
            raise ValueError("cached embedding was fitted on different data")
        return EmbeddingModel(np.asarray(points, dtype=float), int(z["k"]), int(z["d_embed"]),
                              z["geodesic"], z["eigvals"], z["eigvecs"], z["embedding"],
                              z["mean_sq"], float(z["max_edge"]))


def fit_cached(points, k_neighbors: int = 10, d_embed: int = 2, cache_dir=None) -> EmbeddingModel:
    """:func:`fit`, reusing a model stored under ``cache_dir`` when one matches."""
    if cache_dir is None:
        return fit(points, k_neighbors, d_embed)
    path = cache_path(cache_dir, points, k_neighbors, d_embed)
    if path.exists():
        try:
            return load_model(path, points)
        except (ValueError, KeyError, OSError) as exc:
            log.warning("ignoring stale embedding cache %s: %s", path, exc)
    model = fit(points, k_neighbors, d_embed)
    save_model(model, path)
    return model
