import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.sparse.csgraph import shortest_path

from selectdpc import isomap
from selectdpc.selection import (SelectionMethod, SelectionWarning, Selector, nearest, relative_contrast,
                                 relative_contrast_from_distances, select_manifold, select_norm,
                                 select_random)
from selectdpc.trajectory_data import Dataset


def points_dataset(X):
    """Raw points as a dataset with T_p = T_f = m = 1; zero columns pad the width to an even >= 4."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    width = max(4, X.shape[1] + X.shape[1] % 2)
    X = np.hstack([X, np.zeros((X.shape[0], width - X.shape[1]))])
    return Dataset(X, np.zeros(X.shape[0]), 1, 1, 1, width // 2 - 1)


def pad(q, ds):
    q = np.asarray(q, dtype=float)
    return np.concatenate([q, np.zeros(ds.dim - q.size)])


RAW = SelectionMethod(standardize=False)


def test_toy_1d_selection():
    ds = points_dataset(np.array([[0.0], [1.0], [3.0], [10.0]]))
    sel = select_norm(ds, pad([2.0], ds), 2, RAW)
    assert sorted(sel.indices.tolist()) == [1, 2]


def test_query_in_dataset_comes_first():
    X = np.random.default_rng(0).standard_normal((20, 4))
    ds = points_dataset(X)
    sel = select_norm(ds, X[7], 5)
    assert sel.indices[0] == 7 and sel.distances[0] == 0.0


def test_full_sort():
    X = np.random.default_rng(1).standard_normal((15, 4))
    ds = points_dataset(X)
    sel = select_norm(ds, np.zeros(4), 15, RAW)
    d = np.abs(X).sum(axis=1)
    np.testing.assert_array_equal(sel.indices, np.lexsort((np.arange(15), d)))


def test_ties_by_index():
    np.testing.assert_array_equal(nearest(np.array([1.0, 0.5, 1.0, 0.5]), 3), [1, 3, 0])


def test_clamp_warns():
    ds = points_dataset(np.eye(4))
    with pytest.warns(SelectionWarning):
        sel = select_norm(ds, np.zeros(4), 9)
    assert sel.clamped and sel.indices.size == 4


def test_dimension_mismatch():
    ds = points_dataset(np.eye(4))
    with pytest.raises(ValueError):
        select_norm(ds, np.zeros(3), 1)


@given(st.integers(0, 10_000), st.integers(1, 30), st.sampled_from([1, 2, np.inf]))
def test_norm_selection_sorted_and_unique(seed, n_cols, order):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((30, 6))
    sel = select_norm(points_dataset(X), rng.standard_normal(6), n_cols, SelectionMethod(norm_order=order))
    assert len(set(sel.indices.tolist())) == n_cols
    assert np.all(np.diff(sel.distances) >= 0)


@given(st.integers(0, 10_000))
def test_permutation_equivariance(seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((25, 4))
    q = rng.standard_normal(4)
    perm = rng.permutation(25)
    a = select_norm(points_dataset(X), q, 8, RAW).indices
    b = select_norm(points_dataset(X[perm]), q, 8, RAW).indices
    assert set(perm[b].tolist()) == set(a.tolist())


@given(st.integers(0, 10_000), st.floats(1e-3, 1e3))
def test_weight_scaling_invariance(seed, c):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((25, 4))
    q = rng.standard_normal(4)
    w = rng.uniform(0.5, 2.0, 4)
    a = select_norm(points_dataset(X), q, 6, SelectionMethod(feature_weights=w)).indices
    b = select_norm(points_dataset(X), q, 6, SelectionMethod(feature_weights=c * w)).indices
    assert set(a.tolist()) == set(b.tolist())


def test_random_reproducible_and_permutation():
    ds = points_dataset(np.random.default_rng(2).standard_normal((12, 2)))
    a, b = select_random(ds, 5, seed=3), select_random(ds, 5, seed=3)
    np.testing.assert_array_equal(a.indices, b.indices)
    assert sorted(select_random(ds, 12, seed=1).indices.tolist()) == list(range(12))


def test_random_uniform_frequency():
    ds = points_dataset(np.zeros((10, 2)))
    sel = Selector(ds, SelectionMethod(kind="random", seed=0))
    counts = np.bincount([sel.select(None, 1).indices[0] for _ in range(10_000)], minlength=10)
    sigma = np.sqrt(10_000 * 0.1 * 0.9)
    assert np.all(np.abs(counts - 1000) < 4 * sigma)


def spiral(n=600):
    # radial gap between coils is 2π·0.1 ≈ 0.63 while consecutive samples are ≈ 0.026 apart
    t = np.linspace(2 * np.pi, 6 * np.pi, n)
    return t, 0.1 * np.column_stack([t * np.cos(t), t * np.sin(t)])


def test_manifold_follows_arc_length():
    _, X = spiral()
    ds = points_dataset(X)
    X = ds.flat
    # brute-force geodesic on the sampled curve: cumulative chord length
    arc = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(X, axis=0), axis=1))])
    model = isomap.fit(X, 4, 1)
    i, n_cols = 300, 80
    by_arc = np.argsort(np.abs(arc - arc[i]), kind="stable")[:n_cols]
    man = select_manifold(ds, model, X[i], n_cols, SelectionMethod(kind="manifold", standardize=False)).indices
    l2 = select_norm(ds, X[i], n_cols, SelectionMethod(norm_order=2, standardize=False)).indices
    assert set(man.tolist()) == set(by_arc.tolist())
    # raw L2 picks up points from the adjacent coils, far away along the curve
    assert np.max(np.abs(arc[l2] - arc[i])) > 2 * np.max(np.abs(arc[by_arc] - arc[i]))


def test_manifold_training_point_first():
    X = np.random.default_rng(3).standard_normal((60, 4))
    model = isomap.fit(X, 8, 3)
    sel = select_manifold(points_dataset(X), model, X[11], 60, SelectionMethod(kind="manifold", standardize=False))
    assert sel.indices[0] == 11 and sel.distances[0] < 1e-8
    assert sorted(sel.indices.tolist()) == list(range(60))


def test_manifold_complete_graph_reduces_to_l2():
    rng = np.random.default_rng(4)
    X = rng.standard_normal((30, 4))
    model = isomap.fit(X, 29, 4)
    # in general position the complete graph's shortest paths are direct edges
    np.testing.assert_allclose(model.geodesic, np.linalg.norm(X[:, None] - X[None], axis=2), atol=1e-10)
    meth = SelectionMethod(kind="manifold", standardize=False)
    for i in range(5):
        q = X[i]
        a = select_manifold(points_dataset(X), model, q, 10, meth).indices
        b = select_norm(points_dataset(X), q, 10, SelectionMethod(norm_order=2, standardize=False)).indices
        assert set(a.tolist()) == set(b.tolist())


def test_manifold_fallback_far_query():
    X = np.random.default_rng(5).standard_normal((40, 4))
    model = isomap.fit(X, 6, 2)
    with pytest.warns(SelectionWarning):
        sel = select_manifold(points_dataset(X), model, np.full(4, 100.0), 3,
                              SelectionMethod(kind="manifold", standardize=False))
    assert sel.fallback


def test_relative_contrast_examples():
    assert relative_contrast_from_distances([1.0, 2.0, 3.0]) == 2.0
    assert relative_contrast_from_distances([2.0, 2.0, 2.0]) == 0.0
    assert relative_contrast([[0.0, 0.0], [1.0, 0.0]], [0.0, 0.0]) == np.inf
    with pytest.raises(ValueError):
        relative_contrast([[0.0, 0.0]], [1.0, 1.0])


def test_relative_contrast_shrinks_with_dimension():
    rng = np.random.default_rng(0)
    means = []
    for dim in (2, 8, 32, 128, 512):
        vals = [relative_contrast(rng.standard_normal((200, dim)), rng.standard_normal(dim), 1)
                for _ in range(20)]
        means.append(np.mean(vals))
    assert all(b < a for a, b in zip(means, means[1:]))


def test_method_validation():
    with pytest.raises(ValueError):
        SelectionMethod(kind="bogus")
    with pytest.raises(ValueError):
        SelectionMethod(norm_order=3)
    with pytest.raises(ValueError):
        SelectionMethod(feature_weights=[1.0, -1.0])
