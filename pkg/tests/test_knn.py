import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from postratio.data import LabeledDataset
from postratio.knn import KnnIndex, build_index


def brute_force_knn(points, x, k):
    """Reference: sort by (distance, index) and take the first k."""
    d2 = ((points - x) ** 2).sum(axis=1)
    order = np.lexsort((np.arange(len(points)), d2))[:k]
    return order, np.sqrt(d2[order])


class TestKnnIndex:
    def test_matches_brute_force(self):
        rng = np.random.default_rng(0)
        points = rng.standard_normal((50, 3))
        index = KnnIndex(points)
        for x in rng.standard_normal((20, 3)):
            got = index.query(x, 5)
            want_idx, want_dist = brute_force_knn(points, x, 5)
            assert np.array_equal(got.indices, want_idx)
            assert np.allclose(got.distances, want_dist)

    def test_exact_duplicates_tie_break_by_index(self):
        points = np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 0.0], [0.0, 0.0]])
        index = KnnIndex(points)
        got = index.query(np.array([0.0, 0.0]), 3)
        assert np.array_equal(got.indices, [1, 2, 3])
        assert np.array_equal(got.distances, [0.0, 0.0, 0.0])

    def test_equidistant_points_tie_break_by_index(self):
        points = np.array([[1.0], [-1.0], [2.0]])
        index = KnnIndex(points)
        got = index.query(np.array([0.0]), 2)
        assert np.array_equal(got.indices, [0, 1])

    def test_query_many_matches_query(self):
        rng = np.random.default_rng(1)
        points = rng.standard_normal((30, 2))
        X = rng.standard_normal((10, 2))
        index = KnnIndex(points)
        idx, dist, truncated = index.query_many(X, 4)
        assert idx.shape == dist.shape == (10, 4)
        assert not truncated
        for i, x in enumerate(X):
            single = index.query(x, 4)
            assert np.array_equal(idx[i], single.indices)
            assert np.allclose(dist[i], single.distances)

    def test_chunked_queries_match_brute_force(self):
        # more queries than one internal chunk
        rng = np.random.default_rng(2)
        points = rng.standard_normal((40, 2))
        X = rng.standard_normal((600, 2))
        index = KnnIndex(points)
        idx, dist, _ = index.query_many(X, 3)
        for i in (0, 255, 256, 511, 599):
            want_idx, want_dist = brute_force_knn(points, X[i], 3)
            assert np.array_equal(idx[i], want_idx)
            assert np.allclose(dist[i], want_dist)

    def test_k_larger_than_index_clamps_with_warning(self):
        index = KnnIndex(np.zeros((3, 1)))
        with pytest.warns(UserWarning, match="clamping"):
            got = index.query(np.array([0.0]), 10)
        assert got.truncated
        assert got.indices.shape == (3,)

    def test_input_validation(self):
        with pytest.raises(ValueError):
            KnnIndex(np.empty((0, 2)))
        with pytest.raises(ValueError):
            KnnIndex(np.zeros(3))
        index = KnnIndex(np.zeros((3, 2)))
        with pytest.raises(ValueError):
            index.query(np.zeros(3), 1)
        with pytest.raises(ValueError):
            index.query(np.zeros(2), 0)
        with pytest.raises(ValueError):
            index.query_many(np.zeros((2, 3)), 1)

    def test_from_dataset_keeps_labels(self):
        ds = LabeledDataset(np.array([1, -1]), np.array([[0.0], [1.0]]))
        index = build_index(ds)
        assert np.array_equal(index.labels, ds.labels)
        assert len(index) == 2
        assert index.dim == 1

    def test_conditional_mean(self):
        points = np.array([[0.0], [1.0], [10.0]])
        z = np.array([2.0, 4.0, 100.0])
        index = KnnIndex(points)
        assert index.conditional_mean(np.array([0.2]), 2, z) == pytest.approx(3.0)
        with pytest.raises(ValueError):
            index.conditional_mean(np.array([0.2]), 2, z[:2])

    @settings(max_examples=50, deadline=None)
    @given(
        seed=st.integers(min_value=0, max_value=2**31),
        n=st.integers(min_value=1, max_value=30),
        d=st.integers(min_value=1, max_value=4),
        k=st.integers(min_value=1, max_value=30),
    )
    def test_distances_sorted_and_self_is_nearest(self, seed, n, d, k):
        rng = np.random.default_rng(seed)
        points = rng.standard_normal((n, d))
        index = KnnIndex(points)
        k = min(k, n)
        got = index.query(points[0], k)
        assert np.all(np.diff(got.distances) >= 0)
        assert got.indices[0] == 0
        assert got.distances[0] == 0.0
