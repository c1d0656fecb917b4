import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from openset_al.embedding_space import UnlabeledPool
from openset_al.exceptions import DataError
from openset_al.pseudo_label import (
    format_pseudo_labels,
    generate_pseudo_labels,
    kmeans,
    kmeans_pp_init,
    lloyd,
    parse_pseudo_labels,
    select_k,
    silhouette_samples,
    silhouette_score,
)

from .oracles import best_two_partition, naive_silhouette


def _blobs(centers, n, std, seed):
    rng = np.random.default_rng(seed)
    return np.vstack([c + std * rng.standard_normal((n, len(c))) for c in np.asarray(centers, float)])


class TestInit:
    def test_k_equals_n_is_permutation(self):
        X = np.arange(12, dtype=float).reshape(6, 2)
        C = kmeans_pp_init(X, 6, seed=1)
        assert sorted(map(tuple, C)) == sorted(map(tuple, X))

    def test_k_one(self):
        X = np.arange(10, dtype=float).reshape(5, 2)
        C = kmeans_pp_init(X, 1, seed=2)
        assert any(np.array_equal(C[0], x) for x in X)

    def test_coincident_pairs(self):
        X = np.array([[0, 0], [0, 0], [100, 0], [100, 0]], float)
        for seed in range(20):
            C = kmeans_pp_init(X, 2, seed=seed)
            assert {C[0][0], C[1][0]} == {0.0, 100.0}

    def test_too_few_distinct(self):
        with pytest.raises(DataError):
            kmeans_pp_init(np.zeros((5, 2)), 2)

    def test_k_out_of_range(self):
        with pytest.raises(ValueError):
            kmeans_pp_init(np.zeros((3, 2)), 4)


class TestLloyd:
    def test_k_one_closed_form(self):
        X = np.random.default_rng(0).normal(size=(20, 3))
        c = kmeans(X, 1)
        assert np.allclose(c.centroids[0], X.mean(axis=0), atol=1e-12)
        assert c.inertia == pytest.approx(((X - X.mean(axis=0)) ** 2).sum(), rel=1e-12)

    def test_identical_points(self):
        assert kmeans(np.ones((6, 2)), 1).inertia == 0.0

    def test_two_blobs_match_brute_force(self):
        for seed in range(5):
            X = _blobs([[0, 0], [10, 10]], 6, 0.5, seed)
            c = kmeans(X, 2, seed=seed)
            best_inertia, best_assign = best_two_partition(X.tolist())
            a = c.assignment
            same = np.array_equal(a, best_assign) or np.array_equal(1 - a, best_assign)
            assert same and c.inertia == pytest.approx(best_inertia, rel=1e-9)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31), st.integers(2, 6))
    def test_inertia_monotone(self, seed, k):
        X = np.random.default_rng(seed).normal(size=(30, 2))
        c = lloyd(X, kmeans_pp_init(X, k, seed))
        h = np.array(c.inertia_history)
        assert np.all(np.diff(h) <= 1e-9 * max(1.0, h[0]))
        assert np.bincount(c.assignment, minlength=k).min() > 0

    def test_empty_cluster_repaired(self):
        X = np.array([[0.0], [0.1], [0.2], [10.0]])
        c = lloyd(X, np.array([[0.1], [10.0], [500.0]]))
        assert np.bincount(c.assignment, minlength=3).min() > 0


class TestSilhouette:
    def test_hand(self):
        X = np.array([[0.0], [0.1], [10.0], [10.1]])
        s = silhouette_score(X, [0, 0, 1, 1])
        assert s == pytest.approx(1 - 0.1 / 10.05, abs=1e-3)
        assert s == pytest.approx(0.990, abs=1e-3)

    def test_singletons(self):
        assert silhouette_score(np.array([[0.0], [5.0]]), [0, 1]) == 0.0

    def test_random_split_of_one_blob_is_low(self):
        for seed in range(5):
            rng = np.random.default_rng(seed)
            X = rng.normal(size=(40, 2))
            a = rng.integers(0, 2, 40)
            assert silhouette_score(X, a) < 0.25

    def test_matches_naive(self):
        rng = np.random.default_rng(1)
        for _ in range(30):
            n = int(rng.integers(3, 15))
            X = rng.normal(size=(n, 2))
            a = rng.integers(0, 3, n)
            if len(set(a)) < 2:
                continue
            assert silhouette_score(X, a) == pytest.approx(naive_silhouette(X.tolist(), a.tolist()), abs=1e-12)

    def test_bounds(self):
        X = np.random.default_rng(2).normal(size=(25, 3))
        s = silhouette_samples(X, np.arange(25) % 4)
        assert np.all(s >= -1) and np.all(s <= 1)


class TestSelectK:
    def test_three_blobs(self):
        X = _blobs([[0, 0], [50, 0], [0, 50]], 15, 1.0, 0)
        assert select_k(X, [2, 3, 4, 5], seed=0)[0] == 3

    def test_single_candidate(self):
        X = np.random.default_rng(0).normal(size=(20, 2))
        assert select_k(X, [2])[0] == 2

    def test_deterministic(self):
        X = np.random.default_rng(0).normal(size=(30, 2))
        a, b = select_k(X, range(2, 6), seed=4), select_k(X, range(2, 6), seed=4)
        assert a[0] == b[0] and np.array_equal(a[1].assignment, b[1].assignment)


class TestPseudoLabels:
    def _pool(self):
        X = _blobs([[0, 0], [30, 30]], 8, 0.5, 3)
        return UnlabeledPool([f"p{i}" for i in range(16)], X, known_classes={0, 1, 2})

    def test_two_blobs(self):
        m = generate_pseudo_labels(self._pool(), [2, 3, 4], seed=0)
        first = {m[f"p{i}"] for i in range(8)}
        second = {m[f"p{i}"] for i in range(8, 16)}
        assert len(first) == 1 and len(second) == 1 and first != second
        assert min(m.values()) >= 3

    def test_deterministic(self):
        assert generate_pseudo_labels(self._pool(), [2, 3], 5) == generate_pseudo_labels(self._pool(), [2, 3], 5)

    def test_pool_smaller_than_grid(self):
        with pytest.raises(DataError):
            generate_pseudo_labels(self._pool(), range(2, 20))

    def test_file_round_trip(self):
        m = generate_pseudo_labels(self._pool(), [2, 3], 1)
        assert parse_pseudo_labels(format_pseudo_labels(m, "manifest_hash=z")) == m
