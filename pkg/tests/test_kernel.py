import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from openset_al.embedding_space import Embedding, LabeledEmbedding, LabeledSet
from openset_al.exceptions import ConfigError, DataError
from openset_al.kernel import KernelParams, class_posterior, classify, insert_center, score_set


def _C(points, labels):
    return LabeledSet([f"c{i}" for i in range(len(points))], np.asarray(points, float), labels)


def naive_posterior(x, centers, labels, sigma):
    mass = {}
    for c, y in zip(centers, labels):
        d2 = sum((a - b) ** 2 for a, b in zip(x, c))
        mass[int(y)] = mass.get(int(y), 0.0) + math.exp(-d2 / (2 * sigma * sigma))
    total = sum(mass.values())
    return {k: v / total for k, v in mass.items()}


class TestPosterior:
    def test_single_class(self):
        C = _C([[0, 0], [1, 1]], [4, 4])
        assert class_posterior([9, 9], C, KernelParams(1.0)).probs == {4: 1.0}

    @pytest.mark.parametrize("sigma", [0.1, 1.0, 50.0])
    def test_symmetric(self, sigma):
        C = _C([[-1, 0], [1, 0]], [0, 1])
        p = class_posterior([0, 3], C, KernelParams(sigma)).probs
        assert p[0] == pytest.approx(0.5, abs=1e-15) and p[1] == pytest.approx(0.5, abs=1e-15)

    def test_two_center_value(self):
        C = _C([[0, 0], [2, 0]], [0, 1])
        p = class_posterior([0, 0], C, KernelParams(1.0)).probs
        assert p[0] == pytest.approx(1 / (1 + math.exp(-2)), abs=1e-12)
        assert p[0] == pytest.approx(0.8808, abs=1e-4)
        assert p[1] == pytest.approx(0.1192, abs=1e-4)

    def test_far_query_does_not_underflow(self):
        C = _C([[0, 0], [2, 0]], [0, 1])
        p = class_posterior([1e4, 0], C, KernelParams(0.1)).probs
        assert all(np.isfinite(list(p.values())))
        assert p[1] == pytest.approx(1.0)
        assert sum(p.values()) == pytest.approx(1.0, abs=1e-12)

    def test_large_sigma_gives_class_frequency(self):
        C = _C([[0, 0], [1, 0], [2, 0], [3, 3]], [0, 0, 0, 1])
        p = class_posterior([0.5, 0.5], C, KernelParams(1e6)).probs
        assert p[0] == pytest.approx(0.75, abs=1e-3)

    def test_neighbor_limit_support(self):
        C = _C([[0, 0], [1, 0], [10, 0]], [0, 0, 1])
        post = class_posterior([0, 0], C, KernelParams(1.0, 2))
        assert post.support == (0, 1)
        assert post.probs == {0: 1.0}

    def test_neighbor_limit_too_large(self):
        C = _C([[0, 0]], [0])
        with pytest.raises(ConfigError):
            class_posterior([0, 0], C, KernelParams(1.0, 5))

    def test_empty_centers(self):
        C = LabeledSet([], np.zeros((0, 2)), [], dim=2)
        with pytest.raises(DataError):
            class_posterior([0, 0], C, KernelParams(1.0))

    @pytest.mark.parametrize("bad", [0.0, -1.0, float("inf"), float("nan")])
    def test_bad_sigma(self, bad):
        with pytest.raises(ConfigError):
            KernelParams(bad)

    @settings(max_examples=80, deadline=None)
    @given(
        st.integers(1, 4),
        st.integers(1, 12),
        st.floats(0.05, 500.0),
        st.integers(0, 2**31),
    )
    def test_sums_to_one_and_in_unit_interval(self, dim, n, sigma, seed):
        rng = np.random.default_rng(seed)
        C = _C(rng.normal(size=(n, dim)) * 10, rng.integers(0, 3, size=n))
        p = class_posterior(rng.normal(size=dim) * 10, C, KernelParams(sigma)).probs
        vals = np.array(list(p.values()))
        assert np.all((vals >= 0) & (vals <= 1))
        assert vals.sum() == pytest.approx(1.0, abs=1e-12)

    def test_matches_naive_on_moderate_instances(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            n, dim = int(rng.integers(1, 15)), int(rng.integers(1, 5))
            P, y = rng.normal(size=(n, dim)), rng.integers(0, 4, size=n)
            x, sigma = rng.normal(size=dim), float(rng.uniform(0.5, 3))
            got = class_posterior(x, _C(P, y), KernelParams(sigma)).probs
            want = naive_posterior(x, P, y, sigma)
            for k in want:
                assert got[k] == pytest.approx(want[k], abs=1e-12)


class TestClassify:
    def test_single_class(self):
        assert classify([3, 3], _C([[0, 0]], [7]), KernelParams(1.0)) == 7

    def test_argmax(self):
        assert classify([0, 0], _C([[0, 0], [2, 0]], [0, 1]), KernelParams(1.0)) == 0

    def test_tie_goes_to_smaller_label(self):
        C = _C([[-1, 0], [1, 0]], [5, 2])
        assert classify([0, 0], C, KernelParams(1.0)) == 2

    def test_batch_matches_single(self):
        rng = np.random.default_rng(2)
        C = _C(rng.normal(size=(20, 3)), rng.integers(0, 4, size=20))
        X = rng.normal(size=(15, 3))
        s = score_set(X, C, KernelParams(0.7))
        assert [int(s.classes[t]) for t in s.top] == [classify(x, C, KernelParams(0.7)) for x in X]


class TestInsert:
    def test_self_retrieval(self):
        C = _C([[0, 0], [1, 0]], [0, 1])
        insert_center(C, LabeledEmbedding(Embedding("new", [5.0, 5.0]), 9))
        assert classify([5, 5], C, KernelParams(1.0)) == 9

    def test_cardinality(self):
        C = _C(np.arange(10, dtype=float).reshape(5, 2), [0] * 5)
        insert_center(C, LabeledEmbedding(Embedding("new", [0.0, 0.0]), 1))
        assert len(C) == 6

    def test_far_insertion_barely_changes_posterior(self):
        sigma = 1.0
        C = _C([[0, 0], [1, 0]], [0, 1])
        x = [0.3, 0.0]
        before = class_posterior(x, C, KernelParams(sigma)).probs
        insert_center(C, LabeledEmbedding(Embedding("far", [20.5, 0.0]), 1))
        after = class_posterior(x, C, KernelParams(sigma)).probs
        for k in before:
            assert abs(after[k] - before[k]) < 1e-12
