import numpy as np
import pytest

from openset_al.embedding_space import format_embedding_file
from openset_al.evaluation import auroc
from openset_al.exceptions import ConfigError
from openset_al.kernel import KernelParams
from openset_al.open_set import novelty_scores
from openset_al.pseudo_label import select_k
from openset_al.synthetic import MixtureConfig, generate_mixture, preset


def _nn_auroc(split):
    s = novelty_scores(split.observed.vectors, split.train, KernelParams(1.0), "nn_distance")
    return auroc(s, split.observed.reveal_is_novel())


class TestGenerator:
    def test_sizes_and_balance(self):
        split = generate_mixture(preset("separable", seed=0))
        for pool in (split.observed, split.test):
            nov = pool.reveal_is_novel()
            assert abs(int(nov.sum()) - int((~nov).sum())) <= 1
        # known classes keep all 50 members; novel classes only fill the pools
        assert (len(split.train), len(split.observed), len(split.test)) == (250, 240, 260)
        assert split.known_classes == frozenset(range(10))

    def test_byte_identical(self):
        a = generate_mixture(preset("separable", seed=5))
        b = generate_mixture(preset("separable", seed=5))
        for x, y in ((a.train, b.train), (a.observed, b.observed), (a.test, b.test)):
            assert format_embedding_file(x) == format_embedding_file(y)

    def test_seeds_differ(self):
        a = generate_mixture(preset("separable", seed=1))
        b = generate_mixture(preset("separable", seed=2))
        assert not np.array_equal(a.train.vectors, b.train.vectors)

    def test_zero_noise_is_perfectly_separable(self):
        split = generate_mixture(preset("separable", seed=0, within_class_std=0.0))
        assert _nn_auroc(split) == 1.0

    @pytest.mark.parametrize("seed", range(3))
    def test_shrinking_noise_never_hurts(self, seed):
        values = [_nn_auroc(generate_mixture(preset("hard", seed=seed, within_class_std=s))) for s in (40.0, 20.0, 5.0)]
        assert values[0] <= values[1] <= values[2]

    @pytest.mark.parametrize(
        "bad", [dict(n_classes=1), dict(dim=0), dict(per_class_count=2), dict(fraction_known=0.0), dict(within_class_std=-1)]
    )
    def test_bad_config(self, bad):
        with pytest.raises(ConfigError):
            MixtureConfig(**bad)

    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            preset("nope")


@pytest.mark.slow
def test_k_recovery_wide_grid():
    hits = 0
    for seed in range(10):
        split = generate_mixture(preset("separable", seed=seed))
        nov = split.observed.reveal_is_novel()
        k, _ = select_k(split.observed.vectors[nov], range(2, 31), seed=seed)
        hits += k == 10
    assert hits >= 8
