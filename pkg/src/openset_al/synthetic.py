"""Seeded Gaussian-mixture embeddings with a known/novel class structure.

Class centers are uniform in the hypercube ``[0, spread]^dim``; members are
isotropic Gaussian around their center. Known classes (the first
``ceil(fraction_known * n_classes)`` labels) are split into train, observed
and test members; novel classes only populate observed and test, sized so
that both pools hold as many novel as known members.

Every random draw comes from a PCG64 stream spawned off one
``SeedSequence(seed)``: stream 0 places centers, stream ``1 + c`` draws the
members of class ``c``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .embedding_space import DatasetSplit, LabeledSet, _first_known, build_split
from .exceptions import ConfigError


@dataclass(frozen=True)
class MixtureConfig:
    n_classes: int = 20
    dim: int = 16
    per_class_count: int = 50
    class_center_spread: float = 100.0
    within_class_std: float = 1.0
    fraction_known: float = 0.5
    seed: int = 0
    train_fraction: float = 0.5

    def __post_init__(self):
        if self.n_classes < 2:
            raise ConfigError("n_classes must be at least 2")
        if self.dim < 1:
            raise ConfigError("dim must be positive")
        if self.per_class_count < 3:
            raise ConfigError("per_class_count must be at least 3 (train, observed and test)")
        if not self.class_center_spread > 0:
            raise ConfigError("class_center_spread must be positive")
        if not self.within_class_std >= 0:
            raise ConfigError("within_class_std must be non-negative")
        if not 0 < self.fraction_known <= 1:
            raise ConfigError("fraction_known must be in (0, 1]")
        if not 0 < self.train_fraction < 1:
            raise ConfigError("train_fraction must be in (0, 1)")

    @property
    def separable(self) -> bool:
        return self.within_class_std < self.class_center_spread

    def to_dict(self) -> dict:
        return asdict(self)


PRESETS = {
    "separable": dict(n_classes=20, dim=16, per_class_count=50, class_center_spread=100.0, within_class_std=1.0),
    "hard": dict(n_classes=20, dim=16, per_class_count=50, class_center_spread=100.0, within_class_std=20.0),
    "three_blob": dict(n_classes=3, dim=2, per_class_count=40, class_center_spread=100.0, within_class_std=1.0),
}
# kernel width paired with each preset
PRESET_SIGMA = {"separable": 20.0, "hard": 20.0, "three_blob": 10.0}


def preset(name: str, seed: int = 0, **overrides) -> MixtureConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return MixtureConfig(**{**PRESETS[name], "seed": seed, **overrides})


def _spread_evenly(total: int, parts: int) -> list[int]:
    base, extra = divmod(total, parts)
    return [base + (1 if i < extra else 0) for i in range(parts)]


def generate_mixture(cfg: MixtureConfig) -> DatasetSplit:
    """Draw a dataset and split it into train / observed / test."""
    classes = list(range(cfg.n_classes))
    known = _first_known(classes, cfg.fraction_known)
    novel = classes[len(known):]

    n_train = int(round(cfg.train_fraction * cfg.per_class_count))
    n_obs = (cfg.per_class_count - n_train) // 2
    n_test = cfg.per_class_count - n_train - n_obs
    if n_train < 1 or n_obs < 1 or n_test < 1:
        raise ConfigError("per_class_count and train_fraction leave an empty train/observed/test part")
    roles = {c: ["train"] * n_train + ["observed"] * n_obs + ["test"] * n_test for c in known}
    if novel:
        obs_counts = _spread_evenly(n_obs * len(known), len(novel))
        test_counts = _spread_evenly(n_test * len(known), len(novel))
        for c, o, t in zip(novel, obs_counts, test_counts):
            roles[c] = ["observed"] * o + ["test"] * t

    streams = np.random.SeedSequence(cfg.seed).spawn(1 + cfg.n_classes)
    center_rng = np.random.Generator(np.random.PCG64(streams[0]))
    centers = center_rng.uniform(0.0, cfg.class_center_spread, size=(cfg.n_classes, cfg.dim))

    vectors, labels, role = [], [], []
    for c in classes:
        rng = np.random.Generator(np.random.PCG64(streams[1 + c]))
        n = len(roles[c])
        vectors.append(centers[c] + cfg.within_class_std * rng.standard_normal((n, cfg.dim)))
        labels += [c] * n
        # seeded shuffle decides which members land in which part
        role += [roles[c][i] for i in rng.permutation(n)]
    width = max(4, int(math.log10(max(1, len(labels)))) + 1)
    ids = [f"e{i:0{width}d}" for i in range(len(labels))]
    data = LabeledSet(ids, np.vstack(vectors), labels)
    return build_split(data, role, known, novel)
