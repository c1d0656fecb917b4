"""Novelty scores, the thresholded open-set decision and threshold calibration."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted, validate_data

from ._csvio import read_csv, write_csv
from ._validation import as_matrix, as_vector, check_neighbor_limit, check_sigma
from .embedding_space import LabeledSet, pairwise_sq_distances
from .exceptions import DataError
from .kernel import KernelParams, kernel_scores, score_set

NOVEL = -1


class NoveltyMeasure(str, enum.Enum):
    NN_DISTANCE = "nn_distance"
    DENSITY = "density"
    ENTROPY = "entropy"


def _nonempty(C: LabeledSet):
    if len(C) == 0:
        raise DataError("the labelled center set is empty")


def novelty_nn_distance(x, C: LabeledSet) -> float:
    """Distance from ``x`` to its closest center."""
    _nonempty(C)
    v = as_vector(x, dim=C.dim)
    return math.sqrt(float(pairwise_sq_distances(v[None, :], C.vectors).min()))


def novelty_density(x, C: LabeledSet, params: KernelParams) -> float:
    """One minus the largest class posterior."""
    _nonempty(C)
    return float(score_set(as_vector(x, dim=C.dim)[None, :], C, params).density_novelty[0])


def novelty_entropy(x, C: LabeledSet, params: KernelParams) -> float:
    """Shannon entropy (nats) of the class posterior."""
    _nonempty(C)
    return float(score_set(as_vector(x, dim=C.dim)[None, :], C, params).entropy[0])


def novelty_scores(X, C: LabeledSet, params: KernelParams | None, measure) -> np.ndarray:
    """Vectorised novelty score of every row of ``X``."""
    _nonempty(C)
    measure = NoveltyMeasure(measure)
    X = as_matrix(X, dim=C.dim)
    if measure is NoveltyMeasure.NN_DISTANCE:
        return np.sqrt(pairwise_sq_distances(X, C.vectors).min(axis=1))
    s = score_set(X, C, params)
    return s.density_novelty if measure is NoveltyMeasure.DENSITY else s.entropy


@dataclass(frozen=True)
class OpenSetPrediction:
    """Either a known label or the novel verdict (``label is None``)."""

    label: int | None
    novelty_score: float
    threshold_used: float

    @property
    def is_novel(self) -> bool:
        return self.label is None

    def __post_init__(self):
        if (self.novelty_score > self.threshold_used) != (self.label is None):
            raise ValueError("verdict must be novel exactly when the score exceeds the threshold")


def open_set_predict(x, C: LabeledSet, params: KernelParams, measure, delta: float) -> OpenSetPrediction:
    """Known label when the novelty score is at most ``delta``, novel otherwise."""
    _nonempty(C)
    v = as_vector(x, dim=C.dim)
    score = float(novelty_scores(v[None, :], C, params, measure)[0])
    if score > delta:
        return OpenSetPrediction(None, score, float(delta))
    s = score_set(v[None, :], C, params)
    return OpenSetPrediction(int(s.classes[s.top[0]]), score, float(delta))


def threshold_candidates(scores) -> np.ndarray:
    """Midpoints between consecutive distinct scores, bracketed by -inf and +inf."""
    u = np.unique(np.asarray(scores, dtype=np.float64))
    mids = u[:-1] + (u[1:] - u[:-1]) / 2.0
    # adjacent floats: rounding up would put the upper score on the known side
    mids = np.where(mids >= u[1:], u[:-1], mids)
    return np.concatenate([[-np.inf], mids, [np.inf]])


def _f1_counts(tp, fp, fn):
    denom = 2 * tp + fp + fn
    return np.where(denom > 0, 2.0 * tp / np.maximum(denom, 1), 0.0)


def calibrate_threshold(scores, is_novel, objective: str = "max_f1") -> float:
    """Threshold that maximises novelty-detection F1 on ``scores``.

    Candidates come from :func:`threshold_candidates`; among equally good
    candidates the smallest one is returned.
    """
    if objective != "max_f1":
        raise ValueError(f"unsupported objective {objective!r}")
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(is_novel, dtype=bool)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError("scores and is_novel must be 1-D and of equal length")
    if y.all() or not y.any():
        raise DataError("calibration needs at least one novel and one known example")
    cand = threshold_candidates(s)
    # predicted novel = score > delta; count positives above every candidate
    pos = np.sort(s[y])
    neg = np.sort(s[~y])
    tp = pos.size - np.searchsorted(pos, cand, side="right")
    fp = neg.size - np.searchsorted(neg, cand, side="right")
    fn = pos.size - tp
    f1 = _f1_counts(tp, fp, fn)
    return float(cand[int(np.argmax(f1))])


class OpenSetClassifier(ClassifierMixin, BaseEstimator):
    """Kernel classifier that rejects inputs whose novelty score exceeds a threshold.

    ``predict`` returns :data:`NOVEL` (``-1``) for rejected inputs. The
    threshold is either fixed through ``threshold`` or learned with
    :meth:`calibrate` on held-out data with known novelty flags.
    """

    def __init__(self, sigma=1.0, neighbor_limit="all", measure="nn_distance", threshold=None):
        self.sigma = sigma
        self.neighbor_limit = neighbor_limit
        self.measure = measure
        self.threshold = threshold

    def fit(self, X, y):
        X, y = validate_data(self, X, y, dtype=np.float64)
        check_sigma(self.sigma)
        check_neighbor_limit(self.neighbor_limit)
        NoveltyMeasure(self.measure)
        self.centers_ = X.copy()
        self.center_labels_ = np.asarray(y)
        self.classes_ = np.unique(self.center_labels_)
        if self.threshold is not None:
            self.threshold_ = float(self.threshold)
        return self

    def _center_set(self) -> LabeledSet:
        return LabeledSet([str(i) for i in range(len(self.centers_))], self.centers_, self.center_labels_)

    def novelty_score(self, X):
        """Higher means more novel."""
        check_is_fitted(self)
        X = validate_data(self, X, dtype=np.float64, reset=False)
        params = KernelParams(self.sigma, self.neighbor_limit)
        return novelty_scores(X, self._center_set(), params, self.measure)

    def calibrate(self, X, is_novel):
        self.threshold_ = calibrate_threshold(self.novelty_score(X), is_novel)
        return self

    def predict(self, X):
        check_is_fitted(self, "threshold_")
        X = validate_data(self, X, dtype=np.float64, reset=False)
        limit = check_neighbor_limit(self.neighbor_limit, len(self.centers_))
        s = kernel_scores(X, self.centers_, self.center_labels_, self.sigma, limit, self.classes_)
        labels = self.classes_[s.top].astype(np.int64)
        return np.where(self.novelty_score(X) > self.threshold_, NOVEL, labels)


SCORE_DUMP_HEADER = ("id", "score", "is_novel")


def format_score_dump(ids, scores, is_novel, comment=None) -> str:
    rows = [(i, repr(float(s)), int(bool(n))) for i, s, n in zip(ids, scores, is_novel)]
    return write_csv(SCORE_DUMP_HEADER, rows, comment)


def parse_score_dump(text) -> tuple[list, np.ndarray, np.ndarray]:
    """Inverse of :func:`format_score_dump`: ``(ids, scores, is_novel)``."""
    _, rows = read_csv(text, SCORE_DUMP_HEADER)
    try:
        return (
            [r[0] for r in rows],
            np.array([float(r[1]) for r in rows]),
            np.array([bool(int(r[2])) for r in rows]),
        )
    except (IndexError, ValueError) as exc:
        raise DataError(f"malformed score dump: {exc}") from None
