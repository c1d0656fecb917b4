"""Gaussian-kernel class posterior over a set of labelled centers.

Every labelled center carries an isotropic Gaussian kernel with one shared
standard deviation ``sigma``. The probability of class ``l`` at ``x`` is the
kernel mass of the class-``l`` centers divided by the total kernel mass, both
taken over the neighbour set ``S`` (all centers by default).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted, validate_data

from ._validation import as_matrix, as_vector, check_neighbor_limit, check_sigma
from .embedding_space import LabeledEmbedding, LabeledSet, argsort_rows, pairwise_sq_distances
from .exceptions import DataError


@dataclass(frozen=True)
class KernelParams:
    """Shared kernel width and neighbour-set size (``"all"`` or a positive int)."""

    sigma: float = 1.0
    neighbor_limit: int | str = "all"

    def __post_init__(self):
        object.__setattr__(self, "sigma", check_sigma(self.sigma))
        limit = check_neighbor_limit(self.neighbor_limit)
        object.__setattr__(self, "neighbor_limit", "all" if limit is None else limit)

    def limit_for(self, n_centers: int) -> int | None:
        return check_neighbor_limit(self.neighbor_limit, n_centers)


@dataclass(frozen=True)
class ClassPosterior:
    probs: dict
    support: tuple

    def argmax(self) -> int:
        # dict keys are inserted in ascending label order, so max() keeps the smallest on ties
        return max(self.probs, key=self.probs.__getitem__)


@dataclass
class KernelScores:
    """Posterior quantities for a batch of queries against one center set.

    ``log_probs[i, l]`` is ``-inf`` where class ``classes[l]`` has no center in
    the neighbour set of query ``i`` (``present`` is then False) or where its
    kernel mass underflows relative to the dominant class.
    """

    classes: np.ndarray
    log_probs: np.ndarray
    present: np.ndarray
    top: np.ndarray
    density_novelty: np.ndarray

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs)

    @property
    def entropy(self) -> np.ndarray:
        p = self.probs
        with np.errstate(invalid="ignore"):
            terms = np.where(p > 0, p * self.log_probs, 0.0)
        return np.maximum(-terms.sum(axis=1), 0.0)


def log_kernel(sq_dist, sigma):
    return -np.asarray(sq_dist) / (2.0 * sigma * sigma)


def kernel_scores(X, centers, labels, sigma, neighbor_limit=None, classes=None) -> KernelScores:
    """Evaluate the class posterior for each row of ``X``.

    All kernels of a query are shifted by their largest exponent before
    exponentiation, so the dominant class always keeps a mass of at least 1 and
    the normaliser cannot underflow. ``1 - max_l p_l`` is accumulated from the
    non-dominant classes directly rather than by subtraction.
    """
    X = np.asarray(X, dtype=np.float64)
    return kernel_scores_from_sq(pairwise_sq_distances(X, centers), labels, sigma, neighbor_limit, classes)


def kernel_scores_from_sq(sq_dist, labels, sigma, neighbor_limit=None, classes=None) -> KernelScores:
    """:func:`kernel_scores` on a precomputed (queries x centers) squared-distance matrix."""
    labels = np.asarray(labels)
    if classes is None:
        classes = np.unique(labels)
    A = log_kernel(sq_dist, sigma)
    in_support = np.ones(A.shape, dtype=bool)
    if neighbor_limit is not None and neighbor_limit < A.shape[1]:
        in_support[:] = False
        np.put_along_axis(in_support, argsort_rows(-A, neighbor_limit), True, axis=1)
        A = np.where(in_support, A, -np.inf)
    E = np.exp(A - A.max(axis=1, keepdims=True))

    n, L = A.shape[0], len(classes)
    mass = np.zeros((n, L))
    present = np.zeros((n, L), dtype=bool)
    for j, c in enumerate(classes):
        cols = labels == c
        mass[:, j] = E[:, cols].sum(axis=1)
        present[:, j] = in_support[:, cols].any(axis=1)

    rows = np.arange(n)
    top = np.argmax(mass, axis=1)
    top_mass = mass[rows, top]
    others = mass.copy()
    others[rows, top] = 0.0
    rest = others.sum(axis=1)
    ratio = rest / top_mass
    with np.errstate(divide="ignore"):
        log_probs = np.log(mass) - (np.log(top_mass) + np.log1p(ratio))[:, None]
    log_probs[rows, top] = -np.log1p(ratio)
    density_novelty = rest / (top_mass + rest)
    return KernelScores(np.asarray(classes), log_probs, present, top, density_novelty)


def score_set(X, C: LabeledSet, params: KernelParams) -> KernelScores:
    if len(C) == 0:
        raise DataError("the labelled center set is empty")
    X = as_matrix(X, dim=C.dim)
    return kernel_scores(X, C.vectors, C.labels, params.sigma, params.limit_for(len(C)))


def class_posterior(x, C: LabeledSet, params: KernelParams) -> ClassPosterior:
    """Posterior over the classes present in the neighbour set of ``x``."""
    if len(C) == 0:
        raise DataError("the labelled center set is empty")
    v = as_vector(x, dim=C.dim)
    s = score_set(v[None, :], C, params)
    limit = params.limit_for(len(C))
    if limit is None:
        support = tuple(range(len(C)))
    else:
        d2 = pairwise_sq_distances(v[None, :], C.vectors)
        support = tuple(int(i) for i in argsort_rows(d2, limit)[0])
    probs = {int(c): float(p) for c, p, ok in zip(s.classes, s.probs[0], s.present[0]) if ok}
    return ClassPosterior(probs, support)


def classify(x, C: LabeledSet, params: KernelParams) -> int:
    """Most probable class; the smallest label wins an exact tie."""
    s = score_set(as_vector(x, dim=C.dim if len(C) else None)[None, :], C, params)
    return int(s.classes[s.top[0]])


def insert_center(C: LabeledSet, item: LabeledEmbedding) -> LabeledSet:
    """Append ``item`` to ``C`` in place and return ``C``."""
    C.append(item)
    return C


class KernelDensityClassifier(ClassifierMixin, BaseEstimator):
    """Classifier that places a Gaussian kernel on every training embedding.

    Parameters
    ----------
    sigma : float, default=1.0
        Shared kernel standard deviation, in embedding-space distance units.
    neighbor_limit : int or "all", default="all"
        Number of nearest centers whose kernels enter the posterior.

    Attributes
    ----------
    centers_ : ndarray of shape (n_centers, n_features)
    center_labels_ : ndarray of shape (n_centers,)
    classes_ : ndarray of shape (n_classes,)
    """

    def __init__(self, sigma=1.0, neighbor_limit="all"):
        self.sigma = sigma
        self.neighbor_limit = neighbor_limit

    def fit(self, X, y):
        X, y = validate_data(self, X, y, dtype=np.float64)
        self._check_params()
        self.centers_ = X.copy()
        self.center_labels_ = np.asarray(y)
        self.classes_ = np.unique(self.center_labels_)
        return self

    def partial_fit(self, X, y):
        """Add centers; the first call behaves like :meth:`fit`."""
        if not hasattr(self, "centers_"):
            return self.fit(X, y)
        X, y = validate_data(self, X, y, dtype=np.float64, reset=False)
        self.centers_ = np.vstack([self.centers_, X])
        self.center_labels_ = np.concatenate([self.center_labels_, np.asarray(y)])
        self.classes_ = np.unique(self.center_labels_)
        return self

    def _check_params(self):
        check_sigma(self.sigma)
        check_neighbor_limit(self.neighbor_limit)

    def kernel_scores(self, X) -> KernelScores:
        check_is_fitted(self)
        X = validate_data(self, X, dtype=np.float64, reset=False)
        limit = check_neighbor_limit(self.neighbor_limit, len(self.centers_))
        return kernel_scores(X, self.centers_, self.center_labels_, check_sigma(self.sigma), limit, self.classes_)

    def predict_log_proba(self, X):
        return self.kernel_scores(X).log_probs

    def predict_proba(self, X):
        return self.kernel_scores(X).probs

    def predict(self, X):
        s = self.kernel_scores(X)
        return self.classes_[s.top]

    def to_labeled_set(self, ids=None) -> LabeledSet:
        check_is_fitted(self)
        if ids is None:
            ids = [f"c{i}" for i in range(len(self.centers_))]
        return LabeledSet(ids, self.centers_, self.center_labels_)
