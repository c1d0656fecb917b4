"""Zero-budget pseudo-labels: k-means++ seeding, Lloyd iterations and
silhouette-driven choice of the number of clusters."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_is_fitted, validate_data

from ._csvio import read_csv, write_csv
from ._validation import as_matrix
from .embedding_space import UnlabeledPool, pairwise_sq_distances
from .exceptions import DataError, InvariantViolation


@dataclass
class Clustering:
    k: int
    centroids: np.ndarray
    assignment: np.ndarray
    inertia: float
    n_iter: int = 0
    inertia_history: list = field(default_factory=list)

    def __post_init__(self):
        if self.assignment.size and (self.assignment.min() < 0 or self.assignment.max() >= self.k):
            raise InvariantViolation("cluster id out of range")
        if np.bincount(self.assignment, minlength=self.k).min() == 0:
            raise InvariantViolation("returned clustering has an empty cluster")
        if self.inertia < 0:
            raise InvariantViolation("negative inertia")


def _rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(seed))


def kmeans_pp_init(points, k: int, seed=0, return_indices: bool = False):
    """Pick ``k`` initial centroids by D^2 sampling.

    The first centroid is a uniformly drawn point; each further one is drawn
    with probability proportional to the squared distance to the nearest
    centroid chosen so far.
    """
    X = as_matrix(points, name="points")
    n = X.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    rng = _rng(seed)
    chosen = [int(rng.integers(n))]
    closest = pairwise_sq_distances(X, X[chosen[0]][None, :])[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            raise DataError(f"fewer than {k} distinct points")
        idx = int(rng.choice(n, p=closest / total))
        chosen.append(idx)
        closest = np.minimum(closest, pairwise_sq_distances(X, X[idx][None, :])[:, 0])
    centroids = X[chosen].copy()
    return (centroids, np.asarray(chosen)) if return_indices else centroids


def _assign(X, centroids):
    d2 = pairwise_sq_distances(X, centroids)
    a = np.argmin(d2, axis=1)
    return a, d2[np.arange(X.shape[0]), a]


def lloyd(X, centroids, max_iter: int = 300, tol: float = 1e-9) -> Clustering:
    """Lloyd iterations from the given centroids.

    Stops when the assignment no longer changes, the inertia improves by less
    than ``tol``, or after ``max_iter`` iterations. A cluster that loses all
    of its points is re-seeded at the point farthest from its centroid.
    ``inertia_history`` holds the inertia after every assignment step.
    """
    X = np.asarray(X, dtype=np.float64)
    centroids = np.array(centroids, dtype=np.float64)
    k = centroids.shape[0]
    assignment, d2 = _assign(X, centroids)
    _repair_empty(X, centroids, assignment, d2)
    history = [float(d2.sum())]
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        for j in range(k):
            centroids[j] = X[assignment == j].mean(axis=0)
        new_assignment, d2 = _assign(X, centroids)
        _repair_empty(X, centroids, new_assignment, d2)
        inertia = float(d2.sum())
        improvement = history[-1] - inertia
        history.append(inertia)
        changed = not np.array_equal(new_assignment, assignment)
        assignment = new_assignment
        if not changed or improvement < tol:
            break
    return Clustering(k, centroids, assignment, history[-1], n_iter, history)


def _repair_empty(X, centroids, assignment, d2):
    k = centroids.shape[0]
    while True:
        counts = np.bincount(assignment, minlength=k)
        empty = np.flatnonzero(counts == 0)
        if empty.size == 0:
            return
        # only points whose cluster keeps another member may move
        movable = counts[assignment] > 1
        if not movable.any():
            raise DataError(f"fewer than {k} distinct points")
        far = int(np.argmax(np.where(movable, d2, -1.0)))
        centroids[empty[0]] = X[far]
        assignment[far] = empty[0]
        d2[far] = 0.0


def kmeans(points, k: int, seed=0, max_iter: int = 300, tol: float = 1e-9) -> Clustering:
    X = as_matrix(points, name="points")
    return lloyd(X, kmeans_pp_init(X, k, seed), max_iter, tol)


def silhouette_samples(points, assignment) -> np.ndarray:
    X = as_matrix(points, name="points")
    a_lab = np.asarray(assignment)
    labels, inv = np.unique(a_lab, return_inverse=True)
    if labels.size < 2:
        raise DataError("silhouette needs at least two clusters")
    D = np.sqrt(pairwise_sq_distances(X, X))
    counts = np.bincount(inv)
    # per-point sum of distances to every cluster
    sums = np.stack([D[:, inv == j].sum(axis=1) for j in range(labels.size)], axis=1)
    rows = np.arange(X.shape[0])
    own = counts[inv]
    a = np.where(own > 1, sums[rows, inv] / np.maximum(own - 1, 1), 0.0)
    means = sums / counts[None, :]
    means[rows, inv] = np.inf
    b = means.min(axis=1)
    denom = np.maximum(a, b)
    with np.errstate(invalid="ignore", divide="ignore"):
        s = np.where(denom > 0, (b - a) / denom, 0.0)
    return np.where(own > 1, s, 0.0)


def silhouette_score(points, assignment) -> float:
    """Mean silhouette; points in singleton clusters contribute 0."""
    return float(np.mean(silhouette_samples(points, assignment)))


def select_k(points, k_candidates, seed=0, n_init: int = 5, max_iter: int = 300, tol: float = 1e-9, on_run=None):
    """Return ``(best_k, clustering)`` maximising the silhouette over ``k_candidates``.

    For each candidate, ``n_init`` k-means runs from independent seeds are
    made and the lowest-inertia one is kept. Ties on the silhouette go to the
    smallest ``k``. ``on_run(k, clustering)``, if given, sees every run.
    """
    X = as_matrix(points, name="points")
    cands = sorted({int(k) for k in k_candidates})
    if not cands:
        raise ValueError("no candidate k values")
    if cands[0] < 2 or cands[-1] > X.shape[0]:
        raise ValueError(f"candidates must lie in [2, {X.shape[0]}], got {cands}")
    best = None
    for k in cands:
        streams = np.random.SeedSequence([int(seed), k]).spawn(n_init)
        runs = [lloyd(X, kmeans_pp_init(X, k, np.random.Generator(np.random.PCG64(ss))), max_iter, tol) for ss in streams]
        if on_run is not None:
            for c in runs:
                on_run(k, c)
        run = min(runs, key=lambda c: c.inertia)
        score = silhouette_score(X, run.assignment)
        if best is None or score > best[0]:
            best = (score, k, run)
    return best[1], best[2]


def generate_pseudo_labels(
    pool: UnlabeledPool, k_candidates, seed=0, offset: int | None = None, n_init: int = 5, return_clustering: bool = False
):
    """Map each pool id to a pseudo-label.

    Cluster ids are shifted by ``offset`` (default: one past the largest
    known class) so pseudo-labels never collide with known labels. With
    ``return_clustering`` the winning ``(k, Clustering)`` is returned too.
    """
    if len(pool) < max(k_candidates):
        raise DataError(f"pool of {len(pool)} is smaller than the largest candidate k")
    if offset is None:
        offset = max(pool.known_classes, default=-1) + 1
    if any(offset <= c < offset + max(k_candidates) for c in pool.known_classes):
        raise ValueError("offset lets pseudo-labels collide with known classes")
    k, clustering = select_k(pool.vectors, k_candidates, seed, n_init)
    mapping = {i: int(offset + a) for i, a in zip(pool.ids, clustering.assignment)}
    return (mapping, k, clustering) if return_clustering else mapping


def format_pseudo_labels(mapping: dict, comment=None) -> str:
    return write_csv(("id", "pseudo_label"), [(i, lab) for i, lab in mapping.items()], comment)


def parse_pseudo_labels(text) -> dict:
    _, rows = read_csv(text, ("id", "pseudo_label"))
    try:
        return {r[0]: int(r[1]) for r in rows}
    except (IndexError, ValueError) as exc:
        raise DataError(f"malformed pseudo-label file: {exc}") from None


class KMeansPP(ClusterMixin, BaseEstimator):
    """k-means with k-means++ seeding and a per-iteration inertia record."""

    def __init__(self, n_clusters=8, n_init=5, max_iter=300, tol=1e-9, random_state=0):
        self.n_clusters = n_clusters
        self.n_init = n_init
        self.max_iter = max_iter
        self.tol = tol
        self.random_state = random_state

    def fit(self, X, y=None):
        X = validate_data(self, X, dtype=np.float64)
        streams = np.random.SeedSequence([int(self.random_state), self.n_clusters]).spawn(self.n_init)
        runs = [
            lloyd(X, kmeans_pp_init(X, self.n_clusters, np.random.Generator(np.random.PCG64(ss))), self.max_iter, self.tol)
            for ss in streams
        ]
        self._store(min(runs, key=lambda c: c.inertia))
        return self

    def _store(self, c: Clustering):
        self.cluster_centers_ = c.centroids
        self.labels_ = c.assignment
        self.inertia_ = c.inertia
        self.n_iter_ = c.n_iter
        self.inertia_history_ = c.inertia_history

    def predict(self, X):
        check_is_fitted(self)
        X = validate_data(self, X, dtype=np.float64, reset=False)
        return _assign(X, self.cluster_centers_)[0]


class SilhouetteKMeans(ClusterMixin, BaseEstimator):
    """k-means whose ``n_clusters_`` is chosen from ``k_candidates`` by silhouette."""

    def __init__(self, k_candidates=(2, 3, 4, 5), n_init=5, max_iter=300, tol=1e-9, random_state=0):
        self.k_candidates = k_candidates
        self.n_init = n_init
        self.max_iter = max_iter
        self.tol = tol
        self.random_state = random_state

    def fit(self, X, y=None):
        X = validate_data(self, X, dtype=np.float64)
        k, c = select_k(X, self.k_candidates, self.random_state, self.n_init, self.max_iter, self.tol)
        self.n_clusters_ = k
        KMeansPP._store(self, c)
        self.silhouette_ = silhouette_score(X, c.assignment)
        return self

    predict = KMeansPP.predict
