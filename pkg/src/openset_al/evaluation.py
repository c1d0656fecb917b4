"""Novelty-detection and recognition metrics.

Novel examples are the positive class throughout: a higher novelty score
should mean "more likely novel".
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

from ._csvio import read_csv, write_csv
from .embedding_space import argsort_rows, pairwise_sq_distances
from .exceptions import DataError
from .open_set import NOVEL, OpenSetPrediction


@dataclass(frozen=True)
class ScoredExample:
    id: str
    novelty_score: float
    is_novel: bool
    true_label: int | None = None
    predicted: OpenSetPrediction | None = None


def _unpack(scores, is_novel):
    if is_novel is None:
        items = list(scores)
        s = np.array([e.novelty_score for e in items], dtype=np.float64)
        y = np.array([e.is_novel for e in items], dtype=bool)
    else:
        s = np.asarray(scores, dtype=np.float64).ravel()
        y = np.asarray(is_novel, dtype=bool).ravel()
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    if s.size == 0:
        raise DataError("no scored examples")
    if not np.all(np.isfinite(s)):
        raise DataError("novelty scores must be finite")
    return s, y


def auroc(scores, is_novel=None) -> float:
    """Probability that a random novel example outscores a random known one.

    Ties count one half. Accepts ``(scores, is_novel)`` arrays or a sequence
    of :class:`ScoredExample`.
    """
    s, y = _unpack(scores, is_novel)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("AUROC needs at least one novel and one known example")
    ranks = rankdata(s, method="average")
    # rank sums of average ranks are exact half-integers
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def _pr_blocks(s, y):
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    starts = np.flatnonzero(np.r_[True, s[1:] != s[:-1]])
    pos_in_block = np.add.reduceat(y.astype(np.int64), starts)
    size = np.diff(np.r_[starts, s.size])
    return s[starts], pos_in_block, size


def aupr(scores, is_novel=None) -> float:
    """Average precision with novel as the positive class.

    Examples sharing a score are admitted together as one block, so the
    result does not depend on how ties happen to be ordered.
    """
    s, y = _unpack(scores, is_novel)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise DataError("AUPR needs at least one novel example")
    _, pos_in_block, size = _pr_blocks(s, y)
    precision = np.cumsum(pos_in_block) / np.cumsum(size)
    terms = (pos_in_block / n_pos) * precision
    # cumsum adds strictly left to right
    return float(np.cumsum(terms)[-1])


def roc_curve_points(scores, is_novel=None) -> np.ndarray:
    """ROC polyline as rows ``(false positive rate, true positive rate)``."""
    s, y = _unpack(scores, is_novel)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise DataError("ROC needs at least one novel and one known example")
    _, pos_in_block, size = _pr_blocks(s, y)
    tp = np.r_[0, np.cumsum(pos_in_block)]
    fp = np.r_[0, np.cumsum(size - pos_in_block)]
    return np.column_stack([fp / n_neg, tp / n_pos])


def pr_curve_points(scores, is_novel=None) -> np.ndarray:
    """Precision-recall points as rows ``(recall, precision)``, one per score block."""
    s, y = _unpack(scores, is_novel)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise DataError("PR curve needs at least one novel example")
    _, pos_in_block, size = _pr_blocks(s, y)
    tp = np.cumsum(pos_in_block)
    return np.column_stack([tp / n_pos, tp / np.cumsum(size)])


def f1_at_threshold(scores, is_novel=None, delta: float = 0.0) -> float:
    """F1 of the rule "novel when score > delta"; 0 when nothing is right."""
    s, y = _unpack(scores, is_novel)
    pred = s > delta
    tp = int(np.sum(pred & y))
    fp = int(np.sum(pred & ~y))
    fn = int(np.sum(~pred & y))
    denom = 2 * tp + fp + fn
    return 2.0 * tp / denom if denom else 0.0


def open_set_accuracy(predicted, true_labels=None, is_novel=None) -> float:
    """Accuracy with every novel class collapsed into one "novel" class.

    ``predicted`` is either a sequence of ``(OpenSetPrediction, true_label,
    is_novel)`` triples, or an array of labels using :data:`NOVEL` for the
    novel verdict together with ``true_labels`` and ``is_novel``.
    """
    if true_labels is None:
        triples = list(predicted)
        pred = np.array([NOVEL if p.is_novel else p.label for p, _, _ in triples], dtype=np.int64)
        true = np.array([t for _, t, _ in triples], dtype=np.int64)
        nov = np.array([n for _, _, n in triples], dtype=bool)
    else:
        pred = np.asarray(predicted, dtype=np.int64)
        true = np.asarray(true_labels, dtype=np.int64)
        nov = np.asarray(is_novel, dtype=bool)
    if pred.size == 0:
        raise DataError("no predictions to score")
    correct = np.where(nov, pred == NOVEL, pred == true)
    return float(correct.mean())


def closed_accuracy(y_true, y_pred, vocabulary=None) -> float:
    """Plain label accuracy; 0.0 for an empty subset.

    ``vocabulary`` is the label space of the task. A true label outside it
    means the evaluation was wired to the wrong data and raises.
    """
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise ValueError("y_true and y_pred differ in length")
    if vocabulary is not None:
        outside = set(np.unique(y_true).tolist()) - {int(v) for v in vocabulary}
        if outside:
            raise DataError(f"true labels {sorted(outside)} are outside the vocabulary")
    if y_true.size == 0:
        return 0.0
    return float(np.mean(y_true == y_pred))


def recall_at_m(X, labels, m: int, query_mask=None) -> float:
    """Fraction of queries with a same-label example among their ``m`` nearest neighbours.

    Each point is excluded from its own neighbour list; equal distances are
    broken by index. ``query_mask`` restricts which points act as queries
    while the whole space remains searchable.
    """
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels)
    n = X.shape[0]
    if n < 2:
        raise DataError("Recall@m needs at least two examples")
    if not 1 <= m < n:
        raise ValueError(f"m must be in [1, {n - 1}], got {m}")
    queries = np.arange(n) if query_mask is None else np.flatnonzero(np.asarray(query_mask, dtype=bool))
    if queries.size == 0:
        raise DataError("no query examples for Recall@m")
    D = pairwise_sq_distances(X[queries], X)
    D[np.arange(queries.size), queries] = np.inf
    nbrs = argsort_rows(D, m)
    hit = (labels[nbrs] == labels[queries][:, None]).any(axis=1)
    return float(hit.mean())


@dataclass
class MetricsReport:
    auroc: float
    aupr: float
    f1: float
    open_set_accuracy: float
    novel_accuracy: float | None = None
    combined_accuracy: float | None = None
    recall_at_m: dict = field(default_factory=dict)

    def __post_init__(self):
        for name, value in asdict(self).items():
            values = value.values() if isinstance(value, dict) else [value]
            if any(v is not None and not 0.0 <= v <= 1.0 for v in values):
                raise ValueError(f"{name} outside [0, 1]: {value}")

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None and v != {}}


def format_curve_csv(points, comment=None) -> str:
    """Curve points as ``x,y`` CSV rows."""
    return write_csv(("x", "y"), [(repr(float(x)), repr(float(y))) for x, y in points], comment)


def parse_curve_csv(text) -> np.ndarray:
    _, rows = read_csv(text, ("x", "y"))
    try:
        return np.array([[float(x), float(y)] for x, y in rows]).reshape(-1, 2)
    except ValueError as exc:
        raise DataError(f"malformed curve file: {exc}") from None
