"""Budgeted open-set query selection with a simulated label oracle.

The learner repeatedly scores every remaining observation, asks the oracle
for the label of the best one, adds it to the labelled center set and drops
it from the pool. The default strategy ranks observations by their
unlabelled-to-labelled density ratio (ULDR): kernel mass from the other
unlabelled points over kernel mass from the labelled centers, so dense
clusters far from anything labelled are queried first.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from ._validation import as_matrix
from .embedding_space import DatasetSplit, Embedding, LabeledEmbedding, LabeledSet, UnlabeledPool, pairwise_sq_distances
from .evaluation import closed_accuracy
from .exceptions import DataError, InvariantViolation, OracleError
from .kernel import KernelParams, kernel_scores_from_sq, log_kernel


class StrategyKind(str, enum.Enum):
    ULDR = "uldr"
    RANDOM = "random"
    FNN = "fnn"
    KDE = "kde"
    ENTROPY = "entropy"


@dataclass
class QueryStrategy:
    """A selection rule; ``seed`` drives the stream used by ``random``."""

    kind: StrategyKind | str = StrategyKind.ULDR
    seed: int = 0
    rng: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self.kind = StrategyKind(self.kind)
        self.reset()

    def reset(self):
        self.rng = np.random.Generator(np.random.PCG64(self.seed))


@dataclass
class ALConfig:
    budget: int
    strategy: QueryStrategy = field(default_factory=QueryStrategy)
    params: KernelParams = field(default_factory=KernelParams)
    eval_every: int | None = None

    def __post_init__(self):
        if isinstance(self.budget, bool) or int(self.budget) != self.budget or self.budget < 0:
            raise ValueError(f"budget must be a non-negative integer, got {self.budget!r}")
        if self.eval_every is not None and self.eval_every < 1:
            raise ValueError("eval_every must be positive")


@dataclass(frozen=True)
class QueryStep:
    step: int
    id: str
    label: int
    was_novel: bool
    score: float | None


@dataclass(frozen=True)
class Snapshot:
    step: int
    novel_acc: float
    combined_acc: float
    novel_degenerate: bool = False


@dataclass
class ALTrace:
    steps: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)

    @property
    def queried_ids(self) -> list:
        return [s.id for s in self.steps]

    def records(self) -> list[dict]:
        out = []
        for s in self.steps:
            rec = asdict(s)
            rec["score"] = _json_float(rec["score"])
            out.append(rec)
        for snap in self.snapshots:
            out.append(asdict(snap))
        return out

    def to_jsonl(self, header: dict | None = None) -> str:
        lines = [json.dumps(header, sort_keys=True)] if header else []
        lines += [json.dumps(r, sort_keys=True) for r in self.records()]
        return "".join(line + "\n" for line in lines)

    @classmethod
    def from_jsonl(cls, text: str) -> "ALTrace":
        trace = cls()
        for line in text.splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            if "id" in rec:
                trace.steps.append(QueryStep(**rec))
            elif "novel_acc" in rec:
                trace.snapshots.append(Snapshot(**rec))
        return trace


def _json_float(v):
    return v if v is not None and math.isfinite(v) else None


class ActiveLearningAborted(OracleError):
    """The oracle failed mid-run; ``trace`` and ``centers`` hold the progress so far."""

    def __init__(self, message, trace, centers):
        super().__init__(message)
        self.trace = trace
        self.centers = centers


class LabelOracle:
    """Answers label queries from the pool's hidden ground truth, once per id."""

    def __init__(self, pool: UnlabeledPool):
        self._pool = pool
        self._truth = pool.reveal_labels()
        self._consumed: set[str] = set()

    def answer(self, id_: str) -> int:
        if id_ not in self._pool:
            raise OracleError(f"unknown id {id_!r}")
        if id_ in self._consumed:
            raise OracleError(f"id {id_!r} was already queried")
        label = int(self._truth[self._pool.index_of(id_)])
        if label < 0:
            raise OracleError(f"no ground truth for id {id_!r}")
        self._consumed.add(id_)
        return label

    __call__ = answer

    @property
    def consumed(self) -> frozenset:
        return frozenset(self._consumed)


def oracle_answer(id_: str, oracle: LabelOracle) -> int:
    return oracle.answer(id_)


# --------------------------------------------------------------------------
# scoring


def _logsumexp_rows(A: np.ndarray) -> np.ndarray:
    m = A.max(axis=1) if A.shape[1] else np.full(A.shape[0], -np.inf)
    finite = np.isfinite(m)
    out = np.full(A.shape[0], -np.inf)
    if finite.any():
        mf = m[finite]
        out[finite] = mf + np.log(np.exp(A[finite] - mf[:, None]).sum(axis=1))
    return out


def _keep_largest(A: np.ndarray, k: int | None) -> np.ndarray:
    if k is None or k >= A.shape[1]:
        return A
    cut = np.argsort(-A, axis=1, kind="stable")[:, k:]
    A = A.copy()
    np.put_along_axis(A, cut, -np.inf, axis=1)
    return A


def uldr_log_scores_from_sq(d2_pool, d2_centers, sigma, neighbor_limit=None) -> np.ndarray:
    """Log ULDR for every pool row.

    ``d2_pool`` is the square (pool x pool) squared-distance matrix and
    ``d2_centers`` the (pool x centers) one. A point with no other unlabelled
    point gets ``-inf``.
    """
    num = log_kernel(d2_pool, sigma).copy()
    np.fill_diagonal(num, -np.inf)
    den = log_kernel(d2_centers, sigma)
    num = _keep_largest(num, neighbor_limit)
    den = _keep_largest(den, neighbor_limit)
    return _logsumexp_rows(num) - _logsumexp_rows(den)


def uldr_log_scores(U: UnlabeledPool, C: LabeledSet, params: KernelParams) -> np.ndarray:
    if len(C) == 0:
        raise DataError("the labelled center set is empty")
    if len(U) == 0:
        raise DataError("the unlabelled pool is empty")
    X = as_matrix(U.vectors, dim=C.dim)
    limit = None if params.neighbor_limit == "all" else params.neighbor_limit
    return uldr_log_scores_from_sq(pairwise_sq_distances(X, X), pairwise_sq_distances(X, C.vectors), params.sigma, limit)


def uldr_score(i: int, U: UnlabeledPool, C: LabeledSet, params: KernelParams) -> float:
    """Log of the unlabelled-to-labelled density ratio of pool member ``i``."""
    if not 0 <= i < len(U):
        raise IndexError(f"pool index {i} out of range")
    return float(uldr_log_scores(U, C, params)[i])


def selection_scores_from_sq(kind, d2_pool, d2_centers, center_labels, params: KernelParams, classes=None):
    """Scores to maximise for a deterministic strategy, from precomputed distances."""
    kind = StrategyKind(kind)
    limit = None if params.neighbor_limit == "all" else min(params.neighbor_limit, d2_centers.shape[1])
    if kind is StrategyKind.ULDR:
        return uldr_log_scores_from_sq(d2_pool, d2_centers, params.sigma, limit)
    if kind is StrategyKind.FNN:
        return np.sqrt(d2_centers.min(axis=1))
    if kind in (StrategyKind.KDE, StrategyKind.ENTROPY):
        s = kernel_scores_from_sq(d2_centers, center_labels, params.sigma, limit, classes)
        return s.density_novelty if kind is StrategyKind.KDE else s.entropy
    raise ValueError(f"{kind.value} has no deterministic score")


def select_query(U: UnlabeledPool, C: LabeledSet, strategy: QueryStrategy, params: KernelParams) -> int:
    """Pool index of the next query; argmax ties go to the smallest index."""
    if len(U) == 0:
        raise DataError("the unlabelled pool is empty")
    if strategy.kind is StrategyKind.RANDOM:
        return int(strategy.rng.integers(len(U)))
    if len(C) == 0:
        raise DataError("the labelled center set is empty")
    X = as_matrix(U.vectors, dim=C.dim)
    scores = selection_scores_from_sq(
        strategy.kind, pairwise_sq_distances(X, X), pairwise_sq_distances(X, C.vectors), C.labels, params
    )
    return int(np.argmax(scores))


# --------------------------------------------------------------------------
# the query loop


def _snapshot(step, d2_test_centers, center_labels, test_truth, test_novel, vocabulary, params):
    limit = None if params.neighbor_limit == "all" else min(params.neighbor_limit, d2_test_centers.shape[1])
    s = kernel_scores_from_sq(d2_test_centers, center_labels, params.sigma, limit)
    pred = s.classes[s.top]
    novel_acc = closed_accuracy(test_truth[test_novel], pred[test_novel], vocabulary)
    combined = closed_accuracy(test_truth, pred, vocabulary)
    return Snapshot(step, novel_acc, combined, bool(test_novel.sum() == 0))


def run_active_learning(
    split: DatasetSplit,
    cfg: ALConfig,
    oracle: LabelOracle | Callable[[str], int] | None = None,
) -> tuple[ALTrace, LabeledSet]:
    """Run ``cfg.budget`` query rounds over ``split.observed``.

    Each round rescores the whole remaining pool against the current center
    set, so earlier answers shape later choices. Returns the trace and the
    grown center set (a copy of ``split.train`` plus every queried point).
    Accuracy snapshots on ``split.test`` are taken before the first query,
    every ``cfg.eval_every`` queries and after the last one.
    """
    U = split.observed
    C = split.train.copy()
    if cfg.budget > len(U):
        raise DataError(f"budget {cfg.budget} exceeds the observed pool of {len(U)}")
    if oracle is None:
        oracle = LabelOracle(U)
    strategy = cfg.strategy
    strategy.reset()
    params = cfg.params
    known = split.known_classes

    d2_pool = pairwise_sq_distances(U.vectors, U.vectors)
    d2_centers = pairwise_sq_distances(U.vectors, C.vectors)
    take_snapshots = len(split.test) > 0 and split.test.has_truth
    if take_snapshots:
        test_truth = split.test.reveal_labels()
        test_novel = ~np.isin(test_truth, sorted(known))
        vocabulary = split.vocabulary | set(C.classes)
        d2_test = pairwise_sq_distances(split.test.vectors, C.vectors)
        d2_test_pool = pairwise_sq_distances(split.test.vectors, U.vectors)

    remaining = np.arange(len(U))
    trace = ALTrace()

    def snap(step):
        if take_snapshots:
            trace.snapshots.append(_snapshot(step, d2_test, C.labels, test_truth, test_novel, vocabulary, params))

    snap(0)
    for step in range(1, cfg.budget + 1):
        if strategy.kind is StrategyKind.RANDOM:
            pick = int(strategy.rng.integers(remaining.size))
            score = None
        else:
            scores = selection_scores_from_sq(
                strategy.kind, d2_pool[np.ix_(remaining, remaining)], d2_centers[remaining], C.labels, params
            )
            pick = int(np.argmax(scores))
            score = float(scores[pick])
        q = int(remaining[pick])
        qid = U.ids[q]
        try:
            label = int(oracle(qid))
        except Exception as exc:
            raise ActiveLearningAborted(f"oracle failed on {qid!r} at step {step}: {exc}", trace, C) from exc
        C.append(LabeledEmbedding(Embedding(qid, U.vectors[q]), label))
        d2_centers = np.column_stack([d2_centers, d2_pool[:, q]])
        if take_snapshots:
            d2_test = np.column_stack([d2_test, d2_test_pool[:, q]])
        remaining = np.delete(remaining, pick)
        trace.steps.append(QueryStep(step, qid, label, label not in known, score))
        if step == cfg.budget or (cfg.eval_every and step % cfg.eval_every == 0):
            snap(step)

    _check_conservation(split, trace, C, remaining, cfg.budget)
    return trace, C


def _check_conservation(split, trace, C, remaining, budget):
    queried = trace.queried_ids
    if len(queried) != budget or len(set(queried)) != budget:
        raise InvariantViolation("trace length or query uniqueness broken")
    if set(C.ids) != set(split.train.ids) | set(queried) or len(C) != len(split.train) + budget:
        raise InvariantViolation("final center set is not train plus queried ids")
    left = {split.observed.ids[i] for i in remaining}
    if left != set(split.observed.ids) - set(queried):
        raise InvariantViolation("remaining pool is not the observed pool minus queried ids")
