"""Embedding data model, exact nearest-neighbour search and the known/novel split.

All arithmetic is carried out in float64 regardless of the precision the
embeddings were stored with.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from ._validation import as_matrix, as_vector
from .exceptions import DataError, DimensionMismatchError

UNKNOWN_LABEL = -1
SPLIT_NAMES = ("train", "observed", "test", "-")
_CHUNK_ELEMENTS = 1 << 22


@dataclass(frozen=True)
class Embedding:
    id: str
    vector: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "vector", as_vector(self.vector, name=f"embedding {self.id!r}"))
        self.vector.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.vector.shape[0]


@dataclass(frozen=True)
class LabeledEmbedding:
    embedding: Embedding
    label: int

    def __post_init__(self):
        if isinstance(self.label, bool) or int(self.label) != self.label or self.label < 0:
            raise DataError(f"label must be a non-negative integer, got {self.label!r}")
        object.__setattr__(self, "label", int(self.label))

    @property
    def id(self) -> str:
        return self.embedding.id


def _check_ids(ids: Sequence[str]) -> list[str]:
    ids = [str(i) for i in ids]
    if len(set(ids)) != len(ids):
        seen = set()
        dup = next(i for i in ids if i in seen or seen.add(i))
        raise DataError(f"duplicate id {dup!r}")
    return ids


class LabeledSet:
    """The set of labelled kernel centers.

    Rows of :attr:`vectors` are the center embeddings, :attr:`labels` their
    integer classes. The set only grows, through :meth:`append`; callers that
    share a set between threads must serialise appends with reads.
    """

    def __init__(self, ids, vectors, labels, dim=None):
        self.ids = _check_ids(ids)
        X = as_matrix(vectors, dim=dim, name="vectors", allow_empty=True)
        y = np.asarray(labels)
        if y.ndim != 1 or y.shape[0] != X.shape[0] or len(self.ids) != X.shape[0]:
            raise DataError("ids, vectors and labels must have the same length")
        if y.size and (y.dtype == bool or not np.all(np.mod(y, 1) == 0) or y.min() < 0):
            raise DataError("labels must be non-negative integers")
        self.vectors = X
        self.labels = y.astype(np.int64)
        self.dim = int(X.shape[1]) if dim is None else int(dim)
        if self.dim <= 0:
            raise DataError("embedding dimension must be positive")
        self._index = {i: n for n, i in enumerate(self.ids)}

    @classmethod
    def from_members(cls, members: Sequence[LabeledEmbedding]) -> "LabeledSet":
        if not members:
            raise DataError("cannot build a LabeledSet from zero members")
        return cls(
            [m.id for m in members],
            np.stack([m.embedding.vector for m in members]),
            [m.label for m in members],
        )

    def __len__(self) -> int:
        return len(self.ids)

    def __iter__(self) -> Iterator[LabeledEmbedding]:
        for i, v, y in zip(self.ids, self.vectors, self.labels):
            yield LabeledEmbedding(Embedding(i, v), int(y))

    def __contains__(self, id_) -> bool:
        return id_ in self._index

    def __repr__(self) -> str:
        return f"LabeledSet(alpha={len(self)}, dim={self.dim}, classes={list(self.classes)})"

    @property
    def classes(self) -> tuple[int, ...]:
        return tuple(int(c) for c in np.unique(self.labels))

    def index_of(self, id_: str) -> int:
        return self._index[id_]

    def append(self, item: LabeledEmbedding) -> None:
        if item.id in self._index:
            raise DataError(f"duplicate id {item.id!r}")
        if item.embedding.dim != self.dim:
            raise DimensionMismatchError(
                f"embedding {item.id!r} has dimension {item.embedding.dim}, expected {self.dim}"
            )
        self.vectors = np.vstack([self.vectors, item.embedding.vector[None, :]])
        self.labels = np.append(self.labels, np.int64(item.label))
        self._index[item.id] = len(self.ids)
        self.ids.append(item.id)

    def copy(self) -> "LabeledSet":
        return LabeledSet(list(self.ids), self.vectors.copy(), self.labels.copy(), dim=self.dim)

    def subset(self, indices) -> "LabeledSet":
        indices = np.asarray(indices, dtype=np.int64)
        return LabeledSet([self.ids[i] for i in indices], self.vectors[indices], self.labels[indices], dim=self.dim)


class UnlabeledPool:
    """Observations whose labels are hidden from the learner.

    The ground truth travels with the pool so the oracle and the evaluator
    can read it through :meth:`reveal_labels` / :meth:`reveal_is_novel`;
    selection strategies only ever look at :attr:`vectors`.
    ``UNKNOWN_LABEL`` marks members without any ground truth.
    """

    def __init__(self, ids, vectors, hidden_labels=None, known_classes=(), dim=None):
        self.ids = _check_ids(ids)
        self.vectors = as_matrix(vectors, dim=dim, name="vectors", allow_empty=True)
        if len(self.ids) != self.vectors.shape[0]:
            raise DataError("ids and vectors must have the same length")
        if hidden_labels is None:
            hidden_labels = np.full(len(self.ids), UNKNOWN_LABEL)
        self._labels = np.asarray(hidden_labels, dtype=np.int64)
        if self._labels.shape != (len(self.ids),):
            raise DataError("hidden labels must match the pool size")
        self.known_classes = frozenset(int(c) for c in known_classes)
        self.dim = int(self.vectors.shape[1]) if dim is None else int(dim)
        self._index = {i: n for n, i in enumerate(self.ids)}

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, id_) -> bool:
        return id_ in self._index

    def __repr__(self) -> str:
        return f"UnlabeledPool(gamma={len(self)}, dim={self.dim})"

    def index_of(self, id_: str) -> int:
        return self._index[id_]

    def members(self) -> list[Embedding]:
        return [Embedding(i, v) for i, v in zip(self.ids, self.vectors)]

    @property
    def has_truth(self) -> bool:
        return bool(len(self)) and bool(np.all(self._labels != UNKNOWN_LABEL))

    def reveal_labels(self) -> np.ndarray:
        """Ground-truth labels; for the oracle and the evaluator only."""
        return self._labels.copy()

    def reveal_is_novel(self) -> np.ndarray:
        """Ground-truth novelty flags relative to :attr:`known_classes`."""
        if np.any(self._labels == UNKNOWN_LABEL):
            raise DataError("pool has members without ground truth")
        return ~np.isin(self._labels, sorted(self.known_classes))

    def with_known_classes(self, known_classes) -> "UnlabeledPool":
        return UnlabeledPool(self.ids, self.vectors, self._labels, known_classes, dim=self.dim)

    def subset(self, indices) -> "UnlabeledPool":
        indices = np.asarray(indices, dtype=np.int64)
        return UnlabeledPool(
            [self.ids[i] for i in indices], self.vectors[indices], self._labels[indices],
            self.known_classes, dim=self.dim,
        )


@dataclass
class DatasetSplit:
    train: LabeledSet
    observed: UnlabeledPool
    test: UnlabeledPool
    known_classes: frozenset = field(default_factory=frozenset)
    novel_classes: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        self.known_classes = frozenset(int(c) for c in self.known_classes)
        self.novel_classes = frozenset(int(c) for c in self.novel_classes)
        if self.known_classes & self.novel_classes:
            raise DataError("known and novel classes overlap")
        if set(self.train.classes) & self.novel_classes:
            raise DataError("training set contains a novel-class member")
        for pool in (self.observed, self.test):
            if pool.dim != self.train.dim:
                raise DimensionMismatchError("pool dimension differs from the training set")

    @property
    def vocabulary(self) -> frozenset:
        return self.known_classes | self.novel_classes


# --------------------------------------------------------------------------
# distances and neighbours


def euclidean_distance(a, b) -> float:
    va = as_vector(a, name="a")
    vb = as_vector(b, name="b")
    if va.shape != vb.shape:
        raise DimensionMismatchError(f"dimension mismatch: {va.shape[0]} vs {vb.shape[0]}")
    return math.sqrt(float(np.sum((va - vb) ** 2)))


def pairwise_sq_distances(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances between the rows of ``A`` and ``B``.

    Differences are formed explicitly (no ``|a|^2 + |b|^2 - 2ab`` expansion), so
    coincident points give exactly zero.
    """
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.shape[1] != B.shape[1]:
        raise DimensionMismatchError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    out = np.empty((A.shape[0], B.shape[0]))
    step = max(1, _CHUNK_ELEMENTS // max(1, B.shape[0] * A.shape[1]))
    for start in range(0, A.shape[0], step):
        diff = A[start:start + step, None, :] - B[None, :, :]
        out[start:start + step] = np.einsum("ijk,ijk->ij", diff, diff)
    return out


def argsort_rows(D: np.ndarray, k: int | None = None) -> np.ndarray:
    """Column order of each row by ascending value, ties by ascending column."""
    order = np.argsort(D, axis=1, kind="stable")
    return order if k is None else order[:, :k]


def nearest_neighbors(query, centers: LabeledSet, k: int) -> list[tuple[int, float]]:
    """The ``k`` members of ``centers`` closest to ``query``, nearest first.

    Returns ``(member index, distance)`` pairs; equal distances are ordered by
    member index.
    """
    if k < 1 or k > len(centers):
        raise ValueError(f"k must be in [1, {len(centers)}], got {k}")
    q = as_vector(query, dim=centers.dim, name="query")
    d2 = pairwise_sq_distances(q[None, :], centers.vectors)[0]
    order = np.argsort(d2, kind="stable")[:k]
    return [(int(i), math.sqrt(d2[i])) for i in order]


# --------------------------------------------------------------------------
# known / novel split


def _first_known(classes: Sequence[int], fraction_known: float) -> list[int]:
    n_known = math.ceil(fraction_known * len(classes) - 1e-12)
    return list(classes[:max(1, n_known)])


def split_known_novel(
    data: LabeledSet,
    fraction_known: float = 0.5,
    assignment="first_half",
    seed: int = 0,
    train_fraction: float = 0.5,
) -> DatasetSplit:
    """Partition a fully labelled dataset into train / observed / test sets.

    ``assignment`` is either ``"first_half"`` (the first
    ``ceil(fraction_known * n_classes)`` labels in sorted order are known) or
    an explicit collection of known labels. Within each class the members are
    shuffled with a seeded generator; a known class sends ``train_fraction`` of
    its members to train and splits the remainder evenly between observed and
    test, a novel class splits all of its members evenly. Members keep their
    source order inside every output set.
    """
    classes = list(data.classes)
    if isinstance(assignment, str):
        if assignment != "first_half":
            raise ValueError(f"unknown assignment {assignment!r}")
        if len(classes) < 2:
            raise DataError("at least two classes are needed for a known/novel split")
        if not 0.0 < fraction_known <= 1.0:
            raise ValueError(f"fraction_known must be in (0, 1], got {fraction_known}")
        known = _first_known(classes, fraction_known)
    else:
        known = sorted(int(c) for c in assignment)
        if not set(known) <= set(classes):
            raise DataError(f"explicit known classes {sorted(set(known) - set(classes))} are not in the data")
    if not 0.0 <= train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in [0, 1), got {train_fraction}")
    known_set = set(known)

    role = np.empty(len(data), dtype=object)
    streams = np.random.SeedSequence(seed).spawn(len(classes))
    for label, ss in zip(classes, streams):
        members = np.flatnonzero(data.labels == label)
        rng = np.random.Generator(np.random.PCG64(ss))
        members = members[rng.permutation(members.size)]
        n_train = int(round(train_fraction * members.size)) if label in known_set else 0
        rest = members.size - n_train
        n_obs = rest // 2
        role[members[:n_train]] = "train"
        role[members[n_train:n_train + n_obs]] = "observed"
        role[members[n_train + n_obs:]] = "test"
    novel = [c for c in classes if c not in known_set]
    return build_split(data, role, known, novel)


def build_split(data: LabeledSet, role, known, novel) -> DatasetSplit:
    """Assemble a :class:`DatasetSplit` from a per-member role array."""
    role = np.asarray(role, dtype=object)
    idx = {name: np.flatnonzero(role == name) for name in ("train", "observed", "test")}
    train = data.subset(idx["train"])
    if len(train) == 0:
        raise DataError("split produced an empty training set")

    def pool(ix):
        return UnlabeledPool(
            [data.ids[i] for i in ix], data.vectors[ix], data.labels[ix], known, dim=data.dim
        )

    return DatasetSplit(train, pool(idx["observed"]), pool(idx["test"]), frozenset(known), frozenset(novel))


# --------------------------------------------------------------------------
# file formats


@dataclass
class EmbeddingRecords:
    """Raw file contents: one entry per record, in file order."""

    ids: list
    labels: list  # int or None
    splits: list  # split name, "-" when absent
    vectors: np.ndarray


def _parse_float(tok: str, where: str) -> float:
    try:
        v = float(tok)
    except ValueError:
        raise DataError(f"{where}: cannot parse coordinate {tok!r}") from None
    if not math.isfinite(v):
        raise DataError(f"{where}: non-finite value {tok!r}")
    return v


def _parse_label(tok, where: str):
    if tok is None or tok == "?":
        return None
    try:
        if isinstance(tok, bool):
            raise ValueError
        if isinstance(tok, float) and not tok.is_integer():
            raise ValueError
        lab = int(tok)
    except (TypeError, ValueError):
        raise DataError(f"{where}: label must be an integer, '?' or null, got {tok!r}") from None
    if lab < 0:
        raise DataError(f"{where}: label must be non-negative, got {lab}")
    return lab


def _decode(content) -> str:
    if isinstance(content, (bytes, bytearray)):
        try:
            return content.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DataError(f"embedding file is not valid UTF-8: {exc}") from None
    return content


def read_records(content, format: str = "csv") -> EmbeddingRecords:
    """Parse CSV or JSONL embedding content into :class:`EmbeddingRecords`.

    Lines beginning with ``#`` are comments. The dimension is taken from the
    first record; every later record must match it.
    """
    text = _decode(content)
    ids, labels, splits, rows = [], [], [], []
    dim = None
    if format == "csv":
        lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
        if not lines:
            raise DataError("empty embedding file")
        reader = csv.reader(lines)
        header = next(reader)
        if header[:3] != ["id", "label", "split"] or len(header) < 4:
            raise DataError(f"bad CSV header {header[:4]!r}; expected id,label,split,v0,...")
        dim = len(header) - 3
        for lineno, rec in enumerate(reader, start=2):
            where = f"record {lineno - 1}"
            if len(rec) - 3 != dim:
                raise DimensionMismatchError(f"{where}: {len(rec) - 3} coordinates, expected {dim}")
            if rec[2] not in SPLIT_NAMES:
                raise DataError(f"{where}: unknown split {rec[2]!r}")
            ids.append(rec[0])
            labels.append(_parse_label(rec[1], where))
            splits.append(rec[2])
            rows.append([_parse_float(t, where) for t in rec[3:]])
    elif format == "jsonl":
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            where = f"line {lineno}"
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{where}: invalid JSON ({exc.msg})") from None
            if isinstance(obj, dict) and "vector" not in obj and "manifest_hash" in obj:
                continue
            if not isinstance(obj, dict) or "id" not in obj or "vector" not in obj:
                raise DataError(f"{where}: expected an object with 'id' and 'vector'")
            vec = obj["vector"]
            if not isinstance(vec, list) or not vec:
                raise DataError(f"{where}: 'vector' must be a non-empty array")
            if dim is None:
                dim = len(vec)
            elif len(vec) != dim:
                raise DimensionMismatchError(f"{where}: {len(vec)} coordinates, expected {dim}")
            coords = []
            for t in vec:
                if isinstance(t, bool) or not isinstance(t, (int, float)):
                    raise DataError(f"{where}: non-numeric coordinate {t!r}")
                coords.append(_parse_float(repr(t), where))
            split = obj.get("split", "-")
            if split not in SPLIT_NAMES:
                raise DataError(f"{where}: unknown split {split!r}")
            ids.append(str(obj["id"]))
            labels.append(_parse_label(obj.get("label"), where))
            splits.append(split)
            rows.append(coords)
    else:
        raise ValueError(f"unknown format {format!r}")
    if not rows:
        raise DataError("empty embedding file")
    _check_ids(ids)
    return EmbeddingRecords(ids, labels, splits, np.asarray(rows, dtype=np.float64))


def parse_embedding_file(content, format: str = "csv", kind: str = "auto", known_classes=()):
    """Parse an embedding file into a :class:`LabeledSet` or :class:`UnlabeledPool`.

    With ``kind="auto"`` a file becomes a pool when any label is missing or any
    record is tagged ``observed``/``test``; otherwise it is a labelled set.
    """
    rec = read_records(content, format)
    if kind == "auto":
        pooled = any(lab is None for lab in rec.labels) or any(s in ("observed", "test") for s in rec.splits)
        kind = "unlabeled" if pooled else "labeled"
    if kind == "labeled":
        if any(lab is None for lab in rec.labels):
            raise DataError("labelled set contains unlabelled records")
        return LabeledSet(rec.ids, rec.vectors, rec.labels)
    if kind == "unlabeled":
        hidden = [UNKNOWN_LABEL if lab is None else lab for lab in rec.labels]
        return UnlabeledPool(rec.ids, rec.vectors, hidden, known_classes)
    raise ValueError(f"unknown kind {kind!r}")


def format_embedding_file(obj, format: str = "csv", split: str = "-", comment: str | None = None) -> str:
    """Serialise a :class:`LabeledSet` or :class:`UnlabeledPool`; floats round-trip exactly."""
    if isinstance(obj, LabeledSet):
        labels = [int(v) for v in obj.labels]
    else:
        labels = [None if v == UNKNOWN_LABEL else int(v) for v in obj.reveal_labels()]
    out = io.StringIO()
    if comment is not None and format == "csv":
        out.write(f"# {comment}\n")
    if format == "csv":
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["id", "label", "split"] + [f"v{j}" for j in range(obj.dim)])
        for i, lab, row in zip(obj.ids, labels, obj.vectors):
            w.writerow([i, "?" if lab is None else lab, split] + [repr(float(v)) for v in row])
    elif format == "jsonl":
        if comment is not None:
            key, _, value = comment.partition("=")
            out.write(json.dumps({key.strip(): value.strip()}) + "\n")
        for i, lab, row in zip(obj.ids, labels, obj.vectors):
            out.write(json.dumps({"id": i, "label": lab, "vector": [float(v) for v in row]}) + "\n")
    else:
        raise ValueError(f"unknown format {format!r}")
    return out.getvalue()


def records_to_split(rec: EmbeddingRecords, known_classes=None, seed: int = 0, fraction_known: float = 0.5) -> DatasetSplit:
    """Build a split from a combined file; untagged (``-``) files are split by class."""
    if any(lab is None for lab in rec.labels):
        raise DataError("a combined dataset file needs ground-truth labels on every record")
    data = LabeledSet(rec.ids, rec.vectors, rec.labels)
    if all(s == "-" for s in rec.splits):
        return split_known_novel(data, fraction_known, known_classes or "first_half", seed)
    if any(s == "-" for s in rec.splits):
        raise DataError("split column mixes tagged and untagged records")
    if known_classes is None:
        known_classes = sorted({lab for lab, s in zip(rec.labels, rec.splits) if s == "train"})
    known = sorted(int(c) for c in known_classes)
    novel = sorted(set(data.classes) - set(known))
    return build_split(data, rec.splits, known, novel)


DATASET_FILES = ("train", "observed", "test")


def save_dataset(split: DatasetSplit, directory, format: str = "csv", comment: str | None = None) -> dict:
    """Write ``train``/``observed``/``test`` files into ``directory``; returns file names."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = {}
    for name, obj in zip(DATASET_FILES, (split.train, split.observed, split.test)):
        fname = f"{name}.{format}"
        (directory / fname).write_text(format_embedding_file(obj, format, split=name, comment=comment), encoding="utf-8")
        names[name] = fname
    return names


def load_dataset(directory, format: str | None = None) -> DatasetSplit:
    """Load a dataset directory written by :func:`save_dataset`.

    Known classes are the classes of the training file; novel classes are
    every other label that appears in the observed or test file.
    """
    directory = Path(directory)
    if format is None:
        format = "jsonl" if (directory / "train.jsonl").exists() else "csv"
    parts = {}
    for name in DATASET_FILES:
        path = directory / f"{name}.{format}"
        if not path.exists():
            raise DataError(f"missing dataset file {path}")
        parts[name] = path.read_bytes()
    train = parse_embedding_file(parts["train"], format, kind="labeled")
    known = train.classes
    observed = parse_embedding_file(parts["observed"], format, kind="unlabeled", known_classes=known)
    test = parse_embedding_file(parts["test"], format, kind="unlabeled", known_classes=known)
    seen = set(observed.reveal_labels().tolist()) | set(test.reveal_labels().tolist())
    novel = sorted(seen - set(known) - {UNKNOWN_LABEL})
    return DatasetSplit(train, observed, test, known, novel)
