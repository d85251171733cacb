"""LETOR / SVMlight ranking data: parsing, normalization, synthetic sets."""
from __future__ import annotations

import io
from dataclasses import dataclass, field, replace
from typing import Iterable, TextIO

import numpy as np

Y_MAX = 5  # number of relevance grades; labels are 0..Y_MAX-1


class LetorParseError(ValueError):
    """A line of a LETOR file does not match ``<label> qid:<qid> <fid>:<val> ...``."""


class LabelRangeError(ValueError):
    pass


@dataclass(frozen=True)
class Document:
    qid: int
    label: int
    features: np.ndarray

    def __post_init__(self):
        if not 0 <= self.label <= Y_MAX - 1:
            raise LabelRangeError(f"label {self.label} outside [0, {Y_MAX - 1}]")


@dataclass(frozen=True)
class QueryList:
    qid: int
    docs: tuple[Document, ...]

    def __post_init__(self):
        if not self.docs:
            raise ValueError(f"query {self.qid} has no documents")
        if any(d.qid != self.qid for d in self.docs):
            raise ValueError(f"query {self.qid} holds documents of another qid")

    def __len__(self):
        return len(self.docs)

    @property
    def features(self) -> np.ndarray:
        return np.stack([d.features for d in self.docs])

    @property
    def labels(self) -> np.ndarray:
        return np.array([d.label for d in self.docs], dtype=np.int64)


@dataclass(frozen=True)
class NormStats:
    minimum: np.ndarray
    maximum: np.ndarray

    def __post_init__(self):
        if self.minimum.shape != self.maximum.shape:
            raise ValueError("min/max length mismatch")
        if np.any(self.minimum > self.maximum):
            raise ValueError("min > max for some feature")


@dataclass(frozen=True)
class Dataset:
    train: list[QueryList]
    valid: list[QueryList]
    test: list[QueryList]
    feature_count: int
    norm: NormStats | None = field(default=None)

    def split(self, name: str) -> list[QueryList]:
        if name not in ("train", "valid", "test"):
            raise KeyError(name)
        return getattr(self, name)


# ---------------------------------------------------------------------------
# Parsing / serialization


def _parse_line(line: str, lineno: int):
    body = line.split("#", 1)[0].strip()
    if not body:
        return None
    parts = body.split()
    if len(parts) < 2 or not parts[1].startswith("qid:"):
        raise LetorParseError(f"line {lineno}: expected '<label> qid:<id> ...'")
    try:
        label = int(parts[0])
        qid = int(parts[1][4:])
    except ValueError:
        raise LetorParseError(f"line {lineno}: bad label or qid") from None
    if not 0 <= label <= Y_MAX - 1:
        raise LabelRangeError(f"line {lineno}: label {label} outside [0, {Y_MAX - 1}]")
    feats = {}
    for tok in parts[2:]:
        fid, sep, val = tok.partition(":")
        try:
            fid_i = int(fid)
            val_f = float(val)
        except ValueError:
            raise LetorParseError(f"line {lineno}: bad feature token {tok!r}") from None
        if not sep or fid_i < 1:
            raise LetorParseError(f"line {lineno}: bad feature token {tok!r}")
        feats[fid_i] = val_f
    return qid, label, feats


def parse_letor(stream: TextIO | Iterable[str], feature_count: int | None = None) -> list[QueryList]:
    """Parse LETOR text into query lists.

    Documents are grouped by qid in order of first appearance; within a
    query the file order is kept.  Feature ids are 1-based and absent ids
    read as 0.  When ``feature_count`` is None it is the largest id seen.
    """
    rows = []
    for lineno, line in enumerate(stream, start=1):
        parsed = _parse_line(line, lineno)
        if parsed is not None:
            rows.append((lineno, parsed))
    if not rows:
        return []
    max_fid = max((max(f) for _, (_, _, f) in rows if f), default=0)
    F = max_fid if feature_count is None else feature_count
    groups: dict[int, list[Document]] = {}
    for lineno, (qid, label, feats) in rows:
        if feats and max(feats) > F:
            raise LetorParseError(f"line {lineno}: feature id {max(feats)} exceeds feature count {F}")
        x = np.zeros(F, dtype=np.float64)
        for fid, val in feats.items():
            x[fid - 1] = val
        groups.setdefault(qid, []).append(Document(qid, label, x))
    return [QueryList(qid, tuple(docs)) for qid, docs in groups.items()]


def format_letor(queries: Iterable[QueryList]) -> str:
    """Inverse of :func:`parse_letor`; values use ``repr`` so they round-trip."""
    out = io.StringIO()
    for q in queries:
        for d in q.docs:
            feats = " ".join(f"{i + 1}:{v!r}" for i, v in enumerate(d.features.tolist()))
            out.write(f"{d.label} qid:{q.qid} {feats}\n")
    return out.getvalue()


def load_letor(path, feature_count: int | None = None) -> list[QueryList]:
    with open(path) as fh:
        return parse_letor(fh, feature_count)


def load_dataset(train_path, valid_path, test_path) -> Dataset:
    splits = [load_letor(p) for p in (train_path, valid_path, test_path)]
    F = max((len(q.docs[0].features) for s in splits for q in s), default=0)
    # re-read with a common width so short files pad with zeros
    splits = [load_letor(p, F) for p in (train_path, valid_path, test_path)]
    return Dataset(*splits, feature_count=F)


# ---------------------------------------------------------------------------
# Normalization


def fit_norm(queries: list[QueryList]) -> NormStats:
    X = np.concatenate([q.features for q in queries])
    return NormStats(X.min(axis=0), X.max(axis=0))


def apply_norm(queries: list[QueryList], stats: NormStats) -> list[QueryList]:
    span = stats.maximum - stats.minimum
    const = span == 0
    safe = np.where(const, 1.0, span)
    out = []
    for q in queries:
        docs = []
        for d in q.docs:
            z = np.clip((d.features - stats.minimum) / safe, 0.0, 1.0)
            z[const] = 0.0
            docs.append(Document(d.qid, d.label, z))
        out.append(QueryList(q.qid, tuple(docs)))
    return out


def normalize(dataset: Dataset, stats: NormStats | None = None) -> Dataset:
    """Min-max scale every split with training-split statistics.

    Constant training features map to 0; valid/test values are clipped
    into [0, 1].  Pass ``stats`` to reuse previously saved statistics.
    """
    if stats is None:
        if not dataset.train:
            raise ValueError("training split is empty")
        stats = fit_norm(dataset.train)
    return replace(
        dataset,
        train=apply_norm(dataset.train, stats),
        valid=apply_norm(dataset.valid, stats),
        test=apply_norm(dataset.test, stats),
        norm=stats,
    )


def save_norm_stats(stats: NormStats, path) -> None:
    with open(path, "w") as fh:
        for i, (lo, hi) in enumerate(zip(stats.minimum.tolist(), stats.maximum.tolist())):
            fh.write(f"{i + 1} {lo!r} {hi!r}\n")


def load_norm_stats(path) -> NormStats:
    lo, hi = [], []
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            fid, a, b = line.split()
            if int(fid) != len(lo) + 1:
                raise ValueError(f"{path}: feature ids must be consecutive from 1")
            lo.append(float(a))
            hi.append(float(b))
    return NormStats(np.array(lo), np.array(hi))


# ---------------------------------------------------------------------------
# Synthetic data

# probability of each grade 0..4; skewed toward irrelevant as in web data
_GRADE_PROBS = np.array([0.30, 0.30, 0.20, 0.12, 0.08])


def generate_synthetic_dataset(
    num_queries: int,
    docs_per_query: int,
    num_features: int,
    seed: int,
    signal_features: int = 5,
    cluster_noise: float = 0.25,
    noise_scale: float = 1.0,
) -> Dataset:
    """Deterministic synthetic LETOR-like dataset.

    The first ``signal_features`` columns carry grade-dependent Gaussian
    cluster means (``cluster_noise`` spread around each mean); the rest
    are pure noise with standard deviation ``noise_scale``.  Queries are
    split 60/20/20 in generation order.  Features are not normalized.
    """
    if min(num_queries, docs_per_query, num_features) < 1:
        raise ValueError("counts must be positive")
    rng = np.random.default_rng(seed)
    S = min(signal_features, num_features)
    means = rng.normal(size=(Y_MAX, S))
    labels = rng.choice(Y_MAX, size=(num_queries, docs_per_query), p=_GRADE_PROBS)
    flat = labels.reshape(-1)
    # force every grade to occur at least once
    if flat.size >= Y_MAX:
        for grade in range(Y_MAX):
            if not np.any(flat == grade):
                # overwrite a document whose grade occurs more than once
                counts = np.bincount(flat, minlength=Y_MAX)
                flat[np.flatnonzero(counts[flat] > 1)[0]] = grade
    labels = flat.reshape(num_queries, docs_per_query)
    X = rng.normal(scale=noise_scale, size=(num_queries, docs_per_query, num_features))
    X[..., :S] = means[labels] + cluster_noise * rng.normal(size=(num_queries, docs_per_query, S))

    queries = []
    for q in range(num_queries):
        qid = q + 1
        docs = tuple(Document(qid, int(labels[q, i]), X[q, i].copy()) for i in range(docs_per_query))
        queries.append(QueryList(qid, docs))
    n_train = int(round(0.6 * num_queries))
    n_valid = int(round(0.2 * num_queries))
    return Dataset(
        train=queries[:n_train],
        valid=queries[n_train : n_train + n_valid],
        test=queries[n_train + n_valid :],
        feature_count=num_features,
    )
