"""Inference-time ranking, nDCG and the singular-value rank diagnostic."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels
from .models import BaseModel, GaussianEstimate, RelevanceModel, split_gaussian

DEFAULT_KS = (1, 3, 5, 10)


def compute_base_vector(estimates: Sequence[GaussianEstimate]) -> np.ndarray:
    """Precision-weighted average of the predicted means.

    This is the maximizer of sum_i -(o - mu_i)^2 / (2 sigma_i^2), taken
    elementwise; log-variances are clamped to [-10, 10].
    """
    if len(estimates) == 0:
        raise ValueError("need at least one estimate")
    mu = np.stack([np.atleast_1d(e.mu) for e in estimates]).astype(np.float64)
    s = np.stack([np.atleast_1d(e.log_var) for e in estimates]).astype(np.float64)
    return kernels.base_vectors(mu, s, np.array([0, len(mu)]))[0]


@dataclass(frozen=True)
class RankedList:
    qid: int
    order: np.ndarray  # document indices, best first
    scores: np.ndarray  # projected score of every document, input order

    def to_json(self, labels=None) -> str:
        rec = {"qid": int(self.qid), "order": self.order.tolist(), "scores": self.scores.tolist()}
        if labels is not None:
            rec["labels"] = [int(v) for v in np.asarray(labels)]
        return json.dumps(rec, sort_keys=True)


def project(rel_emb: np.ndarray, base: np.ndarray, offsets) -> np.ndarray:
    """Score every item as r(x)^T base of its list.

    ``base`` is either one vector shared by all lists or one row per list.
    """
    base = np.asarray(base, dtype=np.float64)
    if base.ndim == 1:
        return rel_emb @ base
    counts = np.diff(np.asarray(offsets))
    return np.einsum("ij,ij->i", rel_emb, np.repeat(base, counts, axis=0))


def score_lists(rel: RelevanceModel, base_model: BaseModel | None, X: np.ndarray, offsets, fixed_base=None) -> np.ndarray:
    """Projected ranking scores for packed lists.

    With a base model the per-list base vector comes from its Gaussian
    estimates; otherwise ``fixed_base`` is used for every list.  The
    observation model plays no part here.
    """
    R = rel(X)
    if base_model is None:
        if fixed_base is None:
            raise ValueError("need a base model or a fixed base vector")
        return project(R, fixed_base, offsets)
    mu, s = split_gaussian(base_model.raw(X), base_model.dim)
    return project(R, kernels.base_vectors(mu, s, offsets), offsets)


def rank_query(rel: RelevanceModel, base_model: BaseModel | None, features, qid: int = 0, fixed_base=None) -> RankedList:
    X = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if len(X) == 0:
        raise ValueError("empty query")
    offsets = np.array([0, len(X)])
    scores = score_lists(rel, base_model, X, offsets, fixed_base)
    return RankedList(qid, kernels.segment_argsort(scores, offsets), scores)


def ndcg_at_k(ranked_labels: Sequence[int], k: int) -> float:
    """nDCG@k of labels listed in ranked order (gain 2^l - 1, log2 discount).

    Returns 1.0 when the ideal DCG is zero.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    labels = [int(v) for v in ranked_labels]

    def dcg(seq):
        return sum((2.0**l - 1.0) / math.log2(i + 2.0) for i, l in enumerate(seq[:k]))

    ideal = dcg(sorted(labels, reverse=True))
    if ideal == 0.0:
        return 1.0
    return dcg(labels) / ideal


def evaluate_lists(scores, labels, offsets, ks=DEFAULT_KS) -> dict[int, np.ndarray]:
    """Per-list nDCG@k for each cutoff (lists sorted by descending score)."""
    return {k: kernels.segment_ndcg(scores, labels, offsets, k) for k in ks}


# ---------------------------------------------------------------------------
# Singular values


@dataclass(frozen=True)
class SvdResult:
    values: np.ndarray  # descending
    right_vectors: np.ndarray  # columns, same order as values
    sweeps: int


def jacobi_svd(A, tol: float = 1e-15, max_sweeps: int = 100) -> SvdResult:
    """One-sided (Hestenes) cyclic Jacobi SVD.

    Plane rotations are chosen to diagonalize the Gram matrix A^T A
    pairwise, but applied to the columns of A so that small singular
    values keep absolute accuracy near eps * sigma_max instead of
    sqrt(eps) * sigma_max.
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or not np.all(np.isfinite(A)):
        raise ValueError("matrix must be 2-D and finite")
    U = A.copy()
    n = U.shape[1]
    V = np.eye(n)
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                alpha = U[:, p] @ U[:, p]
                beta = U[:, q] @ U[:, q]
                gam = U[:, p] @ U[:, q]
                if abs(gam) <= tol * math.sqrt(alpha * beta) or gam == 0.0:
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gam)
                t = math.copysign(1.0, zeta) / (abs(zeta) + math.sqrt(1.0 + zeta * zeta))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = c * t
                up, uq = U[:, p].copy(), U[:, q]
                U[:, p] = c * up - s * uq
                U[:, q] = s * up + c * uq
                vp, vq = V[:, p].copy(), V[:, q]
                V[:, p] = c * vp - s * vq
                V[:, q] = s * vp + c * vq
        if not rotated:
            break
    sv = np.sqrt(np.einsum("ij,ij->j", U, U))
    order = np.argsort(-sv, kind="stable")
    return SvdResult(sv[order], V[:, order], sweeps)


def singular_values(A, check_tol: float = 1e-10) -> np.ndarray:
    """Singular values in descending order, with a Gram reconstruction check."""
    A = np.asarray(A, dtype=np.float64)
    res = jacobi_svd(A)
    gram = A.T @ A
    recon = res.right_vectors @ np.diag(res.values**2) @ res.right_vectors.T
    err = np.max(np.abs(gram - recon)) if gram.size else 0.0
    if err >= check_tol * max(1.0, np.max(np.abs(gram))):
        raise ArithmeticError(f"Jacobi reconstruction error {err:.3e} too large")
    return res.values


def numerical_rank(values, rel_tol: float = 1e-6) -> int:
    values = np.asarray(values)
    if values.size == 0 or values[0] == 0:
        return 0
    return int(np.sum(values > rel_tol * values[0]))
