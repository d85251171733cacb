"""Numpy implementations of the segment kernels.

Used when the compiled ``_ckernels`` extension is not importable.  Lists
are packed CSR-style: flat item arrays plus ``offsets`` with
``offsets[q]:offsets[q + 1]`` selecting list ``q``.  Lists must be
non-empty.
"""
import numpy as np

LOG_VAR_MIN = -10.0
LOG_VAR_MAX = 10.0


def softmax_ce(scores, targets, offsets):
    """Listwise softmax cross entropy per list and its gradient wrt scores.

    ``loss_q = -sum_i t_i * log_softmax(s)_i`` and
    ``grad_i = (sum_j t_j) * softmax(s)_i - t_i``.  Lists whose targets
    sum to zero contribute zero loss and zero gradient.
    """
    starts = offsets[:-1]
    counts = np.diff(offsets)
    seg_max = np.maximum.reduceat(scores, starts)
    shifted = scores - np.repeat(seg_max, counts)
    lse = np.repeat(seg_max + np.log(np.add.reduceat(np.exp(shifted), starts)), counts)
    tsum = np.add.reduceat(targets, starts)
    logp = scores - lse
    loss = -np.add.reduceat(targets * logp, starts)
    grad = np.repeat(tsum, counts) * np.exp(logp) - targets
    empty = np.repeat(tsum == 0.0, counts)
    grad[empty] = 0.0
    loss[tsum == 0.0] = 0.0
    return loss, grad


def base_vectors(mu, log_var, offsets):
    """Precision-weighted mean of ``mu`` per list (log-variance clamped)."""
    starts = offsets[:-1]
    w = np.exp(-np.clip(log_var, LOG_VAR_MIN, LOG_VAR_MAX))
    num = np.add.reduceat(w * mu, starts, axis=0)
    den = np.add.reduceat(w, starts, axis=0)
    return num / den


def segment_argsort(scores, offsets):
    """Local stable descending order of each list (ties keep index order)."""
    out = np.empty(len(scores), dtype=np.int64)
    for lo, hi in zip(offsets[:-1], offsets[1:]):
        out[lo:hi] = np.argsort(-scores[lo:hi], kind="stable")
    return out


def segment_ndcg(scores, labels, offsets, k):
    out = np.empty(len(offsets) - 1, dtype=np.float64)
    for q, (lo, hi) in enumerate(zip(offsets[:-1], offsets[1:])):
        lab = labels[lo:hi]
        top = min(k, hi - lo)
        disc = 1.0 / np.log2(np.arange(2, top + 2))
        ranked = lab[np.argsort(-scores[lo:hi], kind="stable")[:top]]
        ideal = np.sort(lab)[::-1][:top]
        dcg = np.dot(2.0 ** ranked - 1.0, disc)
        idcg = np.dot(2.0 ** ideal - 1.0, disc)
        out[q] = 1.0 if idcg == 0.0 else dcg / idcg
    return out
