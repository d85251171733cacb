"""Segment kernels with a compiled backend and a numpy fallback.

The compiled extension ``vecultr._ckernels`` is used when it imports;
otherwise the numpy versions in ``vecultr._pykernels`` are used.  Both
backends agree to floating-point rounding; a given backend is
deterministic.

Call :func:`use_backend` to switch explicitly (tests and the benchmark
exercise both).
"""
import numpy as np

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    _BACKENDS["compiled"] = _ckernels

_active = _ckernels if _ckernels is not None else _pykernels


def available_backends():
    return sorted(_BACKENDS)


def backend_name():
    return "compiled" if _active is _ckernels and _ckernels is not None else "python"


def use_backend(name):
    """Select ``"compiled"`` or ``"python"``; returns the previous name."""
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"unknown or unavailable kernel backend {name!r}; have {available_backends()}")
    prev = backend_name()
    _active = _BACKENDS[name]
    return prev


def _offsets(offsets):
    offsets = np.ascontiguousarray(offsets, dtype=np.int64)
    if offsets.ndim != 1 or len(offsets) < 1 or offsets[0] != 0:
        raise ValueError("offsets must be a 1-D array starting at 0")
    if np.any(np.diff(offsets) <= 0):
        raise ValueError("every list must be non-empty")
    return offsets


def softmax_ce(scores, targets, offsets):
    """Per-list softmax cross entropy and gradient wrt the flat scores."""
    scores = np.ascontiguousarray(scores, dtype=np.float64)
    targets = np.ascontiguousarray(targets, dtype=np.float64)
    offsets = _offsets(offsets)
    if scores.shape != targets.shape or offsets[-1] != len(scores):
        raise ValueError("scores, targets and offsets disagree in length")
    return _active.softmax_ce(scores, targets, offsets)


def base_vectors(mu, log_var, offsets):
    """Per-list precision-weighted mean of ``mu`` -> array (num_lists, d)."""
    mu = np.ascontiguousarray(mu, dtype=np.float64)
    log_var = np.ascontiguousarray(log_var, dtype=np.float64)
    offsets = _offsets(offsets)
    if mu.ndim != 2 or mu.shape != log_var.shape or offsets[-1] != len(mu):
        raise ValueError("mu, log_var and offsets disagree in shape")
    return _active.base_vectors(mu, log_var, offsets)


def segment_argsort(scores, offsets):
    scores = np.ascontiguousarray(scores, dtype=np.float64)
    offsets = _offsets(offsets)
    return _active.segment_argsort(scores, offsets)


def segment_ndcg(scores, labels, offsets, k):
    """nDCG@k of every list when sorted by descending score."""
    if k < 1:
        raise ValueError("k must be >= 1")
    scores = np.ascontiguousarray(scores, dtype=np.float64)
    labels = np.ascontiguousarray(labels, dtype=np.float64)
    offsets = _offsets(offsets)
    return _active.segment_ndcg(scores, labels, offsets, int(k))
