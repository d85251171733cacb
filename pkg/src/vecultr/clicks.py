"""Initial rankers, click models and click sampling.

Positions are 1-based (1..N_POSITIONS) and relevance levels are 1-based
(1..Y_MAX, level = label + 1) wherever a function takes ``p`` or ``y``.
Tables are stored position-major: ``table[p - 1, y - 1]``.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .letor import Y_MAX, Dataset, QueryList

N_POSITIONS = 10


# ---------------------------------------------------------------------------
# Initial ranker


@dataclass(frozen=True)
class InitialRanker:
    weights: np.ndarray

    def scores(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X, dtype=np.float64) @ self.weights


def train_initial_ranker(dataset: Dataset, fraction: float = 0.01, seed: int = 0, l2: float = 1e-2) -> InitialRanker:
    """Fit a linear scorer with pairwise logistic loss on a labeled sample.

    ``max(1, round(fraction * num_train_queries))`` training queries are
    drawn with ``seed``.  If the sample has comparable pairs but none of
    them differ in label, every linear scorer is equally good and zero
    weights are returned (ranking then falls back to the stable
    tie-break).
    """
    if not 0 < fraction <= 1:
        raise ValueError("fraction must be in (0, 1]")
    train = dataset.train
    if not train:
        raise ValueError("no training queries")
    rng = np.random.default_rng(seed)
    m = max(1, int(round(fraction * len(train))))
    picked = sorted(rng.choice(len(train), size=m, replace=False).tolist())

    diffs = []
    any_pairs = False
    for qi in picked:
        q = train[qi]
        X, y = q.features, q.labels
        if len(q) > 1:
            any_pairs = True
        hi, lo = np.nonzero(y[:, None] > y[None, :])
        if len(hi):
            diffs.append(X[hi] - X[lo])
    if not any_pairs:
        raise ValueError("sampled queries contain no document pairs")
    F = dataset.feature_count
    if not diffs:
        return InitialRanker(np.zeros(F))
    D = np.concatenate(diffs)

    def objective(w):
        m = D @ w
        loss = np.mean(np.logaddexp(0.0, -m)) + l2 * (w @ w)
        sig = 0.5 * (1.0 - np.tanh(0.5 * m))  # sigmoid(-m), overflow-free
        grad = -(D.T @ sig) / len(D) + 2.0 * l2 * w
        return loss, grad

    res = minimize(objective, np.zeros(F), jac=True, method="L-BFGS-B")
    return InitialRanker(np.asarray(res.x, dtype=np.float64))


@dataclass(frozen=True)
class Display:
    """Top of an initial ranking: ``doc_index[i]`` is shown at position i + 1."""

    qid: int
    doc_index: np.ndarray

    @property
    def positions(self) -> np.ndarray:
        return np.arange(1, len(self.doc_index) + 1)


def display_order(ranker: InitialRanker, query: QueryList, n: int = N_POSITIONS) -> Display:
    scores = ranker.scores(query.features)
    order = np.argsort(-scores, kind="stable")[:n]
    return Display(query.qid, order.astype(np.int64))


# ---------------------------------------------------------------------------
# Click models


def gamma(y: int) -> float:
    """Relevance probability of level ``y`` in 1..Y_MAX."""
    if not 1 <= y <= Y_MAX:
        raise ValueError(f"relevance level {y} outside [1, {Y_MAX}]")
    return (2.0 ** (y - 1) - 1.0) / (2.0 ** (Y_MAX - 1) - 1.0)


def gamma_table() -> np.ndarray:
    return np.array([gamma(y) for y in range(1, Y_MAX + 1)])


def _default_theta():
    return 1.0 / np.arange(1, N_POSITIONS + 1)


def _default_eps_plus():
    return 1.0 - (np.arange(1, N_POSITIONS + 1) + 1.0) / 100.0


def _default_eps_minus():
    return 0.65 / np.arange(1, N_POSITIONS + 1)


@dataclass(frozen=True)
class TrustBiasParams:
    theta: np.ndarray = field(default_factory=_default_theta)
    eps_plus: np.ndarray = field(default_factory=_default_eps_plus)
    eps_minus: np.ndarray = field(default_factory=_default_eps_minus)

    def __post_init__(self):
        for name in ("theta", "eps_plus", "eps_minus"):
            v = np.asarray(getattr(self, name), dtype=np.float64)
            object.__setattr__(self, name, v)
            if v.shape != (N_POSITIONS,):
                raise ValueError(f"{name} must have {N_POSITIONS} entries")
            if np.any((v < 0) | (v > 1)):
                raise ValueError(f"{name} entries must lie in [0, 1]")
        if np.any(self.eps_minus > self.eps_plus):
            raise ValueError("eps_minus must not exceed eps_plus")


def _check_position(p):
    if not 1 <= p <= N_POSITIONS:
        raise ValueError(f"position {p} outside [1, {N_POSITIONS}]")


def trust_click_prob(p: int, y: int, params: TrustBiasParams | None = None) -> float:
    _check_position(p)
    params = params or TrustBiasParams()
    g = gamma(y)
    i = p - 1
    return float(params.theta[i] * (params.eps_plus[i] * g + params.eps_minus[i] * (1.0 - g)))


class ClickMatrixError(ValueError):
    pass


def check_click_matrix(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.shape != (N_POSITIONS, Y_MAX):
        raise ClickMatrixError(f"click matrix must be {N_POSITIONS}x{Y_MAX}, got {a.shape}")
    if not np.all(np.isfinite(a)) or np.any((a < 0) | (a > 1)):
        raise ClickMatrixError("click rates must lie in [0, 1]")
    if np.any(np.diff(a, axis=1) < 0):
        raise ClickMatrixError("click rates must be nondecreasing in relevance level")
    return a


def trust_bias_table(params: TrustBiasParams | None = None) -> np.ndarray:
    params = params or TrustBiasParams()
    g = gamma_table()[None, :]
    th, ep, em = (v[:, None] for v in (params.theta, params.eps_plus, params.eps_minus))
    return th * (ep * g + em * (1.0 - g))


def pbm_table(theta: np.ndarray | None = None) -> np.ndarray:
    theta = _default_theta() if theta is None else np.asarray(theta, dtype=np.float64)
    return np.outer(theta, gamma_table())


def default_real_click_matrix(params: TrustBiasParams | None = None, amplitude: float = 0.1) -> np.ndarray:
    """Full-rank surrogate of an empirical position x level click matrix.

    Trust-bias rates times a deterministic multiplicative perturbation.
    Rows whose perturbation breaks monotonicity in level have their
    amplitude halved until the row is monotone again.
    """
    base = trust_bias_table(params)
    p = np.arange(1, N_POSITIONS + 1)[:, None]
    y = np.arange(1, Y_MAX + 1)[None, :]
    z = ((31 * p + 17 * y) % 7) / 7.0 - 0.5
    a = np.empty_like(base)
    for i in range(N_POSITIONS):
        amp = amplitude
        for _ in range(60):
            row = np.clip(base[i] * (1.0 + amp * z[i]), 0.0, 1.0)
            if np.all(np.diff(row) >= 0):
                break
            amp *= 0.5
        else:
            row = np.clip(base[i], 0.0, 1.0)
        a[i] = row
    return check_click_matrix(a)


def load_click_matrix(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = [[float(v) for v in r] for r in csv.reader(fh) if r]
    return check_click_matrix(np.array(rows))


def save_click_matrix(a: np.ndarray, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in np.asarray(a).tolist():
            w.writerow([repr(v) for v in row])


@dataclass(frozen=True)
class ClickModel:
    """Click rate c(p, y) for every position and relevance level."""

    kind: str
    table: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "table", check_click_matrix(self.table))

    def prob(self, p: int, y: int) -> float:
        _check_position(p)
        if not 1 <= y <= Y_MAX:
            raise ValueError(f"relevance level {y} outside [1, {Y_MAX}]")
        return float(self.table[p - 1, y - 1])

    @classmethod
    def real_matrix(cls, a=None):
        return cls("real_matrix", default_real_click_matrix() if a is None else a)

    @classmethod
    def trust_bias(cls, params: TrustBiasParams | None = None):
        return cls("trust_bias", trust_bias_table(params))

    @classmethod
    def pbm(cls, theta=None):
        return cls("pbm", pbm_table(theta))

    @classmethod
    def constant(cls, c: float):
        return cls("constant", np.full((N_POSITIONS, Y_MAX), float(c)))


# ---------------------------------------------------------------------------
# Sampling


@dataclass
class ClickLog:
    qid: int
    doc_index: np.ndarray
    positions: np.ndarray
    clicks: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        pos = np.asarray(self.positions)
        if len(pos) > N_POSITIONS or len(set(pos.tolist())) != len(pos):
            raise ValueError("positions must be distinct and at most 10 per query")
        if len(pos) and (pos.min() < 1 or pos.max() > N_POSITIONS):
            raise ValueError("positions must lie in 1..10")


def click_probs(model: ClickModel, positions: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Vectorized c(p, label + 1)."""
    return model.table[np.asarray(positions) - 1, np.asarray(labels)]


def sample_clicks(model: ClickModel, display: Display, labels: np.ndarray, rng: np.random.Generator, seed=None) -> ClickLog:
    """Independent Bernoulli clicks for one displayed list.

    ``labels`` are the 0-based grades of the displayed documents in
    display order.
    """
    probs = click_probs(model, display.positions, labels)
    clicks = (rng.random(len(probs)) < probs).astype(np.int8)
    return ClickLog(display.qid, display.doc_index, display.positions, clicks, seed)


def sample_sessions(model: ClickModel, positions, labels, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` independent sessions of one displayed list -> int8 array (n, m)."""
    probs = click_probs(model, positions, labels)
    return (rng.random((n, len(probs))) < probs).astype(np.int8)


def write_click_log(logs, path) -> None:
    with open(path, "w") as fh:
        for log in logs:
            rec = {
                "qid": int(log.qid),
                "positions": [int(p) for p in log.positions],
                "clicks": [int(c) for c in log.clicks],
                "doc_index": [int(i) for i in log.doc_index],
            }
            if log.seed is not None:
                rec["seed"] = int(log.seed)
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_click_log(path) -> list[ClickLog]:
    out = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                r = json.loads(line)
                out.append(
                    ClickLog(
                        r["qid"],
                        np.array(r["doc_index"], dtype=np.int64),
                        np.array(r["positions"], dtype=np.int64),
                        np.array(r["clicks"], dtype=np.int8),
                        r.get("seed"),
                    )
                )
    return out
