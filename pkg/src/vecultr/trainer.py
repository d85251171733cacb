"""Two-stage training.

Stage 1 fits the relevance model and the observation table jointly with a
listwise softmax cross entropy on clicks.  Stage 2 freezes the table and
fits the base model, a heteroscedastic Gaussian regression from features
to the observation embedding each document was shown with.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .clicks import N_POSITIONS, ClickModel, Display, InitialRanker, click_probs, display_order
from .letor import QueryList
from .models import LOG_VAR_MAX, LOG_VAR_MIN, BaseModel, ObservationModel, RelevanceModel
from .nn import AdaGrad, clip_by_global_norm
from .ranking import evaluate_lists, score_lists


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    batch_size: int = 32
    l2: float = 0.001
    dim: int = 5
    stage1_epochs: int = 300
    stage2_epochs: int = 200
    hidden: tuple[int, ...] = (64, 32)
    validate_every: int = 5
    click_mode: str = "online"  # or "fixed"
    fixed_sessions: int = 64
    adagrad_init: float = 0.1
    max_grad_norm: float | None = 5.0
    obs_init: str = "ones"
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.l2 < 0:
            raise ValueError("l2 must be >= 0")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.batch_size < 1 or self.validate_every < 1:
            raise ValueError("batch_size and validate_every must be >= 1")
        if self.obs_init not in ("ones", "glorot"):
            raise ValueError("obs_init must be 'ones' or 'glorot'")
        if self.click_mode not in ("online", "fixed"):
            raise ValueError("click_mode must be 'online' or 'fixed'")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))


@dataclass
class TrainReport:
    records: list[dict] = field(default_factory=list)
    best_epoch: dict[str, int] = field(default_factory=dict)

    def log(self, **rec):
        self.records.append(rec)

    def losses(self, stage: str) -> list[float]:
        return [r["loss"] for r in self.records if r["stage"] == stage]

    def to_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for r in self.records:
                fh.write(json.dumps(r, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Click-log preparation


@dataclass(frozen=True)
class DisplayedQuery:
    """A training list as shown to users: top documents in display order."""

    qid: int
    features: np.ndarray  # (m, F)
    positions: np.ndarray  # 1..m
    labels: np.ndarray  # 0-based grades


def build_displays(queries: Sequence[QueryList], ranker: InitialRanker, n: int = N_POSITIONS) -> list[DisplayedQuery]:
    out = []
    for q in queries:
        disp: Display = display_order(ranker, q, n)
        X = q.features[disp.doc_index]
        out.append(DisplayedQuery(q.qid, X, disp.positions, q.labels[disp.doc_index]))
    return out


class _Packed:
    """Concatenated arrays of a set of lists, sliced per batch."""

    def __init__(self, X_list, pos_list, aux_list):
        self.lengths = np.array([len(x) for x in X_list], dtype=np.int64)
        self.starts = np.concatenate([[0], np.cumsum(self.lengths)])
        self.X = np.concatenate(X_list)
        self.pos = np.concatenate(pos_list)
        self.aux = np.concatenate(aux_list)

    def take(self, idx):
        sl = [np.arange(self.starts[i], self.starts[i + 1]) for i in idx]
        rows = np.concatenate(sl)
        offsets = np.concatenate([[0], np.cumsum(self.lengths[idx])])
        return rows, offsets


def _pack_eval(queries: Sequence[QueryList]):
    X = np.concatenate([q.features for q in queries])
    labels = np.concatenate([q.labels for q in queries]).astype(np.float64)
    offsets = np.concatenate([[0], np.cumsum([len(q) for q in queries])])
    return X, labels, offsets


class _ClickSource:
    """Clicks per visited list: fresh draws (online) or a fixed session pool."""

    def __init__(self, model: ClickModel, packed: _Packed, config: TrainConfig, rng: np.random.Generator):
        self.probs = click_probs(model, packed.pos, packed.aux)
        self.mode = config.click_mode
        self.rng = rng
        self.packed = packed
        if self.mode == "fixed":
            K = config.fixed_sessions
            self.pool = (rng.random((K, len(self.probs))) < self.probs).astype(np.float64)
            self.visits = np.zeros(len(packed.lengths), dtype=np.int64)

    def draw(self, idx, rows):
        if self.mode == "online":
            return (self.rng.random(len(rows)) < self.probs[rows]).astype(np.float64)
        parts = []
        for i in idx:
            k = self.visits[i] % len(self.pool)
            self.visits[i] += 1
            parts.append(self.pool[k, self.packed.starts[i] : self.packed.starts[i + 1]])
        return np.concatenate(parts)


def _batches(n, batch_size, rng):
    perm = rng.permutation(n)
    return [perm[i : i + batch_size] for i in range(0, n, batch_size)]


# ---------------------------------------------------------------------------
# Losses


def click_loss(scores, clicks) -> tuple[float, np.ndarray]:
    """Softmax cross entropy of one list and its gradient wrt the scores."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise ValueError("empty list")
    clicks = np.asarray(clicks, dtype=np.float64)
    if clicks.shape != scores.shape:
        raise ValueError("scores and clicks differ in length")
    loss, grad = kernels.softmax_ce(scores, clicks, np.array([0, len(scores)]))
    return float(loss[0]), grad


def base_loss(mu, log_var, targets, l2: float = 0.0, theta_sq_norm: float = 0.0):
    """Gaussian negative log-likelihood (up to constants) plus L2 penalty.

    0.5 * sum_i sum_k [(mu_ik - o_ik)^2 exp(-s_ik) + s_ik] + l2 * ||theta||^2.
    Returns ``(loss, d_mu, d_log_var)``.
    """
    mu = np.asarray(mu, dtype=np.float64)
    s = np.asarray(log_var, dtype=np.float64)
    o = np.asarray(targets, dtype=np.float64)
    if mu.shape != s.shape or mu.shape != o.shape:
        raise ValueError("mu, log_var and targets differ in shape")
    if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(s)) and np.all(np.isfinite(o))):
        raise ValueError("non-finite input to base_loss")
    r = mu - o
    prec = np.exp(-s)
    loss = 0.5 * np.sum(r * r * prec + s) + l2 * theta_sq_norm
    return float(loss), r * prec, 0.5 * (1.0 - r * r * prec)


# ---------------------------------------------------------------------------
# Stage 1


@dataclass
class Stage1Result:
    rel: RelevanceModel
    obs: ObservationModel
    report: TrainReport


def _seed_streams(seed):
    ss = np.random.SeedSequence(seed)
    names = ("rel", "obs", "base", "batch1", "clicks", "batch2")
    return {n: np.random.default_rng(s) for n, s in zip(names, ss.spawn(len(names)))}


def _proxy_base(obs: ObservationModel) -> np.ndarray:
    return obs.table.mean(axis=0)


def click_batch_loss_and_grads(rel: RelevanceModel, obs: ObservationModel, X, positions, clicks, offsets):
    """Mean click loss over the lists of a batch and its gradients.

    Gradients are ordered like ``rel.mlp.params`` followed by the
    observation table.
    """
    offsets = np.asarray(offsets)
    R = rel.mlp.forward(X)
    O = obs.table[np.asarray(positions) - 1]
    scores = np.einsum("ij,ij->i", R, O)
    losses, g = kernels.softmax_ce(scores, clicks, offsets)
    B = len(offsets) - 1
    g = g / B
    grads, _ = rel.mlp.backward(g[:, None] * O)
    tg = np.zeros_like(obs.table)
    np.add.at(tg, np.asarray(positions) - 1, g[:, None] * R)
    grads.append(tg)
    return float(losses.sum() / B), grads


def _fit_listwise(
    rel: RelevanceModel,
    obs: ObservationModel,
    packed: _Packed,
    targets_for,
    config: TrainConfig,
    batch_rng,
    train_obs: bool,
    valid,
    report: TrainReport,
    stage: str,
):
    params = rel.mlp.params + ([obs.table] if train_obs else [])
    opt = AdaGrad(params, config.learning_rate, initial_accumulator=config.adagrad_init)
    best = (-np.inf, 0, [p.copy() for p in rel.mlp.params], obs.table.copy())
    n = len(packed.lengths)
    for epoch in range(1, config.stage1_epochs + 1):
        t0 = time.perf_counter()
        batch_losses = []
        for idx in _batches(n, config.batch_size, batch_rng):
            rows, offsets = packed.take(idx)
            T = targets_for(idx, rows)
            batch_loss, grads = click_batch_loss_and_grads(rel, obs, packed.X[rows], packed.pos[rows], T, offsets)
            if not np.isfinite(batch_loss):
                raise FloatingPointError(f"{stage}: non-finite loss at epoch {epoch}")
            batch_losses.append(batch_loss)
            if not train_obs:
                grads = grads[:-1]
            opt.step(clip_by_global_norm(grads, config.max_grad_norm))
        rec = {"stage": stage, "epoch": epoch, "loss": float(np.mean(batch_losses)), "valid_ndcg10": None}
        if valid is not None and (epoch % config.validate_every == 0 or epoch == config.stage1_epochs):
            Xv, Lv, Ov = valid
            s = score_lists(rel, None, Xv, Ov, fixed_base=_proxy_base(obs))
            v = float(np.mean(evaluate_lists(s, Lv, Ov, ks=(10,))[10]))
            rec["valid_ndcg10"] = v
            if v > best[0]:
                best = (v, epoch, [p.copy() for p in rel.mlp.params], obs.table.copy())
        rec["wall_time"] = time.perf_counter() - t0
        report.log(**rec)
    if valid is not None:
        rel.mlp.set_params(best[2])
        obs.table[...] = best[3]
        report.best_epoch[stage] = best[1]
    else:
        report.best_epoch[stage] = config.stage1_epochs


def train_stage1(
    displayed: Sequence[DisplayedQuery],
    click_model: ClickModel,
    config: TrainConfig,
    valid: Sequence[QueryList] | None = None,
    freeze_observation: bool = False,
) -> Stage1Result:
    """Jointly fit r and o on simulated clicks.

    With ``freeze_observation`` the table is a constant column of ones and
    only r is trained (d must be 1): the naive click baseline.
    """
    rngs = _seed_streams(config.seed)
    F = displayed[0].features.shape[1]
    rel = RelevanceModel(F, config.dim, config.hidden, rngs["rel"])
    if freeze_observation:
        obs = ObservationModel(config.dim, table=np.ones((N_POSITIONS, config.dim)))
    else:
        obs = ObservationModel(config.dim, rng=rngs["obs"], init=config.obs_init)
    packed = _Packed([d.features for d in displayed], [d.positions for d in displayed], [d.labels for d in displayed])
    source = _ClickSource(click_model, packed, config, rngs["clicks"])
    report = TrainReport()
    _fit_listwise(
        rel, obs, packed, source.draw, config, rngs["batch1"], not freeze_observation,
        _pack_eval(valid) if valid else None, report, "stage1",
    )
    return Stage1Result(rel, obs, report)


def train_labeled(queries: Sequence[QueryList], config: TrainConfig, valid: Sequence[QueryList] | None = None) -> Stage1Result:
    """Full-information ranker: same listwise loss with graded gains as targets."""
    cfg = TrainConfig(**{**config.__dict__, "dim": 1})
    rngs = _seed_streams(cfg.seed)
    F = queries[0].features.shape[1]
    rel = RelevanceModel(F, 1, cfg.hidden, rngs["rel"])
    obs = ObservationModel(1, table=np.ones((N_POSITIONS, 1)))
    # every document is given position 1; the frozen table makes it irrelevant
    packed = _Packed(
        [q.features for q in queries],
        [np.ones(len(q), dtype=np.int64) for q in queries],
        [q.labels for q in queries],
    )
    gains = 2.0 ** packed.aux.astype(np.float64) - 1.0
    report = TrainReport()
    _fit_listwise(
        rel, obs, packed, lambda idx, rows: gains[rows], cfg, rngs["batch1"], False,
        _pack_eval(valid) if valid else None, report, "stage1",
    )
    return Stage1Result(rel, obs, report)


# ---------------------------------------------------------------------------
# Stage 2


@dataclass
class Stage2Result:
    base: BaseModel
    report: TrainReport


def base_model_loss_and_grads(base: BaseModel, X, targets, l2: float, n_lists: int = 1):
    """Batch loss averaged over ``n_lists`` and gradients for every parameter."""
    d = base.dim
    raw = base.mlp.forward(X)
    mu, s_raw = raw[:, :d], raw[:, d:]
    s = np.clip(s_raw, LOG_VAR_MIN, LOG_VAR_MAX)
    sq = sum(float(np.sum(p * p)) for p in base.mlp.params)
    data_loss, d_mu, d_s = base_loss(mu, s, targets, 0.0)
    d_s = d_s * ((s_raw > LOG_VAR_MIN) & (s_raw < LOG_VAR_MAX))
    loss = data_loss / n_lists + l2 * sq
    grads, _ = base.mlp.backward(np.hstack([d_mu, d_s]) / n_lists)
    grads = [g + 2.0 * l2 * p for g, p in zip(grads, base.mlp.params)]
    return loss, grads


def train_stage2(
    displayed: Sequence[DisplayedQuery],
    obs: ObservationModel,
    config: TrainConfig,
    rel: RelevanceModel | None = None,
    valid: Sequence[QueryList] | None = None,
) -> Stage2Result:
    """Fit the base model to the frozen observation embeddings.

    Each displayed (x, p) pair is a regression example with target o(p).
    Validation (which needs ``rel``) picks the epoch with the best nDCG@10
    under full inference.
    """
    rngs = _seed_streams(config.seed)
    F = displayed[0].features.shape[1]
    base = BaseModel(F, obs.dim, config.hidden, rngs["base"])
    table = obs.table.copy()  # frozen targets
    packed = _Packed([d.features for d in displayed], [d.positions for d in displayed], [d.labels for d in displayed])
    opt = AdaGrad(base.mlp.params, config.learning_rate, initial_accumulator=config.adagrad_init)
    report = TrainReport()
    vpack = _pack_eval(valid) if (valid and rel is not None) else None
    best = (-np.inf, config.stage2_epochs, [p.copy() for p in base.mlp.params])
    n = len(packed.lengths)
    for epoch in range(1, config.stage2_epochs + 1):
        t0 = time.perf_counter()
        batch_losses = []
        for idx in _batches(n, config.batch_size, rngs["batch2"]):
            rows, _ = packed.take(idx)
            loss, grads = base_model_loss_and_grads(base, packed.X[rows], table[packed.pos[rows] - 1], config.l2, len(idx))
            if not np.isfinite(loss):
                raise FloatingPointError(f"stage2: non-finite loss at epoch {epoch}")
            batch_losses.append(loss)
            opt.step(clip_by_global_norm(grads, config.max_grad_norm))
        rec = {"stage": "stage2", "epoch": epoch, "loss": float(np.mean(batch_losses)), "valid_ndcg10": None}
        if vpack is not None and (epoch % config.validate_every == 0 or epoch == config.stage2_epochs):
            Xv, Lv, Ov = vpack
            v = float(np.mean(evaluate_lists(score_lists(rel, base, Xv, Ov), Lv, Ov, ks=(10,))[10]))
            rec["valid_ndcg10"] = v
            if v > best[0]:
                best = (v, epoch, [p.copy() for p in base.mlp.params])
        rec["wall_time"] = time.perf_counter() - t0
        report.log(**rec)
    if vpack is not None:
        base.mlp.set_params(best[2])
    report.best_epoch["stage2"] = best[1]
    return Stage2Result(base, report)
