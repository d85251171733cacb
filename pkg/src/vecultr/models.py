"""Relevance, observation and base models and the trust-bias construction.

Click scores combine a relevance embedding r(x) and an observation
embedding o(p) by dot product; with ``dim == 1`` this is the usual
product of a relevance scalar and an examination scalar.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .clicks import N_POSITIONS, TrustBiasParams, gamma_table
from .nn import Mlp, glorot_uniform, load_arrays, load_mlp, save_arrays, save_mlp

LOG_VAR_MIN = -10.0
LOG_VAR_MAX = 10.0


class RelevanceModel:
    def __init__(self, num_features: int, dim: int, hidden=(64, 32), rng=None):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.dim = dim
        self.mlp = Mlp([num_features, *hidden, dim], rng)

    def __call__(self, X) -> np.ndarray:
        return self.mlp.forward(X)


class ObservationModel:
    """Learnable ``(n_positions, dim)`` table; row p - 1 is o(p).

    ``init="ones"`` starts every position at the all-ones vector plus a
    small symmetry-breaking jitter, i.e. from the unbiased click model;
    ``init="glorot"`` draws uniform Glorot values of either sign.
    """

    def __init__(self, dim: int, n_positions: int = N_POSITIONS, rng=None, table=None, init: str = "ones"):
        if table is not None:
            self.table = np.array(table, dtype=np.float64)
        elif rng is None:
            self.table = np.zeros((n_positions, dim))
        elif init == "ones":
            self.table = 1.0 + 0.01 * rng.standard_normal((n_positions, dim))
        elif init == "glorot":
            self.table = glorot_uniform(rng, n_positions, dim, shape=(n_positions, dim))
        else:
            raise ValueError(f"unknown observation init {init!r}")
        self.dim = self.table.shape[1]
        self.n_positions = self.table.shape[0]

    def __call__(self, positions) -> np.ndarray:
        p = np.asarray(positions)
        if np.any((p < 1) | (p > self.n_positions)):
            raise ValueError(f"positions must lie in 1..{self.n_positions}")
        return self.table[p - 1]


@dataclass(frozen=True)
class GaussianEstimate:
    mu: np.ndarray
    log_var: np.ndarray

    @property
    def var(self) -> np.ndarray:
        return np.exp(self.log_var)


class BaseModel:
    """MLP with ``2 * dim`` outputs: mean then log-variance."""

    def __init__(self, num_features: int, dim: int, hidden=(64, 32), rng=None):
        self.dim = dim
        self.mlp = Mlp([num_features, *hidden, 2 * dim], rng)

    def raw(self, X) -> np.ndarray:
        return self.mlp.forward(X)


def split_gaussian(raw: np.ndarray, dim: int) -> tuple[np.ndarray, np.ndarray]:
    mu = raw[..., :dim]
    s = np.clip(raw[..., dim:], LOG_VAR_MIN, LOG_VAR_MAX)
    return mu, s


def predict_gaussian(base: BaseModel, x) -> GaussianEstimate:
    mu, s = split_gaussian(base.raw(x), base.dim)
    return GaussianEstimate(mu, s)


def click_score(rel: RelevanceModel, obs: ObservationModel, x, p) -> float:
    """r(x)^T o(p) for a single document at position ``p``."""
    if rel.dim != obs.dim:
        raise ValueError("relevance and observation dimensions differ")
    return float(np.dot(rel(np.asarray(x, dtype=np.float64)), obs(np.array([p]))[0]))


def click_scores(rel_emb: np.ndarray, obs_emb: np.ndarray) -> np.ndarray:
    """Row-wise dot products of aligned relevance/observation embeddings."""
    return np.einsum("ij,ij->i", rel_emb, obs_emb)


@dataclass(frozen=True)
class TrustEmbeddings:
    relevance: np.ndarray  # (Y_MAX, 2): row y - 1 is [gamma_y, 1]
    observation: np.ndarray  # (N_POSITIONS, 2)
    base: np.ndarray  # [1, 0]


def trust_bias_embeddings(params: TrustBiasParams | None = None, gammas=None) -> TrustEmbeddings:
    """Exact 2-d factorization of trust-bias click rates.

    r(y) = [gamma_y, 1] and o(p) = theta_p [eps+_p - eps-_p, eps-_p]; their
    dot product is theta_p (eps+_p gamma_y + eps-_p (1 - gamma_y)), and
    projecting r onto the base vector [1, 0] returns gamma_y.
    """
    params = params or TrustBiasParams()
    g = gamma_table() if gammas is None else np.asarray(gammas, dtype=np.float64)
    rel = np.column_stack([g, np.ones_like(g)])
    obs = params.theta[:, None] * np.column_stack([params.eps_plus - params.eps_minus, params.eps_minus])
    return TrustEmbeddings(rel, obs, np.array([1.0, 0.0]))


# ---------------------------------------------------------------------------
# Persistence


def save_models(directory, rel: RelevanceModel, obs: ObservationModel, base: BaseModel | None, extra=None) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    save_mlp(rel.mlp, d / "relevance.ckpt")
    save_arrays(d / "observation.ckpt", "table", obs.table.shape, [obs.table])
    if base is not None:
        save_mlp(base.mlp, d / "base.ckpt")
    manifest = {
        "dim": rel.dim,
        "n_positions": obs.n_positions,
        "num_features": rel.mlp.sizes[0],
        "has_base": base is not None,
    }
    manifest.update(extra or {})
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_models(directory) -> tuple[RelevanceModel, ObservationModel, BaseModel | None, dict]:
    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text())
    rel_mlp = load_mlp(d / "relevance.ckpt")
    rel = RelevanceModel.__new__(RelevanceModel)
    rel.dim, rel.mlp = manifest["dim"], rel_mlp
    kind, _, arrays = load_arrays(d / "observation.ckpt")
    if kind != "table":
        raise ValueError("observation checkpoint is not a table")
    obs = ObservationModel(manifest["dim"], table=arrays[0])
    base = None
    if manifest.get("has_base"):
        base = BaseModel.__new__(BaseModel)
        base.dim, base.mlp = manifest["dim"], load_mlp(d / "base.ckpt")
    return rel, obs, base, manifest
