"""Experiment configs and the end-to-end pipeline.

A run goes data -> initial ranker -> displayed lists -> clicks -> stage 1
-> stage 2 -> test ranking -> nDCG, once per seed.  Everything a run
writes lives under ``<out>/<digest>/`` where the digest hashes the
canonical config, so two different configs can never share a directory.

Config files are TOML::

    method = "vectorization"

    [dataset.synthetic]
    num_queries = 200
    docs_per_query = 15
    num_features = 20
    seed = 0

    [clicks]
    setting = "real_matrix"

    [train]
    dim = 5

    [run]
    seeds = [1, 2, 3, 4, 5]
    out = "runs"

See ``configs/example.toml`` for every key.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .clicks import (
    ClickModel,
    TrustBiasParams,
    display_order,
    load_click_matrix,
    sample_clicks,
    train_initial_ranker,
    write_click_log,
)
from .letor import Dataset, generate_synthetic_dataset, load_dataset, normalize, save_norm_stats
from .models import save_models, trust_bias_embeddings
from .ranking import DEFAULT_KS, RankedList, evaluate_lists, score_lists
from .trainer import TrainConfig, TrainReport, _pack_eval, build_displays, train_labeled, train_stage1, train_stage2
from . import kernels

METHODS = ("vectorization", "scalar_d1", "naive_click", "labeled_oracle", "analytic_trust")
SETTINGS = ("real_matrix", "trust_bias", "pbm")


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Config


@dataclass(frozen=True)
class SyntheticSource:
    num_queries: int = 200
    docs_per_query: int = 15
    num_features: int = 20
    seed: int = 0


@dataclass(frozen=True)
class LetorSource:
    train: str
    valid: str
    test: str


@dataclass(frozen=True)
class ClickSpec:
    """Click setting plus optional overrides.

    ``matrix`` is a ClickMatrix CSV used by ``real_matrix``; ``theta``,
    ``eps_plus`` and ``eps_minus`` override the trust-bias parameters
    (``theta`` alone also drives ``pbm``).
    """

    setting: str = "real_matrix"
    matrix: str | None = None
    theta: tuple[float, ...] | None = None
    eps_plus: tuple[float, ...] | None = None
    eps_minus: tuple[float, ...] | None = None

    def model(self) -> ClickModel:
        kw = {k: np.array(v) for k, v in (("theta", self.theta), ("eps_plus", self.eps_plus), ("eps_minus", self.eps_minus)) if v is not None}
        if self.setting == "real_matrix":
            if kw:
                raise ConfigError("real_matrix takes a matrix file, not trust-bias overrides")
            return ClickModel.real_matrix(load_click_matrix(self.matrix) if self.matrix else None)
        if self.matrix is not None:
            raise ConfigError(f"'matrix' only applies to real_matrix, not {self.setting}")
        if self.setting == "trust_bias":
            return ClickModel.trust_bias(TrustBiasParams(**kw))
        if set(kw) - {"theta"}:
            raise ConfigError("pbm only accepts a theta override")
        return ClickModel.pbm(kw.get("theta"))


@dataclass(frozen=True)
class RankerSpec:
    fraction: float = 0.01
    seed: int = 0


@dataclass(frozen=True)
class ExperimentConfig:
    method: str = "vectorization"
    dataset: SyntheticSource | LetorSource = field(default_factory=SyntheticSource)
    clicks: ClickSpec = field(default_factory=ClickSpec)
    ranker: RankerSpec = field(default_factory=RankerSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    seeds: tuple[int, ...] = (1, 2, 3, 4, 5)
    out: str = "runs"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.clicks.setting not in SETTINGS:
            raise ConfigError(f"unknown click setting {self.clicks.setting!r}; expected one of {SETTINGS}")
        if len(self.seeds) < 1:
            raise ConfigError("need at least one seed")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))

    @property
    def effective_dim(self) -> int:
        if self.method == "vectorization":
            return self.train.dim
        return 2 if self.method == "analytic_trust" else 1

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def with_train(self, **changes) -> "ExperimentConfig":
        return self.replace(train=dataclasses.replace(self.train, **changes))

    def to_dict(self) -> dict:
        """Canonical nested dict; round-trips through :func:`config_from_dict`."""
        src = self.dataset
        kind = "synthetic" if isinstance(src, SyntheticSource) else "letor"
        train = dataclasses.asdict(self.train)
        train.pop("seed")
        train["hidden"] = list(train["hidden"])
        clicks = {k: (list(v) if isinstance(v, tuple) else v) for k, v in dataclasses.asdict(self.clicks).items() if v is not None}
        return {
            "method": self.method,
            "dataset": {kind: dataclasses.asdict(src)},
            "clicks": clicks,
            "ranker": dataclasses.asdict(self.ranker),
            "train": train,
            "run": {"seeds": list(self.seeds), "out": self.out},
        }

    def digest(self) -> str:
        """Hash of every field that can change results (``out`` is excluded)."""
        d = self.to_dict()
        d["run"].pop("out")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def train_config(self, seed: int) -> TrainConfig:
        return dataclasses.replace(self.train, seed=seed, dim=self.effective_dim)


def _take(section: dict, allowed: Sequence[str], where: str) -> dict:
    if not isinstance(section, dict):
        raise ConfigError(f"[{where}] must be a table")
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in [{where}]: {', '.join(unknown)}")
    return dict(section)


def _fields(cls) -> list[str]:
    return [f.name for f in dataclasses.fields(cls)]


def config_from_dict(d: dict, base_dir: Path | None = None) -> ExperimentConfig:
    """Strictly build a config; unknown or invalid entries raise :class:`ConfigError`."""
    try:
        return _build_config(d, base_dir)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _build_config(d: dict, base_dir: Path | None) -> ExperimentConfig:
    top = _take(d, ["method", "dataset", "clicks", "ranker", "train", "run"], "top level")
    kw: dict[str, Any] = {}
    if "method" in top:
        kw["method"] = top["method"]
    if "dataset" in top:
        ds = _take(top["dataset"], ["synthetic", "letor"], "dataset")
        if len(ds) != 1:
            raise ConfigError("[dataset] needs exactly one of 'synthetic' or 'letor'")
        (kind, body), = ds.items()
        if kind == "synthetic":
            kw["dataset"] = SyntheticSource(**_take(body, _fields(SyntheticSource), "dataset.synthetic"))
        else:
            body = _take(body, _fields(LetorSource), "dataset.letor")
            missing = {"train", "valid", "test"} - set(body)
            if missing:
                raise ConfigError(f"[dataset.letor] missing {sorted(missing)}")
            if base_dir is not None:
                body = {k: str((base_dir / v).resolve()) for k, v in body.items()}
            kw["dataset"] = LetorSource(**body)
    if "clicks" in top:
        body = _take(top["clicks"], _fields(ClickSpec), "clicks")
        for k in ("theta", "eps_plus", "eps_minus"):
            if k in body:
                body[k] = tuple(float(v) for v in body[k])
        if "matrix" in body and base_dir is not None:
            body["matrix"] = str((base_dir / body["matrix"]).resolve())
        kw["clicks"] = ClickSpec(**body)
    if "ranker" in top:
        kw["ranker"] = RankerSpec(**_take(top["ranker"], _fields(RankerSpec), "ranker"))
    if "train" in top:
        allowed = [f for f in _fields(TrainConfig) if f != "seed"]
        body = _take(top["train"], allowed, "train")
        if "hidden" in body:
            body["hidden"] = tuple(body["hidden"])
        kw["train"] = TrainConfig(**body)
    if "run" in top:
        body = _take(top["run"], ["seeds", "out"], "run")
        if "seeds" in body:
            kw["seeds"] = tuple(body["seeds"])
        if "out" in body:
            kw["out"] = str(body["out"])
    return ExperimentConfig(**kw)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    with open(path, "rb") as fh:
        try:
            raw = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(raw, base_dir=path.parent)


# ---------------------------------------------------------------------------
# Running


@dataclass
class RunReport:
    digest: str
    method: str
    dim: int
    setting: str
    per_seed: dict[int, dict[int, float]]  # seed -> k -> mean test nDCG@k
    wall_time: float
    out_dir: Path | None = None
    valid_per_seed: dict[int, dict[int, float]] = field(default_factory=dict)

    @property
    def seeds(self) -> list[int]:
        return sorted(self.per_seed)

    def values(self, k: int = 10) -> np.ndarray:
        return np.array([self.per_seed[s][k] for s in self.seeds])

    def mean(self, k: int = 10) -> float:
        return float(np.mean(self.values(k)))

    def std(self, k: int = 10) -> float:
        v = self.values(k)
        return float(np.std(v, ddof=1)) if len(v) > 1 else 0.0


def build_dataset(config: ExperimentConfig) -> Dataset:
    src = config.dataset
    if isinstance(src, SyntheticSource):
        ds = generate_synthetic_dataset(src.num_queries, src.docs_per_query, src.num_features, src.seed)
    else:
        for p in (src.train, src.valid, src.test):
            if not Path(p).is_file():
                raise FileNotFoundError(p)
        ds = load_dataset(src.train, src.valid, src.test)
    ds = normalize(ds)
    if not ds.train or not ds.test:
        raise ValueError("dataset needs non-empty train and test splits")
    return ds


@dataclass
class _Prepared:
    dataset: Dataset
    click_model: ClickModel
    displayed: list
    ranker: Any


def _prepare(config: ExperimentConfig) -> _Prepared:
    ds = build_dataset(config)
    ranker = train_initial_ranker(ds, config.ranker.fraction, config.ranker.seed)
    return _Prepared(ds, config.clicks.model(), build_displays(ds.train, ranker), ranker)


def _fit_and_score(config: ExperimentConfig, prep: _Prepared, seed: int, seed_dir: Path | None):
    """Train one seed; returns (test scores, valid scores)."""
    ds = prep.dataset
    cfg = config.train_config(seed)
    Xt, Lt, Ot = _pack_eval(ds.test)
    Xv, Lv, Ov = _pack_eval(ds.valid) if ds.valid else (None, None, None)
    valid = ds.valid or None
    report = TrainReport()
    if config.method == "analytic_trust":
        # r = [gamma_y, 1] from the true grade, base vector [1, 0]
        emb = trust_bias_embeddings()
        score = lambda L: emb.relevance[L.astype(int)] @ emb.base
        return score(Lt), (score(Lv) if Lv is not None else None), report
    base, fixed = None, None
    if config.method == "labeled_oracle":
        s1 = train_labeled(ds.train, cfg, valid)
        fixed = np.ones(1)
    elif config.method == "naive_click":
        s1 = train_stage1(prep.displayed, prep.click_model, cfg, valid, freeze_observation=True)
        fixed = np.ones(1)
    else:
        s1 = train_stage1(prep.displayed, prep.click_model, cfg, valid)
        s2 = train_stage2(prep.displayed, s1.obs, cfg, s1.rel, valid)
        base = s2.base
        s1.report.records += s2.report.records
        s1.report.best_epoch.update(s2.report.best_epoch)
    report = s1.report
    if seed_dir is not None:
        extra = {"method": config.method, "seed": seed, "best_epoch": report.best_epoch}
        if fixed is not None:
            extra["fixed_base"] = fixed.tolist()
        save_models(seed_dir / "model", s1.rel, s1.obs, base, extra)
    test = score_lists(s1.rel, base, Xt, Ot, fixed_base=fixed)
    val = score_lists(s1.rel, base, Xv, Ov, fixed_base=fixed) if Xv is not None else None
    return test, val, report


def _metrics_rows(digest, method, dim, seed, split, per_k):
    return [[digest, method, dim, seed, split, k, repr(float(v))] for k, v in per_k.items()]


def _write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    path.write_text(buf.getvalue())


def _claim_dir(config: ExperimentConfig) -> Path:
    """Create ``<out>/<digest>`` or verify it belongs to this config."""
    out = Path(config.out) / config.digest()
    out.mkdir(parents=True, exist_ok=True)
    cfg_path = out / "config.json"
    d = config.to_dict()
    d["run"].pop("out")
    text = json.dumps(d, indent=2, sort_keys=True) + "\n"
    if cfg_path.exists() and cfg_path.read_text() != text:
        raise FileExistsError(f"{out} holds outputs of a different config")
    cfg_path.write_text(text)
    return out


def run_experiment(config: ExperimentConfig, ks: Sequence[int] = DEFAULT_KS, write: bool = True, prepared=None) -> RunReport:
    """Run every seed of ``config``; artifacts go under ``<out>/<digest>/``.

    Per seed: ``model/`` checkpoints, ``train_report.jsonl``,
    ``clicks.jsonl`` (one sampled session per training list),
    ``ranked_test.jsonl`` and ``metrics.csv``.  The run directory also
    gets ``norm_stats.txt`` and an aggregate ``metrics.csv``.  Metrics
    files carry no timings so reruns are byte-identical.
    """
    t0 = time.perf_counter()
    prep = prepared or _prepare(config)
    digest = config.digest()
    out = _claim_dir(config) if write else None
    if out is not None and prep.dataset.norm is not None:
        save_norm_stats(prep.dataset.norm, out / "norm_stats.txt")
    _, Lt, Ot = _pack_eval(prep.dataset.test)
    _, Lv, Ov = _pack_eval(prep.dataset.valid) if prep.dataset.valid else (None, None, None)
    dim = config.effective_dim
    per_seed, valid_seed = {}, {}
    for seed in config.seeds:
        seed_dir = None
        if out is not None:
            seed_dir = out / f"seed_{seed}"
            seed_dir.mkdir(exist_ok=True)
        test_scores, valid_scores, report = _fit_and_score(config, prep, seed, seed_dir)
        per_seed[seed] = {k: float(np.mean(v)) for k, v in evaluate_lists(test_scores, Lt, Ot, ks).items()}
        if valid_scores is not None:
            valid_seed[seed] = {k: float(np.mean(v)) for k, v in evaluate_lists(valid_scores, Lv, Ov, ks).items()}
        if seed_dir is not None:
            report.to_jsonl(seed_dir / "train_report.jsonl")
            _write_session_log(prep, seed, seed_dir / "clicks.jsonl")
            _write_ranked(prep.dataset.test, test_scores, Ot, seed_dir / "ranked_test.jsonl")
            rows = _metrics_rows(digest, config.method, dim, seed, "test", per_seed[seed])
            if seed in valid_seed:
                rows += _metrics_rows(digest, config.method, dim, seed, "valid", valid_seed[seed])
            _write_csv(seed_dir / "metrics.csv", ["run", "method", "dim", "seed", "split", "k", "ndcg"], rows)
    rep = RunReport(digest, config.method, dim, config.clicks.setting, per_seed, time.perf_counter() - t0, out, valid_seed)
    if out is not None:
        write_summary_csv(out / "metrics.csv", [rep], ks)
    return rep


def _write_session_log(prep: _Prepared, seed: int, path: Path) -> None:
    # an independent stream so the log never perturbs training
    rng = np.random.default_rng([seed, 0x10C])
    logs = []
    for q in prep.dataset.train:
        disp = display_order(prep.ranker, q)
        logs.append(sample_clicks(prep.click_model, disp, q.labels[disp.doc_index], rng, seed))
    write_click_log(logs, path)


def _write_ranked(queries, scores, offsets, path: Path) -> None:
    order = kernels.segment_argsort(scores, offsets)
    with open(path, "w") as fh:
        for i, q in enumerate(queries):
            lo, hi = offsets[i], offsets[i + 1]
            rl = RankedList(q.qid, order[lo:hi], scores[lo:hi])
            fh.write(rl.to_json(q.labels) + "\n")


def write_summary_csv(path, reports: Sequence[RunReport], ks: Sequence[int] = DEFAULT_KS) -> None:
    """One row per (run, method, dim, split, k): mean and std over seeds."""
    rows = []
    for r in sorted(reports, key=lambda r: (r.method, r.dim, r.digest)):
        for split, table in (("test", r.per_seed), ("valid", r.valid_per_seed)):
            if not table:
                continue
            for k in ks:
                v = np.array([table[s][k] for s in sorted(table)])
                sd = float(np.std(v, ddof=1)) if len(v) > 1 else 0.0
                rows.append([r.digest, r.method, r.dim, split, k, repr(float(v.mean())), repr(sd), len(v)])
    _write_csv(Path(path), ["run", "method", "dim", "split", "k", "mean", "std", "n_seeds"], rows)


# ---------------------------------------------------------------------------
# Sweeps and comparisons


def sweep_dimension(config: ExperimentConfig, dims: Sequence[int], ks: Sequence[int] = DEFAULT_KS, write: bool = True) -> list[RunReport]:
    """One vectorization run per dimension over the shared data and clicks.

    Writes a tidy ``sweep-<digest>.csv`` (dim, seed, k, ndcg) under ``out``.
    """
    dims = list(dims)
    if not dims or any(d not in range(1, 6) for d in dims):
        raise ValueError("dims must be a nonempty subset of 1..5")
    if config.method != "vectorization":
        raise ValueError("the dimension sweep applies to method 'vectorization'")
    prep = _prepare(config)
    reports = [run_experiment(config.with_train(dim=d), ks, write, prep) for d in dims]
    if write:
        rows = [[r.dim, s, k, repr(r.per_seed[s][k])] for r in reports for s in r.seeds for k in ks]
        out = Path(config.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_csv(out / f"sweep-{config.digest()}.csv", ["dim", "seed", "k", "ndcg"], rows)
    return reports


def pooled_std(reports: Sequence[RunReport], k: int = 10) -> float:
    """Square root of the mean per-report seed variance."""
    return float(math.sqrt(np.mean([r.std(k) ** 2 for r in reports])))


def increment(a: float, b: float) -> float:
    """Relative gain of ``a`` over ``b`` in percent, two decimals."""
    if b == 0:
        raise ZeroDivisionError("baseline mean is zero")
    return round((a - b) / b * 100.0, 2)


@dataclass
class Comparison:
    reports: list[RunReport]
    ks: tuple[int, ...]

    def by_method(self) -> dict[str, RunReport]:
        return {r.method: r for r in self.reports}

    def increments(self) -> dict[str, dict[int, float]]:
        """Increment of the first method over each of the others."""
        head, *rest = self.reports
        return {r.method: {k: increment(head.mean(k), r.mean(k)) for k in self.ks} for r in rest}

    def table(self) -> str:
        cols = [f"nDCG@{k}" for k in self.ks]
        head = self.reports[0].method
        incs = self.increments()
        labels = [r.method for r in self.reports] + [f"{head} vs {m}" for m in incs]
        width = max(map(len, labels)) + 2
        lines = ["method".ljust(width) + "".join(c.rjust(18) for c in cols)]
        for r in self.reports:
            cells = "".join(f"{r.mean(k):.4f}±{r.std(k):.4f}".rjust(18) for k in self.ks)
            lines.append(r.method.ljust(width) + cells)
        for m, inc in incs.items():
            cells = "".join(f"{inc[k]:+.2f}%".rjust(18) for k in self.ks)
            lines.append(f"{head} vs {m}".ljust(width) + cells)
        return "\n".join(lines)


def compare_methods(config: ExperimentConfig, methods: Sequence[str], ks: Sequence[int] = DEFAULT_KS, write: bool = True) -> Comparison:
    """Run each method on the same data, ranker, clicks and seeds."""
    methods = list(methods)
    if len(methods) < 2:
        raise ValueError("need at least two methods")
    if len(set(methods)) != len(methods):
        raise ValueError("methods must be distinct")
    prep = _prepare(config.replace(method=methods[0]))
    reports = [run_experiment(config.replace(method=m), ks, write, prep) for m in methods]
    comp = Comparison(reports, tuple(ks))
    if write:
        out = Path(config.out)
        out.mkdir(parents=True, exist_ok=True)
        write_summary_csv(out / f"compare-{config.digest()}.csv", reports, ks)
    return comp
