"""Command line interface: ``vecultr [--config F] [--seed N] [--out DIR] <command>``."""
from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from . import experiment as ex
from .clicks import ClickModel, load_click_matrix
from .letor import apply_norm, fit_norm, format_letor, generate_synthetic_dataset, load_letor, load_norm_stats, save_norm_stats
from .models import load_models
from .ranking import DEFAULT_KS, ndcg_at_k, numerical_rank, rank_query, singular_values


def _ks(text: str) -> tuple[int, ...]:
    try:
        ks = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise click.BadParameter(f"expected comma-separated integers, got {text!r}")
    if any(k < 1 for k in ks):
        raise click.BadParameter("cutoffs must be >= 1")
    return ks


def _config(ctx: click.Context) -> ex.ExperimentConfig:
    opts = ctx.obj
    try:
        cfg = ex.load_config(opts["config"]) if opts["config"] else ex.ExperimentConfig()
    except ex.ConfigError as exc:
        raise click.ClickException(str(exc))
    if opts["seed"] is not None:
        cfg = cfg.replace(seeds=(opts["seed"],))
    if opts["out"] is not None:
        cfg = cfg.replace(out=opts["out"])
    return cfg


def _fail(exc: Exception):
    raise click.ClickException(f"{type(exc).__name__}: {exc}")


@click.group()
@click.option("--config", "config", type=click.Path(exists=True, dir_okay=False), help="TOML experiment config.")
@click.option("--seed", type=int, default=None, help="Run this single seed instead of the configured list.")
@click.option("--out", type=click.Path(file_okay=False), default=None, help="Output directory.")
@click.pass_context
def main(ctx, config, seed, out):
    """Vector-based unbiased learning to rank experiments."""
    ctx.obj = {"config": config, "seed": seed, "out": out}


@main.command()
@click.option("--num-queries", type=int, default=200, show_default=True)
@click.option("--docs-per-query", type=int, default=15, show_default=True)
@click.option("--num-features", type=int, default=20, show_default=True)
@click.pass_context
def synth(ctx, num_queries, docs_per_query, num_features):
    """Write a synthetic dataset as LETOR files plus a norm-stats sidecar.

    The dataset seed is --seed (default 0).
    """
    seed = ctx.obj["seed"] if ctx.obj["seed"] is not None else 0
    out = Path(ctx.obj["out"] or ".")
    out.mkdir(parents=True, exist_ok=True)
    try:
        ds = generate_synthetic_dataset(num_queries, docs_per_query, num_features, seed)
    except ValueError as exc:
        _fail(exc)
    for name in ("train", "valid", "test"):
        (out / f"{name}.txt").write_text(format_letor(ds.split(name)))
    save_norm_stats(fit_norm(ds.train), out / "norm_stats.txt")
    click.echo(f"wrote {len(ds.train)}/{len(ds.valid)}/{len(ds.test)} queries to {out}")


def _print_report(rep: ex.RunReport, ks=DEFAULT_KS):
    cells = "  ".join(f"nDCG@{k} {rep.mean(k):.4f}±{rep.std(k):.4f}" for k in ks)
    click.echo(f"{rep.method} d={rep.dim} [{rep.digest}] {cells}")


@main.command()
@click.option("--method", type=click.Choice(ex.METHODS), default=None, help="Override the configured method.")
@click.option("--dim", type=click.IntRange(1), default=None, help="Override the embedding dimension.")
@click.pass_context
def train(ctx, method, dim):
    """Run the full pipeline for every configured seed."""
    cfg = _config(ctx)
    if method:
        cfg = cfg.replace(method=method)
    if dim:
        cfg = cfg.with_train(dim=dim)
    try:
        rep = ex.run_experiment(cfg)
    except (ValueError, OSError, FloatingPointError) as exc:
        _fail(exc)
    _print_report(rep)
    click.echo(f"outputs in {rep.out_dir}")


@main.command()
@click.argument("model_dir", type=click.Path(exists=True, file_okay=False))
@click.argument("letor_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--norm", "norm_path", type=click.Path(exists=True, dir_okay=False), help="Norm-stats sidecar; fitted on the input when omitted.")
@click.option("--output", type=click.Path(dir_okay=False), default=None, help="Ranked-list JSONL (stdout by default).")
def rank(model_dir, letor_file, norm_path, output):
    """Rank every query of a LETOR file with a trained model directory."""
    try:
        rel, _, base, manifest = load_models(model_dir)
        queries = load_letor(letor_file, rel.mlp.sizes[0])
        stats = load_norm_stats(norm_path) if norm_path else fit_norm(queries)
        queries = apply_norm(queries, stats)
    except (ValueError, OSError, KeyError) as exc:
        _fail(exc)
    fixed = manifest.get("fixed_base")
    lines = []
    for q in queries:
        rl = rank_query(rel, base, q.features, q.qid, fixed_base=fixed)
        lines.append(rl.to_json(q.labels))
    text = "\n".join(lines) + ("\n" if lines else "")
    if output:
        Path(output).write_text(text)
    else:
        click.echo(text, nl=False)


@main.command("eval")
@click.argument("ranked_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--ks", default="1,3,5,10", show_default=True, help="Comma-separated cutoffs.")
@click.option("--output", type=click.Path(dir_okay=False), default=None, help="Metrics CSV (stdout by default).")
def evaluate(ranked_file, ks, output):
    """Mean nDCG@k of a ranked-list JSONL that carries labels."""
    ks = _ks(ks)
    per_k = {k: [] for k in ks}
    with open(ranked_file) as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            if "labels" not in rec:
                raise click.ClickException(f"{ranked_file}:{n}: record has no labels")
            ranked = [rec["labels"][i] for i in rec["order"]]
            for k in ks:
                per_k[k].append(ndcg_at_k(ranked, k))
    if not per_k[ks[0]]:
        raise click.ClickException("no ranked lists found")
    text = "k,ndcg,n_queries\n" + "".join(f"{k},{float(np.mean(v))!r},{len(v)}\n" for k, v in per_k.items())
    if output:
        Path(output).write_text(text)
    else:
        click.echo(text, nl=False)


@main.command("sweep-dim")
@click.option("--dims", default="1,2,3,4,5", show_default=True, help="Comma-separated dimensions.")
@click.pass_context
def sweep_dim(ctx, dims):
    """Vectorization runs over several embedding dimensions."""
    cfg = _config(ctx).replace(method="vectorization")
    try:
        reports = ex.sweep_dimension(cfg, _ks(dims))
    except (ValueError, OSError, FloatingPointError) as exc:
        _fail(exc)
    for rep in reports:
        _print_report(rep)
    click.echo(f"pooled std nDCG@10 {ex.pooled_std(reports):.4f}; tidy CSV in {cfg.out}")


@main.command()
@click.option("--methods", default="vectorization,scalar_d1,naive_click,labeled_oracle", show_default=True)
@click.pass_context
def compare(ctx, methods):
    """Mean±std table of several methods on shared data and clicks."""
    cfg = _config(ctx)
    names = [m.strip() for m in methods.split(",") if m.strip()]
    bad = [m for m in names if m not in ex.METHODS]
    if bad:
        raise click.BadParameter(f"unknown method(s) {bad}; expected {ex.METHODS}")
    try:
        comp = ex.compare_methods(cfg, names)
    except (ValueError, OSError, FloatingPointError) as exc:
        _fail(exc)
    click.echo(comp.table())


@main.command("diagnose-matrix")
@click.argument("matrix_csv", required=False, type=click.Path(exists=True, dir_okay=False))
@click.option("--builtin", type=click.Choice(ex.SETTINGS), default=None, help="Use a built-in click matrix instead of a file.")
@click.option("--rel-tol", type=float, default=1e-6, show_default=True)
def diagnose_matrix(matrix_csv, builtin, rel_tol):
    """Singular values and numerical rank of a position x level click matrix."""
    if (matrix_csv is None) == (builtin is None):
        raise click.UsageError("give exactly one of MATRIX_CSV or --builtin")
    try:
        a = load_click_matrix(matrix_csv) if matrix_csv else getattr(ClickModel, builtin)().table
        sv = singular_values(a)
    except (ValueError, ArithmeticError, OSError) as exc:
        _fail(exc)
    click.echo("singular values: " + " ".join(f"{v:.6g}" for v in sv))
    click.echo(f"numerical rank (> {rel_tol:g} * sigma_1): {numerical_rank(sv, rel_tol)}")
    if len(sv) > 1 and sv[0] > 0:
        click.echo(f"sigma_2 / sigma_1: {sv[1] / sv[0]:.3e}")


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
