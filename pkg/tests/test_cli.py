import json

import numpy as np
import pytest
from click.testing import CliRunner

from vecultr.cli import main
from vecultr.clicks import pbm_table, save_click_matrix
from vecultr.ranking import ndcg_at_k

CONFIG = """
method = "vectorization"
[dataset.letor]
train = "data/train.txt"
valid = "data/valid.txt"
test = "data/test.txt"
[clicks]
setting = "trust_bias"
[ranker]
fraction = 0.1
[train]
dim = 2
stage1_epochs = 10
stage2_epochs = 5
hidden = [8]
[run]
seeds = [1, 2]
"""


@pytest.fixture
def workdir(tmp_path):
    runner = CliRunner()
    res = runner.invoke(main, ["--seed", "5", "--out", str(tmp_path / "data"), "synth", "--num-queries", "20", "--docs-per-query", "6", "--num-features", "5"])
    assert res.exit_code == 0, res.output
    (tmp_path / "cfg.toml").write_text(CONFIG)
    return tmp_path


def invoke(*args):
    res = CliRunner().invoke(main, [str(a) for a in args])
    return res


def test_synth_files(workdir):
    d = workdir / "data"
    for name in ("train.txt", "valid.txt", "test.txt", "norm_stats.txt"):
        assert (d / name).stat().st_size > 0
    assert len((d / "norm_stats.txt").read_text().splitlines()) == 5


def test_train_rank_eval(workdir):
    out = workdir / "runs"
    res = invoke("--config", workdir / "cfg.toml", "--out", out, "train")
    assert res.exit_code == 0, res.output
    assert "nDCG@10" in res.output
    (run_dir,) = [p for p in out.iterdir() if p.is_dir()]
    assert sorted(p.name for p in run_dir.glob("seed_*")) == ["seed_1", "seed_2"]

    ranked = workdir / "ranked.jsonl"
    res = invoke("rank", run_dir / "seed_1" / "model", workdir / "data" / "test.txt", "--norm", run_dir / "norm_stats.txt", "--output", ranked)
    assert res.exit_code == 0, res.output
    recs = [json.loads(l) for l in ranked.read_text().splitlines()]
    assert len(recs) == 4
    for r in recs:
        s = np.array(r["scores"])
        assert np.all(np.diff(s[r["order"]]) <= 0)

    res = invoke("eval", ranked, "--ks", "1,10")
    assert res.exit_code == 0, res.output
    lines = res.output.strip().splitlines()
    assert lines[0] == "k,ndcg,n_queries"
    expect = np.mean([ndcg_at_k([r["labels"][i] for i in r["order"]], 10) for r in recs])
    assert float(lines[2].split(",")[1]) == pytest.approx(expect)


def test_seed_flag_overrides(workdir):
    out = workdir / "runs"
    res = invoke("--config", workdir / "cfg.toml", "--out", out, "--seed", "9", "train", "--method", "naive_click")
    assert res.exit_code == 0, res.output
    (run_dir,) = [p for p in out.iterdir() if p.is_dir()]
    assert [p.name for p in run_dir.glob("seed_*")] == ["seed_9"]
    manifest = json.loads((run_dir / "seed_9" / "model" / "manifest.json").read_text())
    assert manifest["method"] == "naive_click" and manifest["fixed_base"] == [1.0]


def test_rank_on_stdout_for_fixed_base_model(workdir):
    out = workdir / "runs"
    invoke("--config", workdir / "cfg.toml", "--out", out, "--seed", "1", "train", "--method", "labeled_oracle")
    (run_dir,) = [p for p in out.iterdir() if p.is_dir()]
    res = invoke("rank", run_dir / "seed_1" / "model", workdir / "data" / "valid.txt")
    assert res.exit_code == 0, res.output
    assert len(res.output.strip().splitlines()) == 4


def test_sweep_and_compare(workdir):
    out = workdir / "runs"
    res = invoke("--config", workdir / "cfg.toml", "--out", out, "--seed", "1", "sweep-dim", "--dims", "1,2")
    assert res.exit_code == 0, res.output
    assert "pooled std" in res.output and len(list(out.glob("sweep-*.csv"))) == 1
    res = invoke("--config", workdir / "cfg.toml", "--out", out, "--seed", "1", "compare", "--methods", "vectorization,naive_click")
    assert res.exit_code == 0, res.output
    assert "vectorization vs naive_click" in res.output
    assert invoke("--config", workdir / "cfg.toml", "compare", "--methods", "vectorization,bogus").exit_code != 0


def test_diagnose_matrix(tmp_path):
    save_click_matrix(pbm_table(), tmp_path / "m.csv")
    res = invoke("diagnose-matrix", tmp_path / "m.csv")
    assert res.exit_code == 0, res.output
    assert "numerical rank (> 1e-06 * sigma_1): 1" in res.output
    res = invoke("diagnose-matrix", "--builtin", "trust_bias")
    assert "numerical rank (> 1e-06 * sigma_1): 2" in res.output
    assert invoke("diagnose-matrix").exit_code != 0


def test_diagnose_matrix_rejects_bad_csv(tmp_path):
    (tmp_path / "m.csv").write_text("0.5,0.4\n")
    res = invoke("diagnose-matrix", tmp_path / "m.csv")
    assert res.exit_code != 0 and "10x5" in res.output


def test_bad_config_reports_key(tmp_path):
    (tmp_path / "c.toml").write_text("[train]\nlearning_rat = 0.1\n")
    res = invoke("--config", tmp_path / "c.toml", "train")
    assert res.exit_code != 0 and "learning_rat" in res.output


def test_eval_needs_labels(tmp_path):
    (tmp_path / "r.jsonl").write_text('{"qid": 1, "order": [0], "scores": [0.0]}\n')
    assert invoke("eval", tmp_path / "r.jsonl").exit_code != 0
