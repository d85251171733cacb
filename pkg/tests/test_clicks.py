import numpy as np
import pytest
from scipy.stats import binomtest

from vecultr.clicks import (
    N_POSITIONS,
    ClickLog,
    ClickMatrixError,
    ClickModel,
    Display,
    InitialRanker,
    TrustBiasParams,
    check_click_matrix,
    default_real_click_matrix,
    display_order,
    gamma,
    gamma_table,
    load_click_matrix,
    pbm_table,
    read_click_log,
    sample_clicks,
    sample_sessions,
    save_click_matrix,
    train_initial_ranker,
    trust_bias_table,
    trust_click_prob,
    write_click_log,
)
from vecultr.letor import Dataset, Document, QueryList
from vecultr.ranking import ndcg_at_k


def test_gamma_values():
    np.testing.assert_allclose(gamma_table(), [0, 1 / 15, 3 / 15, 7 / 15, 1])
    with pytest.raises(ValueError):
        gamma(0)
    with pytest.raises(ValueError):
        gamma(6)


def test_trust_click_prob_by_hand():
    # p = 3, y = 4: theta = 1/3, eps+ = 0.96, eps- = 0.65/3, gamma = 7/15
    g = 7 / 15
    expect = (1 / 3) * (0.96 * g + (0.65 / 3) * (1 - g))
    assert trust_click_prob(3, 4) == pytest.approx(expect, abs=1e-15)
    assert trust_click_prob(2, 1) == pytest.approx(0.1625, abs=1e-15)
    with pytest.raises(ValueError):
        trust_click_prob(11, 1)


def test_trust_table_matches_pointwise():
    t = trust_bias_table()
    for p in range(1, 11):
        for y in range(1, 6):
            assert t[p - 1, y - 1] == pytest.approx(trust_click_prob(p, y), abs=1e-15)
    assert np.all(np.diff(t, axis=1) >= 0)
    assert np.all(np.diff(t, axis=0) <= 0)


def test_trust_params_validation():
    with pytest.raises(ValueError):
        TrustBiasParams(theta=np.ones(3))
    with pytest.raises(ValueError):
        TrustBiasParams(eps_plus=np.full(10, 0.1), eps_minus=np.full(10, 0.5))
    with pytest.raises(ValueError):
        TrustBiasParams(theta=np.full(10, 1.5))


def test_pbm_is_rank_one():
    assert np.linalg.matrix_rank(pbm_table()) == 1


def test_real_matrix_is_valid_and_close_to_trust():
    a = default_real_click_matrix()
    check_click_matrix(a)
    assert np.linalg.matrix_rank(a) == 5
    rel = np.abs(a - trust_bias_table()) / np.maximum(trust_bias_table(), 1e-12)
    assert rel.max() <= 0.05 + 1e-12


@pytest.mark.parametrize(
    "a",
    [np.zeros((9, 5)), np.full((10, 5), 1.5), np.full((10, 5), np.nan), np.tile([0.5, 0.4, 0.6, 0.7, 0.8], (10, 1))],
)
def test_check_click_matrix_rejects(a):
    with pytest.raises(ClickMatrixError):
        check_click_matrix(a)


def test_click_matrix_csv_roundtrip(tmp_path):
    a = default_real_click_matrix()
    save_click_matrix(a, tmp_path / "m.csv")
    np.testing.assert_array_equal(load_click_matrix(tmp_path / "m.csv"), a)


def test_click_model_prob():
    m = ClickModel.trust_bias()
    assert m.prob(2, 5) == pytest.approx(trust_click_prob(2, 5))
    with pytest.raises(ValueError):
        m.prob(1, 0)
    assert ClickModel.constant(0.3).prob(10, 1) == 0.3
    assert ClickModel.pbm().kind == "pbm"


def _ranker_dataset():
    rng = np.random.default_rng(0)
    qs = []
    for qid in range(1, 41):
        y = rng.integers(0, 5, size=8)
        X = np.column_stack([y + 0.3 * rng.normal(size=8), rng.normal(size=8)])
        qs.append(QueryList(qid, tuple(Document(qid, int(l), x) for l, x in zip(y, X))))
    return Dataset(qs[:30], qs[30:35], qs[35:], 2)


def test_initial_ranker_learns_signal():
    ds = _ranker_dataset()
    r = train_initial_ranker(ds, fraction=0.1, seed=0)
    assert r.weights[0] > abs(r.weights[1])
    nd = np.mean([ndcg_at_k(q.labels[np.argsort(-r.scores(q.features), kind="stable")], 10) for q in ds.test])
    assert nd > 0.9


def test_initial_ranker_deterministic_and_uses_fraction():
    ds = _ranker_dataset()
    a = train_initial_ranker(ds, 0.1, seed=1)
    b = train_initial_ranker(ds, 0.1, seed=1)
    np.testing.assert_array_equal(a.weights, b.weights)
    with pytest.raises(ValueError):
        train_initial_ranker(ds, 0.0)


def test_initial_ranker_tied_labels_give_zero_weights():
    q = QueryList(1, tuple(Document(1, 2, np.array([float(i), 1.0])) for i in range(4)))
    r = train_initial_ranker(Dataset([q], [], [], 2), fraction=1.0)
    np.testing.assert_array_equal(r.weights, 0.0)


def test_initial_ranker_needs_pairs():
    q = QueryList(1, (Document(1, 2, np.array([1.0])),))
    with pytest.raises(ValueError):
        train_initial_ranker(Dataset([q], [], [], 1), fraction=1.0)


def test_display_order_stable_and_truncated():
    q = QueryList(1, tuple(Document(1, 0, np.array([v])) for v in [1, 3, 3, 0, 2, 1, 1, 5, 0, 0, 4, 2]))
    d = display_order(InitialRanker(np.array([1.0])), q)
    assert d.doc_index.tolist() == [7, 10, 1, 2, 4, 11, 0, 5, 6, 3]
    assert d.positions.tolist() == list(range(1, 11))


def test_sample_clicks_extremes(rng):
    d = Display(1, np.arange(5))
    labels = np.array([0, 1, 2, 3, 4])
    assert sample_clicks(ClickModel.constant(0.0), d, labels, rng).clicks.sum() == 0
    assert sample_clicks(ClickModel.constant(1.0), d, labels, rng).clicks.sum() == 5


def test_sample_clicks_frequency(rng):
    # single-cell check at 99%; the full sweep lives in the acceptance suite
    m = ClickModel.trust_bias()
    d = Display(1, np.arange(10))
    labels = np.full(10, 3)
    n = 20000
    hits = sum(int(sample_clicks(m, d, labels, rng).clicks[1]) for _ in range(n))
    ci = binomtest(hits, n).proportion_ci(0.99)
    assert ci.low <= m.prob(2, 4) <= ci.high


def test_sample_sessions_shape(rng):
    s = sample_sessions(ClickModel.trust_bias(), np.arange(1, 11), np.full(10, 4), 50, rng)
    assert s.shape == (50, 10) and s.dtype == np.int8


def test_click_log_validation():
    with pytest.raises(ValueError):
        ClickLog(1, np.arange(2), np.array([1, 1]), np.zeros(2))
    with pytest.raises(ValueError):
        ClickLog(1, np.arange(2), np.array([0, 1]), np.zeros(2))
    with pytest.raises(ValueError):
        ClickLog(1, np.arange(11), np.arange(1, 12), np.zeros(11))


def test_click_log_roundtrip(tmp_path, rng):
    logs = [
        sample_clicks(ClickModel.trust_bias(), Display(q, np.arange(N_POSITIONS)[::-1]), np.arange(10) % 5, rng, seed=9)
        for q in range(3)
    ]
    write_click_log(logs, tmp_path / "c.jsonl")
    back = read_click_log(tmp_path / "c.jsonl")
    assert len(back) == 3
    for a, b in zip(logs, back):
        assert a.qid == b.qid and b.seed == 9
        np.testing.assert_array_equal(a.clicks, b.clicks)
        np.testing.assert_array_equal(a.doc_index, b.doc_index)
        np.testing.assert_array_equal(a.positions, b.positions)
