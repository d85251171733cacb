import numpy as np
import pytest

from vecultr.clicks import TrustBiasParams, gamma_table, trust_bias_table, trust_click_prob
from vecultr.models import (
    LOG_VAR_MAX,
    BaseModel,
    ObservationModel,
    RelevanceModel,
    click_score,
    click_scores,
    load_models,
    predict_gaussian,
    save_models,
    split_gaussian,
    trust_bias_embeddings,
)


def test_trust_embeddings_reproduce_click_rates():
    emb = trust_bias_embeddings()
    table = emb.observation @ emb.relevance.T
    np.testing.assert_allclose(table, trust_bias_table(), atol=1e-15)
    assert abs(emb.observation[4] @ emb.relevance[2] - trust_click_prob(5, 3)) < 1e-15


def test_trust_embeddings_custom_params():
    rng = np.random.default_rng(1)
    eps_minus = rng.uniform(0, 0.3, 10)
    params = TrustBiasParams(theta=rng.uniform(0.1, 1, 10), eps_plus=eps_minus + 0.5, eps_minus=eps_minus)
    emb = trust_bias_embeddings(params)
    np.testing.assert_allclose(emb.observation @ emb.relevance.T, trust_bias_table(params), atol=1e-15)


def test_projection_recovers_gamma():
    emb = trust_bias_embeddings()
    np.testing.assert_array_equal(emb.relevance @ emb.base, gamma_table())


def test_d1_is_scalar_product(rng):
    rel = RelevanceModel(3, 1, (4,), rng)
    obs = ObservationModel(1, rng=rng)
    x = rng.normal(size=3)
    assert click_score(rel, obs, x, 4) == pytest.approx(rel(x)[0] * obs.table[3, 0])


def test_click_score_dimension_mismatch(rng):
    with pytest.raises(ValueError):
        click_score(RelevanceModel(3, 2, (4,), rng), ObservationModel(3, rng=rng), np.zeros(3), 1)


def test_click_scores_rowwise():
    R = np.array([[1.0, 2.0], [0.5, 0.0]])
    O = np.array([[3.0, 1.0], [4.0, 9.0]])
    np.testing.assert_array_equal(click_scores(R, O), [5.0, 2.0])


def test_observation_positions_checked(rng):
    obs = ObservationModel(2, rng=rng)
    assert obs(np.array([1, 10])).shape == (2, 2)
    with pytest.raises(ValueError):
        obs(np.array([0]))
    with pytest.raises(ValueError):
        obs(np.array([11]))


def test_observation_inits(rng):
    ones = ObservationModel(3, rng=rng, init="ones")
    assert np.abs(ones.table - 1).max() < 0.1
    glorot = ObservationModel(3, rng=rng, init="glorot")
    assert np.abs(glorot.table).max() <= np.sqrt(6 / 13)
    with pytest.raises(ValueError):
        ObservationModel(3, rng=rng, init="bogus")


def test_split_gaussian_clamps():
    raw = np.array([[0.5, -1.0, 50.0, -50.0]])
    mu, s = split_gaussian(raw, 2)
    np.testing.assert_array_equal(mu, [[0.5, -1.0]])
    np.testing.assert_array_equal(s, [[LOG_VAR_MAX, -LOG_VAR_MAX]])


def test_predict_gaussian_shapes(rng):
    base = BaseModel(4, 3, (5,), rng)
    est = predict_gaussian(base, rng.normal(size=(7, 4)))
    assert est.mu.shape == est.log_var.shape == (7, 3)
    np.testing.assert_allclose(est.var, np.exp(est.log_var))


def test_relevance_dim_validation(rng):
    with pytest.raises(ValueError):
        RelevanceModel(3, 0, (4,), rng)


def test_save_load_models(tmp_path, rng):
    rel = RelevanceModel(4, 2, (6,), rng)
    obs = ObservationModel(2, rng=rng)
    base = BaseModel(4, 2, (6,), rng)
    save_models(tmp_path, rel, obs, base, {"method": "vectorization"})
    r2, o2, b2, man = load_models(tmp_path)
    X = rng.normal(size=(3, 4))
    np.testing.assert_array_equal(r2(X), rel(X))
    np.testing.assert_array_equal(o2.table, obs.table)
    np.testing.assert_array_equal(b2.raw(X), base.raw(X))
    assert man["method"] == "vectorization" and man["dim"] == 2


def test_save_models_without_base(tmp_path, rng):
    save_models(tmp_path, RelevanceModel(2, 1, (3,), rng), ObservationModel(1, rng=rng), None)
    assert load_models(tmp_path)[2] is None
