import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from prefrank.core_model import (
    Hyperparams, ItemCatalog, ItemRecord, ModelParams, centered_within_blocks, log_sigmoid, pair_logit_prob,
    predicted_ranking, read_catalog_csv, sigmoid, utility, utility_matrix, write_catalog_csv,
)
from prefrank.errors import DimensionError, IngestionError, InvalidPairError

from conftest import make_catalog, random_params


def test_zero_params_give_zero_utility():
    cat = make_catalog()
    p = ModelParams.zeros(3, cat.n_features, cat.n_items, 2)
    assert all(utility(p, cat, i, j) == 0.0 for i in range(3) for j in range(cat.n_items))


def test_utility_hand_example():
    cat = ItemCatalog.from_records([ItemRecord("A", {"region": "bordeaux"}), ItemRecord("B", {"region": "rhone"})])
    beta = np.zeros(cat.n_features)
    beta[cat.feature_names.index("region=bordeaux")] = 1.3
    p = ModelParams(beta, np.array([0.2, 0.0]), np.zeros((1, 0)), np.zeros((2, 0)))
    assert utility(p, cat, 0, 0) == pytest.approx(1.5, abs=1e-15)


def test_utility_matches_reverse_order_summation(rng):
    cat = make_catalog((3, 4, 2), 9, rng)
    p = random_params(rng, cat, 4, 3)
    X = cat.design
    for i in range(4):
        for j in range(cat.n_items):
            total = 0.0
            for k in reversed(range(p.rank)):
                total += p.user_factors[i, k] * p.item_factors[j, k]
            total += p.alpha[j]
            for f in reversed(range(cat.n_features)):
                total += X[j, f] * p.beta[f]
            assert utility(p, cat, i, j) == pytest.approx(total, abs=1e-12)


def test_utility_index_errors():
    cat = make_catalog()
    p = ModelParams.zeros(2, cat.n_features, cat.n_items)
    with pytest.raises(IndexError):
        utility(p, cat, 2, 0)
    with pytest.raises(IndexError):
        utility(p, cat, 0, cat.n_items)


def test_pair_prob_examples():
    cat = make_catalog(n_items=3)
    p = ModelParams.zeros(1, cat.n_features, cat.n_items)
    assert pair_logit_prob(p, cat, 0, 0, 1) == 0.5
    p = p.copy(alpha=np.array([50.0, 0.0, math.log(3)]))
    assert abs(pair_logit_prob(p, cat, 0, 0, 1) - 1.0) <= 1e-15
    assert pair_logit_prob(p, cat, 0, 2, 1) == pytest.approx(0.75, abs=1e-15)
    with pytest.raises(InvalidPairError):
        pair_logit_prob(p, cat, 0, 1, 1)


def test_sigmoid_stable_at_extremes():
    t = np.array([-1000.0, -50.0, 0.0, 50.0, 1000.0])
    with np.errstate(over="raise"):
        s = sigmoid(t)
        ls = log_sigmoid(t)
    assert np.all(np.isfinite(s)) and np.all(np.isfinite(ls))
    assert s[0] == 0.0 and s[-1] == 1.0
    assert ls[0] == pytest.approx(-1000.0) and ls[-1] == 0.0
    assert isinstance(sigmoid(0.0), float) and isinstance(log_sigmoid(0.0), float)


@settings(max_examples=300, deadline=None)
@given(st.floats(-700, 700))
def test_sigmoid_symmetry(t):
    assert abs(sigmoid(t) + sigmoid(-t) - 1.0) <= 2.3e-16
    assert log_sigmoid(t) == pytest.approx(math.log(sigmoid(t)) if sigmoid(t) > 0 else log_sigmoid(t), rel=1e-12)


def test_predicted_ranking_examples():
    cat = ItemCatalog.from_records([ItemRecord(x, {"a": "x"}) for x in ("A", "B", "C")])
    p = ModelParams.zeros(1, cat.n_features, cat.n_items)
    assert predicted_ranking(p, cat, 0) == [0, 1, 2]
    p = p.copy(alpha=np.array([2.0, 1.0, 3.0]))
    assert [cat.item_ids[j] for j in predicted_ranking(p, cat, 0)] == ["C", "A", "B"]


def test_tie_break_uses_item_id_not_position():
    cat = ItemCatalog.from_records([ItemRecord(x, {"a": "x"}) for x in ("Z", "B", "M")])
    p = ModelParams.zeros(1, cat.n_features, cat.n_items)
    assert [cat.item_ids[j] for j in predicted_ranking(p, cat, 0)] == ["B", "M", "Z"]


def test_ranking_consistent_with_pair_probs(rng):
    cat = make_catalog((3, 3), 10, rng)
    p = random_params(rng, cat, 5, 2)
    for i in range(5):
        order = predicted_ranking(p, cat, i)
        for a, b in zip(order, order[1:]):
            assert pair_logit_prob(p, cat, i, a, b) > 0.5


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(-50, 50))
def test_translation_invariance(seed, c):
    rng = np.random.default_rng(seed)
    cat = make_catalog((2, 3), 5, rng)
    p = random_params(rng, cat, 2, 2)
    q = p.copy(alpha=p.alpha + c)
    for i in range(2):
        for w in range(5):
            for l in range(5):
                if w != l:
                    assert pair_logit_prob(q, cat, i, w, l) == pytest.approx(pair_logit_prob(p, cat, i, w, l), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_predicted_ranking_total_order(seed):
    rng = np.random.default_rng(seed)
    cat = make_catalog((2, 2), 7, rng)
    p = random_params(rng, cat, 1, 1)
    p = p.copy(alpha=np.round(p.alpha, 1))  # provoke ties
    order = predicted_ranking(p, cat, 0)
    assert sorted(order) == list(range(7))
    u = utility_matrix(p, cat)[0]
    key = {j: (-u[j], cat.item_ids[j]) for j in range(7)}
    assert all(key[a] < key[b] for a, b in zip(order, order[1:]))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_utility_linear_per_block(seed, a, b):
    rng = np.random.default_rng(seed)
    cat = make_catalog((3, 2), 6, rng)
    p1, p2 = random_params(rng, cat, 2, 2), random_params(rng, cat, 2, 2)
    z = ModelParams.zeros(2, cat.n_features, cat.n_items, 2)
    for block in ("beta", "alpha"):
        t1 = z.copy(**{block: getattr(p1, block)})
        t2 = z.copy(**{block: getattr(p2, block)})
        mix = z.copy(**{block: a * getattr(p1, block) + b * getattr(p2, block)})
        for j in range(6):
            assert utility(mix, cat, 0, j) == pytest.approx(a * utility(t1, cat, 0, j) + b * utility(t2, cat, 0, j), abs=1e-12)
    # the factor term is bilinear: linear in user factors with item factors held fixed
    t1 = z.copy(user_factors=p1.user_factors, item_factors=p1.item_factors)
    t2 = z.copy(user_factors=p2.user_factors, item_factors=p1.item_factors)
    mix = z.copy(user_factors=a * p1.user_factors + b * p2.user_factors, item_factors=p1.item_factors)
    for j in range(6):
        assert utility(mix, cat, 1, j) == pytest.approx(a * utility(t1, cat, 1, j) + b * utility(t2, cat, 1, j), abs=1e-12)


def test_catalog_validation():
    with pytest.raises(IngestionError):
        ItemCatalog.from_records([ItemRecord("A", {"a": "x"}), ItemRecord("A", {"a": "y"})])
    with pytest.raises(IngestionError):
        ItemCatalog((ItemRecord("A", {"a": "x"}),), (("a", ("x",)), ("b", ("y",))))
    with pytest.raises(IngestionError):
        ItemCatalog((ItemRecord("A", {"a": "x"}, (float("nan"),)),), (("a", ("x",)),), ("cov_z",))
    with pytest.raises(IngestionError):
        ItemCatalog((ItemRecord("A", {"a": "q"}),), (("a", ("x",)),))


def test_design_is_one_hot():
    cat = make_catalog((3, 4), 8)
    X = cat.design
    for block in cat.attribute_blocks():
        assert np.all(X[:, block].sum(axis=1) == 1)
    assert X.shape == (8, 7)


def test_params_validation():
    with pytest.raises(DimensionError):
        ModelParams(np.zeros(2), np.zeros(3), np.zeros((2, 2)), np.zeros((3, 1)))
    with pytest.raises(ValueError):
        ModelParams(np.array([np.inf]), np.zeros(1), np.zeros((1, 0)), np.zeros((1, 0)))


def test_hyperparams_specs():
    assert Hyperparams.for_spec("full", 2).free_blocks() == ("beta", "factors")
    assert Hyperparams.for_spec("attributes-only", 2).free_blocks() == ("beta",)
    assert Hyperparams.for_spec("factors-only", 2).free_blocks() == ("factors",)
    with pytest.raises(ValueError):
        Hyperparams(ridge_lambda=-1.0)
    with pytest.raises(ValueError):
        Hyperparams.for_spec("nope", 1)


def test_centering_removes_block_shift():
    cat = make_catalog((3, 2), 6)
    beta = np.arange(5.0)
    shifted = beta.copy()
    shifted[cat.attribute_blocks()[0]] += 7.0
    np.testing.assert_allclose(centered_within_blocks(beta, cat), centered_within_blocks(shifted, cat))


def test_catalog_csv_roundtrip(tmp_path, rng):
    cat = make_catalog((3, 2), 6, rng, n_cov=2)
    path = tmp_path / "catalog.csv"
    write_catalog_csv(cat, path)
    back = read_catalog_csv(path)
    assert back.item_ids == cat.item_ids
    np.testing.assert_array_equal(back.covariate_matrix(), cat.covariate_matrix())
    assert back.n_items == cat.n_items
    assert {tuple(r.attribute_levels.items()) for r in back.items} == {tuple(r.attribute_levels.items()) for r in cat.items}


def test_catalog_csv_errors(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("item_id,a,cov_z\nA,x,1.0\nA,y,2.0\n", encoding="utf-8")
    with pytest.raises(IngestionError):
        read_catalog_csv(path)
    path.write_text("item_id,a,cov_z\nA,x,abc\n", encoding="utf-8")
    with pytest.raises(IngestionError):
        read_catalog_csv(path)
