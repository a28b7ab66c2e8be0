import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from prefrank.core_model import ModelParams, utility_matrix
from prefrank.errors import IngestionError
from prefrank.segmentation import (
    SegmentAssignment, composition_lift, fans_from_percentiles, fans_of, item_percentiles, lift_report,
    percentile_lift, percentile_lift_from_percentiles, percentiles_from_utilities, read_segments_csv,
    utility_percentile, write_lift_csv,
)

from conftest import make_catalog, random_params


def brute_percentile(row, item):
    below = ties = 0
    for k, u in enumerate(row):
        if k == item:
            continue
        if u < row[item]:
            below += 1
        elif u == row[item]:
            ties += 1
    return 100.0 * (below + 0.5 * ties) / (len(row) - 1)


def test_percentile_examples():
    U = np.arange(11.0)[None, :]
    assert percentiles_from_utilities(U, 10)[0] == 100.0
    assert percentiles_from_utilities(U, 0)[0] == 0.0
    flat = np.zeros((1, 11))
    assert all(percentiles_from_utilities(flat, j)[0] == 50.0 for j in range(11))
    with pytest.raises(ValueError):
        percentiles_from_utilities(np.zeros((1, 1)), 0)


@pytest.mark.parametrize("seed", range(5))
def test_percentiles_match_counting(seed):
    rng = np.random.default_rng(seed)
    cat = make_catalog((3, 2), 9, rng)
    p = random_params(rng, cat, 6, 2)
    V = utility_matrix(p, cat)
    for j in range(9):
        np.testing.assert_allclose(item_percentiles(p, cat, j), [brute_percentile(r, j) for r in V], atol=1e-12)
        assert utility_percentile(p, cat, 2, j) == pytest.approx(brute_percentile(V[2], j))
    # rounded utilities produce ties
    R = np.round(V)
    for j in range(9):
        np.testing.assert_allclose(percentiles_from_utilities(R, j), [brute_percentile(r, j) for r in R], atol=1e-12)


def test_fans_brute_force_top_k():
    rng = np.random.default_rng(7)
    cat = make_catalog((3, 3), 21, rng)
    p = random_params(rng, cat, 50, 2)
    V = utility_matrix(p, cat)
    for item in (0, 5, 20):
        for k in (5, 10, 30):
            # top k% of the other 20 items: item is beaten by at most 20 * k / 100 of them
            expect = {i for i in range(50) if np.sum(V[i] > V[i, item]) <= 20 * k / 100}
            assert fans_of(p, cat, item, k) == expect


def test_fans_boundaries():
    cat = make_catalog((2,), 5)
    beta = np.zeros(cat.n_features)
    alpha = np.array([3.0, 0.0, 1.0, 2.0, -1.0])
    p = ModelParams(beta, alpha, np.zeros((4, 0)), np.zeros((5, 0)))
    assert fans_of(p, cat, 0, 1.0) == {0, 1, 2, 3}  # every user's argmax
    assert fans_of(p, cat, 1, 99.999) == {0, 1, 2, 3}
    assert fans_of(p, cat, 4, 99.999) == set()  # bottom item sits at percentile 0
    with pytest.raises(ValueError):
        fans_of(p, cat, 0, 100.0)
    with pytest.raises(ValueError):
        fans_of(p, cat, 0, 0.0)


def test_composition_lift_examples():
    seg = SegmentAssignment(("a", "a", "b", "b", "c", "c", "d", "d"))
    lift = composition_lift({0, 2, 4, 6}, seg)
    assert all(v == pytest.approx(1.0) for v in lift.values())
    lift = composition_lift({0, 1}, seg)
    assert lift["a"] == pytest.approx(4.0) and lift["b"] == 0.0
    with pytest.raises(ValueError):
        composition_lift(set(), seg)


def test_percentile_lift_examples():
    seg = SegmentAssignment(("x", "x", "y", "y"))
    lift = percentile_lift_from_percentiles(np.array([70.0, 50.0, 30.0, 50.0]), seg)
    assert lift == pytest.approx({"x": 1.2, "y": 0.8})
    rng = np.random.default_rng(0)
    cat = make_catalog((3,), 6, rng)
    p = random_params(rng, cat, 10, 1)
    assert percentile_lift(p, cat, 2, SegmentAssignment(("all",) * 10)) == pytest.approx({"all": 1.0})


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(2, 5))
def test_mixture_identity_and_share_sums(seed, n_seg):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(5, 40))
    labels = tuple(f"s{x}" for x in rng.integers(0, n_seg, n))
    seg = SegmentAssignment(labels)
    fans = set(np.flatnonzero(rng.random(n) < 0.3).tolist()) or {0}
    lift = composition_lift(fans, seg)
    shares = {s: labels.count(s) / n for s in seg.segments()}
    assert sum(lift[s] * shares[s] for s in lift) == pytest.approx(1.0, abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_lift_report_invariants(seed):
    rng = np.random.default_rng(seed)
    cat = make_catalog((3, 2), 10, rng)
    p = random_params(rng, cat, 30, 2)
    seg = SegmentAssignment(tuple(rng.choice(["a", "b", "c"], 30).tolist()))
    rep = lift_report(p, cat, int(rng.integers(0, 10)), seg, 20.0)
    assert sum(r.population_share for r in rep.rows) == pytest.approx(1.0, abs=1e-9)
    if rep.n_fans:
        assert sum(r.fan_share for r in rep.rows) == pytest.approx(1.0, abs=1e-9)
        assert sum(r.composition_lift * r.population_share for r in rep.rows) == pytest.approx(1.0, abs=1e-9)
    for r in rep.rows:
        assert 0 <= r.population_share <= 1 and 0 <= r.mean_percentile <= 100


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_fans_monotone_in_threshold(seed):
    rng = np.random.default_rng(seed)
    U = rng.standard_normal((25, 8))
    if rng.random() < 0.5:
        U = np.round(U)
    pct = percentiles_from_utilities(U, int(rng.integers(0, 8)))
    ks = np.sort(rng.uniform(0.1, 99.9, 6))
    sets = [fans_from_percentiles(pct, k) for k in ks]
    assert all(a <= b for a, b in zip(sets, sets[1:]))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_lifts_invariant_to_increasing_transforms(seed):
    rng = np.random.default_rng(seed)
    U = rng.standard_normal((20, 7))
    # a different strictly increasing map per user
    T = np.vstack([np.exp(a * row) + b for row, a, b in zip(U, rng.uniform(0.1, 3, 20), rng.normal(size=20))])
    seg = SegmentAssignment(tuple(rng.choice(["a", "b"], 20).tolist()))
    for j in range(7):
        pa, pb = percentiles_from_utilities(U, j), percentiles_from_utilities(T, j)
        np.testing.assert_array_equal(pa, pb)
        assert fans_from_percentiles(pa, 30) == fans_from_percentiles(pb, 30)
        assert percentile_lift_from_percentiles(pa, seg) == percentile_lift_from_percentiles(pb, seg)


def test_shuffled_labels_concentrate_at_one():
    rng = np.random.default_rng(11)
    cat = make_catalog((3, 2), 12, rng)
    p = random_params(rng, cat, 400, 2)
    base = np.array(["a"] * 100 + ["b"] * 300)
    item = max(range(12), key=lambda j: len(fans_of(p, cat, j, 25.0)))
    fans = fans_of(p, cat, item, 25.0)
    assert 0 < len(fans) < 400
    comp, pct = [], []
    for _ in range(300):
        seg = SegmentAssignment(tuple(rng.permutation(base).tolist()))
        comp.append(composition_lift(fans, seg)["a"])
        pct.append(percentile_lift(p, cat, item, seg)["a"])
    for draws in (np.array(comp), np.array(pct)):
        se = draws.std(ddof=1) / np.sqrt(len(draws))
        assert abs(draws.mean() - 1.0) < 4 * se


def test_lift_report_with_no_fans_and_csv(tmp_path):
    cat = make_catalog((2,), 4)
    alpha = np.array([0.0, 1.0, 2.0, 3.0])
    p = ModelParams(np.zeros(cat.n_features), alpha, np.zeros((3, 0)), np.zeros((4, 0)))
    seg = SegmentAssignment(("a", "b", "b"))
    rep = lift_report(p, cat, 0, seg, 10.0)
    assert rep.n_fans == 0 and all(np.isnan(r.composition_lift) for r in rep.rows)
    write_lift_csv([rep, lift_report(p, cat, 3, seg, 10.0)], tmp_path / "lift.csv")
    lines = (tmp_path / "lift.csv").read_text().splitlines()
    assert lines[0].startswith("item_id,fan_threshold,segment") and len(lines) == 5
    assert "comp.lift" in rep.to_table()


def test_read_segments_csv(tmp_path):
    path = tmp_path / "s.csv"
    path.write_text("user_id,segment\nu1,a\nu2,b\n")
    assert read_segments_csv(path, ["u2", "u1"]).labels == ("b", "a")
    with pytest.raises(IngestionError):
        read_segments_csv(path, ["u1", "u3"])
    path.write_text("user_id,segment\nu1,a\nu1,b\n")
    with pytest.raises(IngestionError):
        read_segments_csv(path, ["u1"])
    path.write_text("user,segment\nu1,a\n")
    with pytest.raises(IngestionError):
        read_segments_csv(path, ["u1"])
