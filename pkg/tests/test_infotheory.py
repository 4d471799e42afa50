import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import digamma

from synergyfe.infotheory import (
    DegenerateVariableWarning,
    EstimatorConfig,
    IIEntry,
    VariableView,
    count_within,
    interaction_information,
    kth_neighbor_radius,
    knn_cmi,
    knn_mi,
    pairwise_ii,
    plugin_cmi,
    plugin_entropy,
    plugin_interaction_information,
    plugin_mi,
    prefilter_features,
    ranking_key,
    subsample_indices,
)
from synergyfe.tabular import Kind, Table

NUM, CAT = Kind.NUMERIC, Kind.CATEGORICAL


def num(x, name=""):
    return VariableView(np.asarray(x, dtype=float), NUM, name)


def cat(x, name=""):
    return VariableView([str(v) for v in x], CAT, name)


# brute-force oracle: O(n^2) distance matrices, same conventions


def _coords(view):
    if view.kind is CAT:
        labels = {v: i for i, v in enumerate(dict.fromkeys(view.values))}
        return np.array([labels[v] for v in view.values], dtype=float), True
    x = np.asarray(view.values, dtype=float)
    return (x - x.mean()) / x.std(), False


def _dist(c):
    x, is_cat = c
    return (x[:, None] != x[None, :]).astype(float) if is_cat else np.abs(x[:, None] - x[None, :])


def brute_mi(x, y, k=3):
    dx, dy = _dist(_coords(x)), _dist(_coords(y))
    d = np.maximum(dx, dy)
    n = len(d)
    off = ~np.eye(n, dtype=bool)
    rho = np.sort(np.where(off, d, np.inf), axis=1)[:, k - 1]
    kt = ((d <= rho[:, None]) & off).sum(1)
    nx = ((dx <= rho[:, None]) & off).sum(1)
    ny = ((dy <= rho[:, None]) & off).sum(1)
    return max(float(np.mean(digamma(kt) + digamma(n) - (digamma(nx + 1) + digamma(ny + 1)))), 0.0)


def brute_cmi(x, y, z, k=3):
    dx, dy, dz = _dist(_coords(x)), _dist(_coords(y)), _dist(_coords(z))
    d = np.maximum(np.maximum(dx, dy), dz)
    n = len(d)
    off = ~np.eye(n, dtype=bool)
    rho = np.sort(np.where(off, d, np.inf), axis=1)[:, k - 1]
    inside = lambda m: ((m <= rho[:, None]) & off).sum(1)
    t = (digamma(inside(d)) - (digamma(inside(np.maximum(dx, dz)) + 1)
         + digamma(inside(np.maximum(dy, dz)) + 1)) + digamma(inside(dz) + 1))
    return max(float(np.mean(t)), 0.0)


def _random_view(rng, n, kind, rounding):
    if kind == "cat":
        return cat(rng.integers(0, 3, n))
    return num(np.round(rng.standard_normal(n), rounding))


@pytest.mark.parametrize("seed", range(12))
def test_knn_mi_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    kinds = [("num", "num"), ("num", "cat"), ("cat", "num")][seed % 3]
    rounding = [6, 1, 0][seed % 4 % 3]
    n = 120
    x, y = (_random_view(rng, n, k, rounding) for k in kinds)
    if len(set(x.values)) < 2 or len(set(y.values)) < 2:
        pytest.skip("degenerate draw")
    assert knn_mi(x, y) == pytest.approx(brute_mi(x, y), abs=1e-10)


@pytest.mark.parametrize("seed", range(12))
def test_knn_cmi_matches_brute_force(seed):
    rng = np.random.default_rng(100 + seed)
    kinds = [("num", "num", "num"), ("num", "cat", "num"), ("cat", "num", "cat"),
             ("num", "num", "cat")][seed % 4]
    rounding = [6, 1, 0][seed % 3]
    n = 120
    x, y, z = (_random_view(rng, n, k, rounding) for k in kinds)
    if min(len(set(v.values)) for v in (x, y, z)) < 2:
        pytest.skip("degenerate draw")
    assert knn_cmi(x, y, z) == pytest.approx(brute_cmi(x, y, z), abs=1e-10)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**6), n=st.integers(8, 150), d=st.integers(1, 3),
       ncat=st.integers(0, 2), rounding=st.integers(0, 3), k=st.integers(1, 4))
def test_neighbour_kernels_match_brute_force(seed, n, d, ncat, rounding, k):
    rng = np.random.default_rng(seed)
    X = np.round(rng.standard_normal((n, d)), rounding)
    is_cat = np.zeros(d, dtype=bool)
    is_cat[:min(ncat, d)] = True
    X[:, is_cat] = rng.integers(0, 40 if seed % 2 else 3, (n, is_cat.sum()))
    D = np.where(is_cat, (X[:, None] != X[None]).astype(float), np.abs(X[:, None] - X[None])).max(-1)
    np.fill_diagonal(D, np.inf)
    rho = np.sort(D, 1)[:, k - 1]
    np.testing.assert_array_equal(kth_neighbor_radius(X, is_cat, k), rho)
    r = np.abs(rng.standard_normal(n))
    np.testing.assert_array_equal(count_within(X, is_cat, r), (D <= r[:, None]).sum(1))


# plug-in oracles


def test_plugin_entropy_fair_coin():
    coin = np.tile([0, 1], 5000)
    assert plugin_entropy(cat(coin)) == pytest.approx(math.log(2), abs=1e-12)


def test_plugin_entropy_constant():
    assert plugin_entropy(cat(["a"] * 10)) == 0.0


def test_plugin_entropy_two_independent_coins():
    a = np.repeat([0, 1], 2)
    b = np.tile([0, 1], 2)
    assert plugin_entropy(cat(a), cat(b)) == pytest.approx(math.log(4), abs=1e-12)


def test_plugin_entropy_empty():
    with pytest.raises(ValueError):
        plugin_entropy()


def test_plugin_identities_on_xor():
    a, b = np.repeat([0, 1], 2), np.tile([0, 1], 2)
    y = a ^ b
    assert plugin_mi(cat(a), cat(b)) == pytest.approx(0.0, abs=1e-12)
    assert plugin_cmi(cat(a), cat(b), cat(y)) == pytest.approx(math.log(2), abs=1e-12)
    assert plugin_interaction_information(cat(a), cat(b), cat(y)) == pytest.approx(math.log(2))


# estimator examples


def test_knn_mi_independent_uniforms():
    rng = np.random.default_rng(0)
    assert abs(knn_mi(num(rng.random(3000)), num(rng.random(3000)))) <= 0.05


def test_knn_mi_gaussian_closed_form():
    rng = np.random.default_rng(1)
    x = rng.standard_normal(3000)
    y = 0.9 * x + math.sqrt(1 - 0.81) * rng.standard_normal(3000)
    assert knn_mi(num(x), num(y)) == pytest.approx(-0.5 * math.log(1 - 0.81), abs=0.1)


def test_knn_mi_identical_categoricals():
    rng = np.random.default_rng(2)
    s = rng.integers(0, 4, 3000)
    oracle = plugin_entropy(cat(s))
    assert oracle == pytest.approx(math.log(4), abs=0.01)
    assert knn_mi(cat(s), cat(s)) == pytest.approx(math.log(4), abs=0.05)


def test_knn_mi_constant_warns_and_returns_zero():
    rng = np.random.default_rng(3)
    with pytest.warns(DegenerateVariableWarning):
        assert knn_mi(num(np.ones(100)), num(rng.random(100))) == 0.0


def test_knn_mi_too_few_samples():
    with pytest.raises(ValueError):
        knn_mi(num(np.arange(20.0)), num(np.arange(20.0)))


def test_knn_cmi_conditional_independence():
    rng = np.random.default_rng(4)
    z = rng.standard_normal(3000)
    x = z + rng.standard_normal(3000)
    y = z + rng.standard_normal(3000)
    assert abs(knn_cmi(num(x), num(y), num(z))) <= 0.05


def test_knn_cmi_xor():
    rng = np.random.default_rng(5)
    a, b = rng.integers(0, 2, 3000), rng.integers(0, 2, 3000)
    assert knn_cmi(cat(a), cat(b), cat(a ^ b)) == pytest.approx(math.log(2), abs=0.1)


def test_knn_cmi_constant_condition_is_mi():
    rng = np.random.default_rng(6)
    x = rng.standard_normal(3000)
    y = x + rng.standard_normal(3000)
    z = num(np.zeros(3000))
    assert knn_cmi(num(x), num(y), z) == pytest.approx(knn_mi(num(x), num(y)), abs=0.02)


# interaction information


def test_tau_xor_is_synergy():
    rng = np.random.default_rng(7)
    a, b = rng.integers(0, 2, 3000), rng.integers(0, 2, 3000)
    assert interaction_information(cat(a), cat(b), cat(a ^ b)) == pytest.approx(math.log(2), abs=0.1)


def test_tau_full_redundancy_is_negative():
    rng = np.random.default_rng(8)
    s = rng.integers(0, 4, 3000)
    assert interaction_information(cat(s), cat(s), cat(s)) < -0.2


def test_tau_independent_is_zero():
    rng = np.random.default_rng(9)
    vs = [num(rng.standard_normal(3000)) for _ in range(3)]
    assert abs(interaction_information(*vs)) <= 0.05


def test_tau_is_exactly_symmetric():
    rng = np.random.default_rng(10)
    a, b = rng.standard_normal(500), rng.standard_normal(500)
    y = num(a * b + 0.1 * rng.standard_normal(500))
    assert interaction_information(num(a), num(b), y) == interaction_information(num(b), num(a), y)


def test_tau_deterministic():
    rng = np.random.default_rng(11)
    vs = [num(rng.standard_normal(4000)) for _ in range(3)]
    cfg = EstimatorConfig(seed=5)
    assert interaction_information(*vs, cfg) == interaction_information(*vs, cfg)


def test_small_sample_ignores_seed():
    rng = np.random.default_rng(12)
    vs = [num(rng.standard_normal(500)) for _ in range(3)]
    assert (interaction_information(*vs, EstimatorConfig(seed=1))
            == interaction_information(*vs, EstimatorConfig(seed=2)))
    np.testing.assert_array_equal(subsample_indices(500, EstimatorConfig()), np.arange(500))


def test_subsample_is_sorted_and_sized():
    idx = subsample_indices(10_000, EstimatorConfig(subsample_size=3000, seed=4))
    assert len(idx) == 3000 and np.all(np.diff(idx) > 0)


def test_config_validation():
    with pytest.raises(ValueError):
        EstimatorConfig(k=0)
    with pytest.raises(ValueError):
        EstimatorConfig(k=3, subsample_size=29)


# pairwise scoring


def test_iientry_canonical_order():
    assert IIEntry(0.1, "b", "a") == IIEntry(0.1, "a", "b")
    assert IIEntry(0.1, 5, 2).pair == (2, 5)


def test_pairwise_three_features():
    rng = np.random.default_rng(13)
    feats = {n: num(rng.standard_normal(300)) for n in "abc"}
    out = pairwise_ii([("a", "b"), ("a", "c"), ("b", "c")], feats, num(rng.standard_normal(300)))
    assert len(out) == 3
    assert out == sorted(out, key=ranking_key)


def test_pairwise_swapped_pair_gives_same_entry():
    rng = np.random.default_rng(14)
    feats = {n: num(rng.standard_normal(300)) for n in "ab"}
    y = num(rng.standard_normal(300))
    assert pairwise_ii([("a", "b")], feats, y) == pairwise_ii([("b", "a")], feats, y)


def test_pairwise_rejects_duplicates():
    rng = np.random.default_rng(15)
    feats = {n: num(rng.standard_normal(300)) for n in "ab"}
    with pytest.raises(ValueError):
        pairwise_ii([("a", "b"), ("b", "a")], feats, num(rng.standard_normal(300)))


def test_pairwise_mi_cache_gives_identical_scores():
    rng = np.random.default_rng(16)
    feats = {n: num(rng.standard_normal(400)) for n in "abcd"}
    pairs = [(a, b) for a in "abcd" for b in "abcd" if a < b]
    y = num(rng.standard_normal(400))
    cache = {}
    assert pairwise_ii(pairs, feats, y, mi_cache=cache) == pairwise_ii(pairs, feats, y)
    assert len(cache) == 6
    assert pairwise_ii(pairs, feats, y, mi_cache=cache) == pairwise_ii(pairs, feats, y)


def test_pairwise_thread_count_does_not_change_result():
    rng = np.random.default_rng(17)
    feats = {i: num(rng.standard_normal(400)) for i in range(5)}
    pairs = [(i, j) for i in range(5) for j in range(i + 1, 5)]
    y = num(rng.standard_normal(400))
    assert pairwise_ii(pairs, feats, y, n_jobs=1) == pairwise_ii(pairs, feats, y, n_jobs=4)


@pytest.mark.parametrize("seed", range(5))
def test_planted_product_pair_ranks_first(seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((2000, 8))
    y = num(X[:, 0] * X[:, 1] + 0.05 * rng.standard_normal(2000))
    feats = {i: num(X[:, i]) for i in range(8)}
    pairs = [(i, j) for i in range(8) for j in range(i + 1, 8)]
    assert pairwise_ii(pairs, feats, y, EstimatorConfig(seed=seed))[0].pair == (0, 1)


# prefilter


def _table(X, y):
    data = {f"F{i + 1}": X[:, i] for i in range(X.shape[1])}
    data["y"] = y
    return Table.from_arrays(data, "y", "regression")


def test_prefilter_identity_when_m_large():
    rng = np.random.default_rng(18)
    t = _table(rng.standard_normal((300, 10)), rng.standard_normal(300))
    assert prefilter_features(t, 50) == t.feature_names


def test_prefilter_picks_copy_of_target():
    rng = np.random.default_rng(19)
    X = rng.standard_normal((500, 6))
    t = _table(X, X[:, 3].copy())
    assert "F4" in prefilter_features(t, 2)


@pytest.mark.parametrize("seed", range(5))
def test_prefilter_planted_sum(seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((2000, 10))
    t = _table(X, X[:, 0] + X[:, 1])
    assert set(prefilter_features(t, 2, EstimatorConfig(seed=seed))) == {"F1", "F2"}


def test_prefilter_rejects_small_m():
    rng = np.random.default_rng(20)
    t = _table(rng.standard_normal((100, 3)), rng.standard_normal(100))
    with pytest.raises(ValueError):
        prefilter_features(t, 1)
