import json
import math
import warnings
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from realexp.coalition import (
    Attribution,
    FeatureSet,
    FunctionGame,
    Method,
    Sampled,
    TableGame,
    adjustment_factor,
    dilution_demo,
    dilution_game,
    estimate_similarity,
    exact_shapley,
    interaction_weights,
    members,
    permutation_shapley,
    realexp_decoupled,
    realexp_permutation,
    to_mask,
    zero_similarity,
)
from realexp.errors import CapacityError, EvaluationError, InsufficientDataError, ValidationError
from realexp.perturbation import build_design, generate_masks

from . import oracles

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def wm3():
    return TableGame.load(FIXTURES / "weighted_majority_3.json")


@pytest.fixture
def wm5():
    return TableGame.load(FIXTURES / "weighted_majority_5.json")


def symmetric_pair():
    return TableGame(2, [0.0, 1.0, 1.0, 2.0])


def test_masks_roundtrip():
    assert to_mask([0, 2]) == 5
    assert members(5, 4) == (0, 2)
    assert to_mask([]) == 0


def test_feature_set_validation():
    FeatureSet(2, ["a", "b"])
    with pytest.raises(ValidationError):
        FeatureSet(0)
    with pytest.raises(ValidationError):
        FeatureSet(2, ["a", "a"])
    with pytest.raises(ValidationError):
        FeatureSet(2, ["a"])


class TestExactShapley:
    def test_symmetric_additive(self):
        np.testing.assert_array_equal(exact_shapley(symmetric_pair()).phi, [1.0, 1.0])

    def test_constant_game_is_null(self):
        v = FunctionGame(4, lambda s: 3.7)
        np.testing.assert_allclose(exact_shapley(v).phi, 0.0, atol=1e-15)

    def test_weighted_majority_matches_permutation_oracle(self, wm3):
        expected = oracles.permutation_shapley(list(wm3.table()), 3)
        np.testing.assert_allclose(exact_shapley(wm3).phi, expected, atol=1e-12)
        # weights (2, 1, 1), quota 3: the heavy player is pivotal unless first
        np.testing.assert_allclose(expected, [2 / 3, 1 / 6, 1 / 6], atol=1e-12)

    def test_weighted_majority_5(self, wm5):
        expected = oracles.permutation_shapley(list(wm5.table()), 5)
        np.testing.assert_allclose(exact_shapley(wm5).phi, expected, atol=1e-12)

    def test_efficiency(self, wm5):
        phi = exact_shapley(wm5).phi
        assert abs(phi.sum() - (wm5(0b11111) - wm5(0))) < 1e-9

    def test_capacity(self):
        with pytest.raises(CapacityError):
            exact_shapley(FunctionGame(21, lambda s: 0.0))

    def test_arity_mismatch(self, wm3):
        with pytest.raises(ValidationError):
            exact_shapley(wm3, 4)

    def test_non_finite_names_coalition(self):
        v = FunctionGame(3, lambda s: float("nan") if s == {0, 2} else 1.0)
        with pytest.raises(EvaluationError, match=r"\{0, 2\}"):
            exact_shapley(v)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 6), seed=st.integers(0, 10_000))
def test_efficiency_property(n, seed):
    table = oracles.random_game(seed, n)
    phi = exact_shapley(TableGame(n, table)).phi
    assert abs(phi.sum() - (table[-1] - table[0])) < 1e-9


class TestPermutationShapley:
    def test_symmetric_exhaustive(self):
        np.testing.assert_allclose(permutation_shapley(symmetric_pair()).phi, [1.0, 1.0], atol=1e-15)

    @pytest.mark.parametrize("seed", range(100))
    def test_exhaustive_equals_exact(self, seed):
        n = 2 + seed % 7
        v = TableGame(n, oracles.random_game(seed, n))
        np.testing.assert_allclose(permutation_shapley(v).phi, exact_shapley(v).phi, rtol=0, atol=1e-9)

    def test_sampled_converges(self, wm5):
        exact = permutation_shapley(wm5).phi
        est = permutation_shapley(wm5, mode=Sampled(10_000, seed=7))
        assert est.stderr is not None
        assert np.all(np.abs(est.phi - exact) <= 3 * est.stderr)

    def test_sampled_on_three_player_fixture(self, wm3):
        est = permutation_shapley(wm3, mode=Sampled(10_000, seed=7))
        assert np.all(np.abs(est.phi - [2 / 3, 1 / 6, 1 / 6]) <= 3 * est.stderr)

    def test_sampled_reproducible(self, wm5):
        a = permutation_shapley(wm5, mode=Sampled(500, seed=3)).phi
        b = permutation_shapley(wm5, mode=Sampled(500, seed=3)).phi
        assert a.tobytes() == b.tobytes()

    def test_sampled_large_n_without_table(self):
        # n above the tabulation threshold goes through the unique-coalition path
        w = np.linspace(0.1, 1.5, 15)
        v = FunctionGame(15, lambda s: float(sum(w[j] for j in s)))
        est = permutation_shapley(v, mode=Sampled(20, seed=0))
        np.testing.assert_allclose(est.phi, w, atol=1e-12)

    def test_exhaustive_cap(self):
        with pytest.raises(CapacityError):
            permutation_shapley(FunctionGame(11, lambda s: 0.0))

    @pytest.mark.parametrize("bad", ["random", Sampled.__new__(Sampled)])
    def test_bad_mode(self, wm3, bad):
        with pytest.raises((ValidationError, AttributeError)):
            permutation_shapley(wm3, mode=bad)

    def test_sampled_needs_positive_count(self):
        with pytest.raises(ValidationError):
            Sampled(0, 1)


class TestDilution:
    def test_half_value(self):
        assert dilution_demo(1.0, 0.0, 2).phi[0] == pytest.approx(0.5, abs=1e-12)

    def test_no_dilution_when_equal(self):
        assert dilution_demo(1.0, 1.0, 2).phi[0] == pytest.approx(1.0, abs=1e-12)

    def test_mixed(self):
        assert dilution_demo(0.8, 0.1, 4).phi[0] == pytest.approx(0.45, abs=1e-12)

    def test_regimes(self):
        v = dilution_game(0.8, 0.1, 3)
        assert v({0}) - v(set()) == pytest.approx(0.8)
        assert v({0, 1}) - v({1}) == pytest.approx(0.1)
        assert v({0, 1, 2}) - v({1, 2}) == pytest.approx(0.1)

    def test_needs_two_features(self):
        with pytest.raises(ValidationError):
            dilution_game(1.0, 0.0, 1)


class TestInteractionWeights:
    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(0)
        a = rng.uniform(0, 1, (6, 6))
        s = (a + a.T) / 2
        np.fill_diagonal(s, 1.0)
        w, degenerate = interaction_weights(s)
        assert degenerate == ()
        np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(np.diag(w) == 0)

    def test_perfect_similarity_zero_weight(self):
        s = np.eye(3)
        s[0, 1] = s[1, 0] = 1.0
        w, _ = interaction_weights(s)
        assert w[0, 1] == 0.0 and w[1, 0] == 0.0
        assert w[0, 2] == 1.0

    def test_degenerate_row(self):
        w, degenerate = interaction_weights(np.ones((3, 3)))
        assert degenerate == (0, 1, 2)
        assert np.all(w == 0)


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 7).flatmap(lambda n: st.lists(st.floats(0, 1), min_size=n * n, max_size=n * n)))
def test_weight_normalisation_property(flat):
    n = int(round(math.sqrt(len(flat))))
    a = np.array(flat).reshape(n, n)
    s = (a + a.T) / 2
    np.fill_diagonal(s, 1.0)
    w, degenerate = interaction_weights(s)
    for i in range(n):
        if i not in degenerate:
            assert abs(w[i].sum() - 1.0) < 1e-12
    assert np.all(w[s == 1.0] == 0.0)


class TestDecoupled:
    def test_additive_zero_similarity(self):
        c = [1.5, -0.5, 2.0, 0.25]
        v = TableGame.load(FIXTURES / "additive_4.json")
        att = realexp_decoupled(v, 4, zero_similarity(4))
        np.testing.assert_allclose(att.phi, c, atol=1e-12)
        np.testing.assert_allclose(att.phi_margin, 0.0, atol=1e-12)

    def test_perfect_duplicates(self):
        table = oracles.random_game(5, 3)
        s = np.eye(3)
        s[0, 1] = s[1, 0] = 1.0
        att = realexp_decoupled(TableGame(3, table), 3, s)
        ind0 = table[1] - table[0]
        assert att.phi_independent[0] == pytest.approx(ind0, abs=1e-12)
        # only feature 2 carries weight for feature 0
        expected_margin = table[0b101] - table[0b100] - ind0
        assert att.phi_margin[0] == pytest.approx(expected_margin, abs=1e-12)

    def test_golden_weighted_majority(self, wm3):
        golden = json.loads((FIXTURES / "golden_decoupled_wm3.json").read_text())
        d = golden["design"]
        masks = generate_masks(d["n"], d["K"], d["alpha"], d["policy"], seed=d["seed"])
        scores = wm3.values([to_mask(np.flatnonzero(r)) for r in masks])
        s = estimate_similarity(build_design(masks, scores, d["lambda"]))
        np.testing.assert_allclose(s, golden["similarity"], atol=1e-12)
        att = realexp_decoupled(wm3, 3, s)
        np.testing.assert_allclose(att.phi_independent, golden["phi_independent"], atol=1e-12)
        np.testing.assert_allclose(att.phi_margin, golden["phi_margin"], atol=1e-12)

    @pytest.mark.parametrize("seed", range(20))
    def test_matches_oracle_random(self, seed):
        n = 2 + seed % 5
        table = oracles.random_game(seed, n)
        rng = np.random.default_rng(seed)
        a = rng.uniform(0, 1, (n, n))
        s = (a + a.T) / 2
        np.fill_diagonal(s, 1.0)
        att = realexp_decoupled(TableGame(n, table), n, s)
        parts = oracles.decoupled(table, n, s.tolist())
        np.testing.assert_allclose(att.phi_independent, [p[0] for p in parts], atol=1e-12)
        np.testing.assert_allclose(att.phi_margin, [p[1] for p in parts], atol=1e-12)
        assert np.array_equal(att.phi, att.phi_independent + att.phi_margin)

    def test_uniform_weights_when_dissimilar(self):
        n = 4
        table = oracles.random_game(1, n)
        att = realexp_decoupled(TableGame(n, table), n, zero_similarity(n))
        for i in range(n):
            ind = table[1 << i] - table[0]
            margin = sum(table[1 << i | 1 << j] - table[1 << j] - ind for j in range(n) if j != i) / (n - 1)
            assert att.phi[i] == pytest.approx(ind + margin, abs=1e-12)

    def test_degenerate_warns(self):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            att = realexp_decoupled(TableGame(2, [0, 1, 2, 4]), 2, np.ones((2, 2)))
        assert att.degenerate == (0, 1)
        assert np.all(att.phi_margin == 0)
        assert any(issubclass(w.category, RuntimeWarning) for w in caught)

    def test_single_feature(self):
        att = realexp_decoupled(TableGame(1, [1.0, 3.0]), 1, [[1.0]])
        assert att.phi.tolist() == [2.0]
        assert att.degenerate == ()

    def test_rejects_bad_similarity(self, wm3):
        with pytest.raises(ValidationError):
            realexp_decoupled(wm3, 3, np.full((3, 3), 2.0))
        with pytest.raises(ValidationError):
            realexp_decoupled(wm3, 3, np.eye(2))
        asym = np.eye(3)
        asym[0, 1] = 0.5
        with pytest.raises(ValidationError):
            realexp_decoupled(wm3, 3, asym)


class TestAdjustmentFactor:
    def test_empty_prefix(self):
        assert adjustment_factor([], 0, np.eye(3)) == 1.0

    def test_perfect_similarity(self):
        s = np.eye(2)
        s[0, 1] = s[1, 0] = 1.0
        assert adjustment_factor([1], 0, s) == 0.0

    def test_product(self):
        s = np.eye(3)
        s[0, 1] = s[1, 0] = 0.5
        s[0, 2] = s[2, 0] = 0.2
        assert adjustment_factor({1, 2}, 0, s) == pytest.approx(0.4, abs=1e-15)

    def test_self_in_prefix(self):
        with pytest.raises(ValidationError):
            adjustment_factor([0, 1], 0, np.eye(2))


class TestRealExpPermutation:
    @pytest.mark.parametrize("seed", range(10))
    def test_zero_similarity_is_shapley(self, seed):
        n = 2 + seed % 5
        v = TableGame(n, oracles.random_game(seed, n))
        a = realexp_permutation(v, n, zero_similarity(n)).phi
        b = permutation_shapley(v).phi
        np.testing.assert_allclose(a, b, atol=1e-9)

    def test_duplicate_pair_keeps_first_arrival_half(self):
        v = dilution_game(1.0, 0.4, 2)
        s = np.ones((2, 2))
        att = realexp_permutation(v, 2, s)
        assert att.phi[0] == pytest.approx(0.5, abs=1e-12)

    def test_duplicate_pair_with_bystanders(self):
        v = dilution_game(1.0, 0.4, 4)
        s = np.eye(4)
        s[0, 1] = s[1, 0] = 1.0
        assert realexp_permutation(v, 4, s).phi[0] == pytest.approx(0.5, abs=1e-12)

    def test_single_feature(self):
        att = realexp_permutation(TableGame(1, [1.0, 3.5]), 1, [[1.0]])
        assert att.phi.tolist() == [2.5]

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_oracle(self, seed):
        n = 2 + seed % 5
        table = oracles.random_game(seed, n)
        rng = np.random.default_rng(seed + 100)
        a = rng.uniform(0, 1, (n, n))
        s = (a + a.T) / 2
        np.fill_diagonal(s, 1.0)
        phi = realexp_permutation(TableGame(n, table), n, s).phi
        np.testing.assert_allclose(phi, oracles.permutation_shapley(table, n, s.tolist()), atol=1e-12)

    def test_sampled_converges(self, wm5):
        rng = np.random.default_rng(2)
        a = rng.uniform(0, 0.6, (5, 5))
        s = (a + a.T) / 2
        np.fill_diagonal(s, 1.0)
        exact = realexp_permutation(wm5, 5, s).phi
        est = realexp_permutation(wm5, 5, s, Sampled(10_000, 7))
        assert np.all(np.abs(est.phi - exact) <= 3 * est.stderr)


class TestEstimateSimilarity:
    def test_identical_columns(self):
        rng = np.random.default_rng(0)
        x = rng.integers(0, 2, (50, 3)).astype(float)
        x[:, 2] = x[:, 0]
        s = estimate_similarity(x)
        assert s[0, 2] == pytest.approx(1.0, abs=1e-12)
        assert np.array_equal(s, s.T)
        assert np.all(np.diag(s) == 1.0)

    def test_independent_columns(self):
        masks = generate_masks(2, 10_000, 0.3, "Bernoulli", seed=3)
        s = estimate_similarity(build_design(masks, None, 0.25))
        assert s[0, 1] <= 0.05

    def test_constant_column(self):
        x = np.array([[1.0, 0.0, 1.0], [1.0, 1.0, 0.0], [1.0, 0.0, 0.0]])
        s = estimate_similarity(x)
        assert s[0, 1] == s[0, 2] == s[1, 0] == s[2, 0] == 0.0
        assert s[0, 0] == 1.0

    def test_range(self):
        x = np.random.default_rng(1).normal(size=(30, 5))
        s = estimate_similarity(x)
        assert np.all((s >= 0) & (s <= 1))

    def test_insufficient(self):
        with pytest.raises(InsufficientDataError):
            estimate_similarity(np.ones((1, 3)))
        assert estimate_similarity(np.ones((5, 1))).tolist() == [[1.0]]

    def test_weighted_matches_oracle(self):
        rng = np.random.default_rng(4)
        x = rng.integers(0, 2, (40, 4)).astype(float)
        w = rng.uniform(0.5, 2.0, 40)
        np.testing.assert_allclose(estimate_similarity(x, w),
                                   oracles.weighted_pearson(x.tolist(), w.tolist()), atol=1e-12)

    def test_bad_weights(self):
        with pytest.raises(ValidationError):
            estimate_similarity(np.eye(3), [1.0, -1.0, 1.0])


class TestAttribution:
    def test_components_only_for_decoupled(self):
        with pytest.raises(ValidationError):
            Attribution([1.0], Method.EXACT_SHAPLEY, phi_independent=[1.0], phi_margin=[0.0])
        with pytest.raises(ValidationError):
            Attribution([1.0], Method.REALEXP_DECOUPLED)

    def test_sum_must_hold(self):
        with pytest.raises(ValidationError):
            Attribution([1.0], Method.REALEXP_DECOUPLED, phi_independent=[0.5], phi_margin=[0.4])

    def test_finite(self):
        with pytest.raises(EvaluationError):
            Attribution([np.inf], Method.EXACT_SHAPLEY)

    def test_json_roundtrip(self, wm3):
        att = realexp_decoupled(wm3, 3, zero_similarity(3)).with_labels(["a", "b", "c"])
        data = json.loads(json.dumps(att.to_dict()))
        assert set(data) == {"method", "phi", "phi_independent", "phi_margin", "labels"}
        back = Attribution.from_dict(data)
        assert back.method is Method.REALEXP_DECOUPLED
        np.testing.assert_array_equal(back.phi, att.phi)
        assert back.labels == ("a", "b", "c")

    def test_ranking_ties_lower_index(self):
        att = Attribution([0.2, 0.5, 0.5, 0.1], Method.EXACT_SHAPLEY)
        assert att.ranking() == [1, 2, 0, 3]


class TestTableGame:
    def test_fixture_roundtrip(self, tmp_path, wm3):
        wm3.save(tmp_path / "g.json")
        again = TableGame.load(tmp_path / "g.json")
        np.testing.assert_array_equal(again.table(), wm3.table())

    def test_missing_keys(self):
        with pytest.raises(ValidationError):
            TableGame.from_dict({"n": 2, "values": {"0": 0, "1": 1, "2": 1}})

    def test_wrong_length(self):
        with pytest.raises(ValidationError):
            TableGame(2, [0, 1, 2])

    def test_out_of_range_coalition(self, wm3):
        with pytest.raises(ValidationError):
            wm3.values([8])

    def test_call_with_members(self, wm3):
        assert wm3({0, 1}) == 1.0
        assert wm3(0b011) == 1.0
