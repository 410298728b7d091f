# tests/test_synth_baseline.py
import json

import numpy as np
import pytest

from src.errors import ConfigError, EmptyDataset, RuleConflict, UnknownVariable
from src.presets import sars_rules
from src.risk_tcap import KeyTargetConfig, tcap
from src.synth_baseline import (
    CartParams, DataRule, apply_rules, check_rules, fit_cart, load_rules, order_variables,
    synth_cart_sequential, synth_marginal, synthesize,
)
from src.tabular import Dataset, Schema, content_hash
from src.utility_metrics import pmse, roe_suite


@pytest.fixture
def ab_schema():
    return Schema.model_validate({"variables": [
        {"name": "A", "kind": "categorical", "categories": ["0", "1"]},
        {"name": "B", "kind": "categorical", "categories": ["0", "1"]},
    ]})


def _traverse_pools(model):
    return [model.nodes[i].pool for i in model.leaves]


class TestMarginal:
    """Test independent-marginal sampling"""

    def test_share_preserved(self):
        """Sampled share concentrates on the original share"""
        schema = Schema.model_validate({"variables": [
            {"name": "SEX", "kind": "categorical", "categories": ["1", "2"]}]})
        orig = Dataset.from_labels(schema, {"SEX": ["1", "1", "1", "2"] * 25})
        synth = synth_marginal(orig, 100_000, seed=1)
        share = float(np.mean(synth.column("SEX") == 0))
        assert abs(share - 0.75) < 0.01

    def test_zero_rows(self, small_dataset):
        """n must be positive"""
        with pytest.raises(EmptyDataset):
            synth_marginal(small_dataset, 0, seed=1)

    def test_deterministic(self, small_dataset):
        """Same seed, same data"""
        first = synth_marginal(small_dataset, 50, seed=9)
        second = synth_marginal(small_dataset, 50, seed=9)
        assert content_hash(first) == content_hash(second)


class TestOrderVariables:
    """Test synthesis ordering"""

    def test_category_count_with_first(self):
        """Counts {A:2, B:9, C:5} with AGE pinned first"""
        schema = Schema.model_validate({"variables": [
            {"name": "A", "kind": "categorical", "categories": list("ab")},
            {"name": "B", "kind": "categorical", "categories": list("abcdefghi")},
            {"name": "AGE", "kind": "integer", "min": 0, "max": 95},
            {"name": "C", "kind": "categorical", "categories": list("abcde")},
        ]})
        assert order_variables(schema, first="AGE") == ["AGE", "A", "C", "B"]

    def test_as_given(self, small_schema):
        """Schema order unchanged"""
        assert order_variables(small_schema, "as_given") == ["A", "B", "AGE"]

    def test_ties_stable(self):
        """Equal counts keep schema order"""
        schema = Schema.model_validate({"variables": [
            {"name": "B", "kind": "categorical", "categories": list("xyz")},
            {"name": "A", "kind": "categorical", "categories": list("xyz")},
        ]})
        assert order_variables(schema) == ["B", "A"]

    def test_unknown_first(self, small_schema):
        """Pinned variable must exist"""
        with pytest.raises(UnknownVariable):
            order_variables(small_schema, first="NOPE")


class TestFitCart:
    """Test tree growth"""

    def test_perfect_split(self, ab_schema):
        """B determined by A: one split, two pure leaves"""
        a = np.array([0, 1] * 10)
        ds = Dataset.from_codes(ab_schema, {"A": a, "B": a})
        model = fit_cart(ds, "B", ["A"], CartParams(min_leaf=1))
        assert model.depth == 1
        assert len(model.leaves) == 2
        for pool in _traverse_pools(model):
            assert np.unique(ds.column("B")[pool]).size == 1

    def test_constant_response(self, ab_schema):
        """Single leaf, flagged"""
        ds = Dataset.from_codes(ab_schema, {"A": [0, 1, 0, 1], "B": [1, 1, 1, 1]})
        model = fit_cart(ds, "B", ["A"])
        assert model.response_constant
        assert model.leaves == [0]

    def test_min_leaf_respected(self, random_dataset):
        """Every leaf keeps at least min_leaf donors"""
        ds = random_dataset(n=20, seed=6)
        model = fit_cart(ds, "V0", ["V1", "V2", "V3"], CartParams(min_leaf=5))
        assert all(pool.size >= 5 for pool in _traverse_pools(model))

    def test_leaf_pools_partition_rows(self, sars_orig):
        """Leaf pools are disjoint and cover the training rows"""
        model = fit_cart(sars_orig, "TENURE", ["AGE", "AREAP", "SOCLASS"])
        pools = np.concatenate(_traverse_pools(model))
        assert np.sort(pools).tolist() == list(range(sars_orig.n_rows))

    def test_integer_response_variance_split(self):
        """Numeric response splits on the predictor that moves its mean"""
        schema = Schema.model_validate({"variables": [
            {"name": "G", "kind": "categorical", "categories": list("pqrstuvwxyz")},
            {"name": "N", "kind": "categorical", "categories": ["n0", "n1"]},
            {"name": "AGE", "kind": "integer", "min": 0, "max": 95},
        ]})
        rng = np.random.default_rng(2)
        g = rng.integers(0, 11, 300)
        ds = Dataset.from_codes(schema, {"G": g, "N": rng.integers(0, 2, 300),
                                         "AGE": np.where(g < 5, 20, 70) + rng.integers(0, 5, 300)})
        model = fit_cart(ds, "AGE", ["N", "G"], CartParams(max_depth=1))
        assert model.nodes[0].variable == "G"
        assert set(model.nodes[0].left_codes) in ({0, 1, 2, 3, 4}, set(range(5, 11)))

    def test_route_matches_training_pools(self, sars_orig):
        """Routing the training rows lands each row in its own pool"""
        model = fit_cart(sars_orig, "LTILL", ["AGE", "ECONPRIM"])
        leaf_of = model.route(sars_orig.columns, sars_orig.n_rows)
        for leaf in model.leaves:
            assert set(np.flatnonzero(leaf_of == leaf)) == set(model.nodes[leaf].pool.tolist())


class TestRules:
    """Test deterministic data rules"""

    def test_enforcement(self, sars_orig):
        """Children come out single after enforcement"""
        rules = [DataRule.model_validate(
            {"if": [{"var": "AGE", "op": "<=", "value": 15}], "then": {"var": "MSTATUS", "value": "single"}})]
        synth = synth_marginal(sars_orig, 2000, seed=4)
        before = check_rules(synth, rules)[0]
        enforced, counted = apply_rules(synth, rules)
        assert before > 0
        assert counted == before
        assert check_rules(enforced, rules) == [0]

    def test_conflicting_rules(self, small_dataset):
        """Two rules writing different values to one cell"""
        rules = [
            DataRule.model_validate({"if": [{"var": "AGE", "op": "<=", "value": 10}], "then": {"var": "A", "value": "a"}}),
            DataRule.model_validate({"if": [{"var": "AGE", "op": ">=", "value": 5}], "then": {"var": "A", "value": "b"}}),
        ]
        with pytest.raises(RuleConflict) as exc:
            apply_rules(small_dataset, rules)
        assert exc.value.variable == "A"

    def test_consequence_in_condition_rejected(self):
        """A rule cannot condition on what it assigns"""
        with pytest.raises(ValueError):
            DataRule.model_validate({"if": [{"var": "A", "op": "=", "value": "a"}], "then": {"var": "A", "value": "b"}})

    def test_ordering_on_categorical_rejected(self, small_dataset):
        """<= has no meaning on a categorical variable"""
        rule = DataRule.model_validate({"if": [{"var": "A", "op": "<=", "value": "a"}], "then": {"var": "B", "value": "x"}})
        with pytest.raises(ValueError):
            check_rules(small_dataset, [rule])

    def test_load_rules(self, tmp_path):
        """Rules file parses, invalid files report the field"""
        good = tmp_path / "rules.json"
        good.write_text(json.dumps([{"if": [{"var": "AGE", "op": "<=", "value": 15}],
                                     "then": {"var": "MSTATUS", "value": "single"}}]))
        assert load_rules(good)[0].consequence.var == "MSTATUS"
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps([{"if": [{"var": "AGE", "op": "<", "value": 15}], "then": {"var": "M", "value": "s"}}]))
        with pytest.raises(ConfigError):
            load_rules(bad)

    def test_simulated_corpus_obeys_shipped_rules(self, sars_orig):
        """The original corpus satisfies its own rules"""
        assert check_rules(sars_orig, sars_rules()) == [0, 0, 0, 0]


class TestCartSequential:
    """Test sequential CART synthesis"""

    def test_functional_dependency_kept(self, ab_schema):
        """B = A in the original stays exact in the synthetic data"""
        a = np.random.default_rng(0).integers(0, 2, 200)
        orig = Dataset.from_codes(ab_schema, {"A": a, "B": a})
        synth = synth_cart_sequential(orig, ["A", "B"], n=500, seed=3)
        assert np.array_equal(synth.column("A"), synth.column("B"))

    def test_rules_enforced(self, sars_orig):
        """Zero violations of the shipped rules"""
        order = order_variables(sars_orig.schema, first="AGE", data=sars_orig)
        synth = synth_cart_sequential(sars_orig, order, sars_rules(), n=1500, seed=5)
        assert check_rules(synth, sars_rules()) == [0, 0, 0, 0]

    def test_deterministic(self, sars_orig):
        """Same seed, byte-identical output"""
        order = order_variables(sars_orig.schema, first="AGE", data=sars_orig)
        first = synth_cart_sequential(sars_orig, order, n=800, seed=21)
        second = synth_cart_sequential(sars_orig, order, n=800, seed=21)
        assert content_hash(first) == content_hash(second)

    def test_bad_order(self, sars_orig):
        """Order must be a permutation of the schema"""
        with pytest.raises(ValueError):
            synth_cart_sequential(sars_orig, ["AGE", "SEX"], n=10, seed=0)

    def test_marginals_preserved(self, sars_orig):
        """Univariate ROE stays high on a five-variable subset"""
        names = ["AGE", "SEX", "MSTATUS", "ECONPRIM", "LTILL"]
        schema = Schema(dataset_name="five", variables=tuple(sars_orig.schema[n] for n in names))
        orig = Dataset.from_codes(schema, {n: sars_orig.column(n) for n in names})
        synth = synth_cart_sequential(orig, order_variables(schema, first="AGE", data=orig), seed=8)
        roe_uni, _ = roe_suite(orig, synth)
        assert roe_uni >= 0.9

    def test_cart_riskier_and_closer_than_marginal(self, sars_orig):
        """CART keeps more structure than independent marginals"""
        order = order_variables(sars_orig.schema, first="AGE", data=sars_orig)
        cart = synthesize("cart", sars_orig, sars_orig.n_rows, seed=13, order=order).dataset
        marginal = synthesize("marginal", sars_orig, sars_orig.n_rows, seed=13).dataset
        cfg = KeyTargetConfig(keys=("AGE", "SEX", "MSTATUS"), target="FAMTYPE")
        assert tcap(sars_orig, cart, cfg).tcap >= tcap(sars_orig, marginal, cfg).tcap
        assert pmse(sars_orig, cart).pmse <= pmse(sars_orig, marginal).pmse

    def test_synthesize_counts_violations(self, sars_orig):
        """Marginal draws break the age rule before enforcement"""
        result = synthesize("marginal", sars_orig, 1000, seed=2, rules=sars_rules())
        assert result.violations_before > 0
        assert check_rules(result.dataset, sars_rules()) == [0, 0, 0, 0]
