# tests/test_risk_tcap.py
from collections import Counter
from fractions import Fraction

import numpy as np
import pytest

from src.errors import ConfigError, EmptyDataset, UnknownVariable
from src.risk_tcap import (
    KeyTargetConfig, RiskConfig, attribution_counts, baseline_cap, grand_average, nested_key_sets,
    tcap, tcap_matrix, weap_counts, weap_scores,
)
from src.tabular import Dataset, Schema


@pytest.fixture
def kt_schema():
    return Schema.model_validate({"variables": [
        {"name": "K", "kind": "categorical", "categories": ["A", "B", "C"]},
        {"name": "T", "kind": "categorical", "categories": ["w", "x", "y", "z"]},
    ]})


def _kt(schema, rows):
    return Dataset.from_labels(schema, {"K": [k for k, _ in rows], "T": [t for _, t in rows]})


CFG = KeyTargetConfig(keys=("K",), target="T")


def _brute_force_tcap(orig, synth, cfg):
    """Double loop over records, straight from the definitions"""
    keys = list(cfg.keys)
    def row(ds, i, names):
        return tuple(int(ds.column(n)[i]) for n in names)

    values = []
    for j in range(synth.n_rows):
        k_j, t_j = row(synth, j, keys), row(synth, j, [cfg.target])
        same_k = [i for i in range(synth.n_rows) if row(synth, i, keys) == k_j]
        same_kt = [i for i in same_k if row(synth, i, [cfg.target]) == t_j]
        if len(same_kt) != len(same_k):
            continue
        o_k = [i for i in range(orig.n_rows) if row(orig, i, keys) == k_j]
        if not o_k:
            continue
        o_kt = [i for i in o_k if row(orig, i, [cfg.target]) == t_j]
        values.append(len(o_kt) / len(o_k))
    return float(np.mean(values)) if values else None


def _counted_attribution(orig, synth, cfg, threshold=Fraction(1)):
    """(row, #original same keys and target, #original same keys) per selected synthetic record, by counting tuples"""
    names = list(cfg.keys) + [cfg.target]

    def rows(ds):
        return [tuple(r) for r in zip(*(ds.column(n).tolist() for n in names))]

    o_rows, s_rows = rows(orig), rows(synth)
    s_k, s_kt = Counter(r[:-1] for r in s_rows), Counter(s_rows)
    o_k, o_kt = Counter(r[:-1] for r in o_rows), Counter(o_rows)
    return [
        (j, o_kt[r], o_k[r[:-1]])
        for j, r in enumerate(s_rows)
        if Fraction(s_kt[r], s_k[r[:-1]]) >= threshold
    ]


class TestConfig:
    """Test key/target configuration"""

    def test_default_label(self):
        """Label is target/number of keys"""
        assert KeyTargetConfig(keys=("A", "B"), target="T").label == "T/2"

    def test_target_in_keys_rejected(self):
        """Target cannot be a key"""
        with pytest.raises(ValueError):
            KeyTargetConfig(keys=("A", "T"), target="T")

    def test_unknown_variable(self, kt_schema):
        """Keys must exist in the schema"""
        with pytest.raises(UnknownVariable):
            KeyTargetConfig(keys=("Q",), target="T").validate_against(kt_schema)

    def test_nested_key_sets(self):
        """Six keys down to three"""
        sets = nested_key_sets(["AREAP", "AGE", "SEX", "MSTATUS", "ETHGROUP", "ECONPRIM"])
        assert [len(s) for s in sets] == [6, 5, 4, 3]
        assert sets[-1] == ["AREAP", "AGE", "SEX"]

    def test_configs_cross_product(self):
        """Targets crossed with key sets, skipping sets containing the target"""
        cfg = RiskConfig(targets=["T", "K2"], key_sets=[["K1", "K2"], ["K1"]])
        labels = [c.label for c in cfg.configs()]
        assert labels == ["T/2", "T/1", "K2/1"]

    def test_load_invalid(self, tmp_path):
        """Out-of-range threshold is a config error"""
        path = tmp_path / "risk.json"
        path.write_text('{"targets": ["T"], "key_sets": [["K"]], "weap_threshold": 1.5}')
        with pytest.raises(ConfigError) as exc:
            RiskConfig.load(path)
        assert "weap_threshold" in str(exc.value)


class TestWeap:
    """Test within-equivalence-class attribution probability"""

    def test_weap_values(self, kt_schema):
        """(A,x),(A,x),(A,y),(B,z)"""
        synth = _kt(kt_schema, [("A", "x"), ("A", "x"), ("A", "y"), ("B", "z")])
        np.testing.assert_allclose(weap_scores(synth, CFG), [2 / 3, 2 / 3, 1 / 3, 1.0])

    def test_identical_records(self, kt_schema):
        """One class, one target value"""
        synth = _kt(kt_schema, [("A", "x")] * 5)
        assert weap_scores(synth, CFG).tolist() == [1.0] * 5

    def test_unique_keys(self, kt_schema):
        """Singleton classes"""
        synth = _kt(kt_schema, [("A", "x"), ("B", "y"), ("C", "z")])
        assert weap_scores(synth, CFG).tolist() == [1.0] * 3


class TestTcap:
    """Test targeted correct attribution probability"""

    def test_partial_attribution(self, kt_schema):
        """Synthetic (B,z) against original (B,z),(B,z),(B,w)"""
        orig = _kt(kt_schema, [("B", "z"), ("B", "z"), ("B", "w")])
        synth = _kt(kt_schema, [("B", "z")])
        result = tcap(orig, synth, CFG)
        assert result.tcap == pytest.approx(2 / 3)
        assert (result.n_weap1, result.n_matched, result.n_undefined) == (1, 1, 0)

    def test_copy_is_one(self, sars_orig):
        """Every WEAP-1 record of a copy attributes correctly"""
        cfg = KeyTargetConfig(keys=("AREAP", "AGE", "SEX"), target="LTILL")
        assert tcap(sars_orig, sars_orig, cfg).tcap == pytest.approx(1.0)

    def test_no_matches(self, kt_schema):
        """Keys absent from the original fall back to the baseline with a warning"""
        orig = _kt(kt_schema, [("A", "x"), ("A", "y")])
        synth = _kt(kt_schema, [("C", "z")])
        result = tcap(orig, synth, CFG)
        assert result.n_matched == 0
        assert result.tcap == pytest.approx(baseline_cap(orig, "T"))
        assert result.warnings and result.warnings[0].startswith("NoMatches")
        assert result.match_rate == 0.0

    def test_threshold_widens_selection(self, kt_schema):
        """A lower WEAP threshold admits impure classes"""
        orig = _kt(kt_schema, [("A", "x"), ("A", "y")])
        synth = _kt(kt_schema, [("A", "x"), ("A", "x"), ("A", "y")])
        strict, _, _ = attribution_counts(orig, synth, CFG, 1.0)
        loose, _, _ = attribution_counts(orig, synth, CFG, 0.5)
        assert strict.size == 0
        assert loose.tolist() == [0, 1]

    @pytest.mark.parametrize("seed", [0, 1, 2, 3, 4])
    def test_matches_brute_force(self, random_dataset, seed):
        """Vectorised grouping equals the double-loop definition"""
        orig = random_dataset(n=120, seed=seed)
        synth = Dataset.from_codes(orig.schema, dict(random_dataset(n=80, seed=seed + 100).columns))
        cfg = KeyTargetConfig(keys=("V0", "V1", "V3"), target="V2")
        expected = _brute_force_tcap(orig, synth, cfg)
        result = tcap(orig, synth, cfg)
        if expected is None:
            assert result.n_matched == 0
        else:
            assert result.tcap == pytest.approx(expected)


class TestBaseline:
    """Test the marginal baseline"""

    def test_sum_of_squares(self, kt_schema):
        """Marginal x:2, y:1, z:1"""
        orig = _kt(kt_schema, [("A", "x"), ("A", "x"), ("A", "y"), ("A", "z")])
        assert baseline_cap(orig, "T") == pytest.approx(0.375)

    def test_single_category(self, kt_schema):
        """Certain attribution"""
        assert baseline_cap(_kt(kt_schema, [("A", "x")] * 3), "T") == 1.0

    def test_uniform(self, kt_schema):
        """1/k for a uniform target"""
        orig = _kt(kt_schema, [("A", t) for t in "wxyz"])
        assert baseline_cap(orig, "T") == pytest.approx(0.25)

    def test_empty(self, kt_schema):
        """Empty original"""
        empty = Dataset.from_codes(kt_schema, {"K": [], "T": []})
        with pytest.raises(EmptyDataset):
            baseline_cap(empty, "T")


class TestMatrix:
    """Test the key/target matrix"""

    def test_grand_average_of_reference_column(self):
        """Twelve reference cells average to 0.728"""
        cells = [0.935, 0.897, 0.894, 0.936, 0.709, 0.725, 0.736, 0.809, 0.596, 0.504, 0.500, 0.496]
        assert round(grand_average(cells), 3) == 0.728

    def test_baseline_average(self):
        """Three target baselines average to 0.442"""
        assert round(grand_average([0.774, 0.223, 0.329]), 3) == 0.442

    def test_copy_matrix(self, kt_schema):
        """One config, synthetic copy"""
        orig = _kt(kt_schema, [("A", "x"), ("B", "y"), ("B", "y")])
        matrix = tcap_matrix(orig, {"copy": orig}, [CFG])
        assert [r.tcap for r in matrix.results["copy"]] == [1.0]
        assert matrix.averages["copy"] == 1.0

    def test_parallel_equals_serial(self, sars_orig):
        """Worker count does not change results"""
        configs = RiskConfig(targets=["LTILL", "TENURE"], key_sets=[["AREAP", "AGE", "SEX"]]).configs()
        synth = sars_orig.take(np.arange(sars_orig.n_rows)[::-1][:1500])
        serial = tcap_matrix(sars_orig, {"s": synth}, configs, jobs=1)
        parallel = tcap_matrix(sars_orig, {"s": synth}, configs, jobs=4)
        assert serial.averages == parallel.averages
        assert set(serial.baselines) == {"LTILL", "TENURE"}


class TestInvariants:
    """Test properties TCAP must keep under relabelling and thresholds"""

    CFG = KeyTargetConfig(keys=("AREAP", "AGE", "SEX", "MSTATUS"), target="LTILL")

    @pytest.fixture(scope="class")
    def synth(self, sars_orig):
        rng = np.random.default_rng(17)
        return sars_orig.take(rng.choice(sars_orig.n_rows, size=2000, replace=True))

    def test_row_permutation(self, sars_orig, synth):
        """Shuffling the rows of either dataset leaves TCAP unchanged"""
        rng = np.random.default_rng(3)
        shuffled_orig = sars_orig.take(rng.permutation(sars_orig.n_rows))
        shuffled_synth = synth.take(rng.permutation(synth.n_rows))
        base = tcap(sars_orig, synth, self.CFG)
        moved = tcap(shuffled_orig, shuffled_synth, self.CFG)
        assert moved.tcap == pytest.approx(base.tcap, rel=1e-12)
        assert (moved.n_weap1, moved.n_matched) == (base.n_weap1, base.n_matched)

    def test_key_order(self, sars_orig, synth):
        """Keys are a set"""
        reversed_cfg = KeyTargetConfig(keys=tuple(reversed(self.CFG.keys)), target=self.CFG.target)
        base = tcap(sars_orig, synth, self.CFG)
        flipped = tcap(sars_orig, synth, reversed_cfg)
        assert flipped.tcap == pytest.approx(base.tcap, rel=1e-12)
        assert flipped.n_weap1 == base.n_weap1

    def test_threshold_monotone(self, sars_orig, synth):
        """Raising the WEAP threshold never admits more records"""
        selected = [tcap(sars_orig, synth, self.CFG, weap_threshold=t).n_weap1
                    for t in (0.1, 0.25, 0.5, 0.75, 0.9, 1.0)]
        assert selected == sorted(selected, reverse=True)

    def test_weap_bounds(self, synth):
        """1/|class| <= WEAP <= 1 for every record"""
        numerators, denominators = weap_counts(synth, self.CFG)
        scores = weap_scores(synth, self.CFG)
        assert np.all(numerators >= 1)
        assert np.all(scores * denominators >= 1 - 1e-12)
        assert np.all(scores <= 1.0)


class TestExactAttribution:
    """Test attribution counts against tuple counting over many random datasets"""

    CFG = KeyTargetConfig(keys=("V0", "V1", "V3"), target="V2")

    @pytest.mark.parametrize("threshold", [Fraction(1), Fraction(1, 2)])
    def test_counts_match_definition(self, random_dataset, threshold):
        """Selected rows and integer counts agree exactly on 500 seeds"""
        for seed in range(500):
            orig = random_dataset(n=20 + seed % 60, seed=seed)
            synth = Dataset.from_codes(orig.schema, dict(random_dataset(n=10 + seed % 45, seed=seed + 1000).columns))
            rows, numerators, denominators = attribution_counts(orig, synth, self.CFG, float(threshold))
            got = list(zip(rows.tolist(), numerators.tolist(), denominators.tolist()))
            expected = _counted_attribution(orig, synth, self.CFG, threshold)
            assert got == expected, f"seed {seed}"

            defined = [Fraction(num, den) for _, num, den in expected if den]
            result = tcap(orig, synth, self.CFG, weap_threshold=float(threshold))
            if defined:
                assert result.tcap == pytest.approx(float(sum(defined) / len(defined)), rel=1e-12), f"seed {seed}"
            else:
                assert result.n_matched == 0
