# tests/test_report.py
import json
import multiprocessing
import time
from unittest.mock import patch

import pytest

from src.errors import NoSubjects
from src.report import (
    ORIGINAL_LABEL, RuMapPoint, build_report, crosstab_rows, emit_ru_map, parse_ru_csv, render_ru_csv,
    render_ru_svg, render_table_csv, round_sig, ru_points, tcap_table_rows, to_json, utility_table_rows,
)
from src.presets import sars_risk_config, sars_rules
from src.risk_tcap import RiskConfig
from src.synth_baseline import order_variables, synth_marginal, synthesize

RISK = RiskConfig(targets=["LTILL"], key_sets=[["AREAP", "AGE", "SEX"]])


@pytest.fixture(scope="module")
def copy_report(sars_orig):
    return build_report(sars_orig, {"copy": sars_orig}, RISK)


def _unreadable():
    raise FileNotFoundError("synthetic/missing.csv")


class TestBuildReport:
    """Test report assembly"""

    def test_copy_sits_on_original_point(self, copy_report):
        """Copy evaluates to utility 1 and risk 1"""
        point = next(p for p in ru_points(copy_report) if p.label == "copy")
        assert point.utility == pytest.approx(1.0)
        assert point.risk == pytest.approx(1.0)
        assert not copy_report.partial

    def test_original_point_appended(self, copy_report):
        """Reference point at (1, 1) unless excluded"""
        labels = [p.label for p in ru_points(copy_report)]
        assert labels[-1] == ORIGINAL_LABEL
        assert ORIGINAL_LABEL not in [p.label for p in ru_points(copy_report, include_original=False)]

    def test_no_subjects(self, sars_orig):
        """Nothing to evaluate"""
        with pytest.raises(NoSubjects):
            build_report(sars_orig, {}, RISK)

    def test_failing_loader_is_isolated(self, sars_orig):
        """An unreadable synthetic file becomes an error entry, others still run"""
        with patch("src.report.record_evaluation") as recorded:
            report = build_report(sars_orig, {"broken": _unreadable, "copy": lambda: sars_orig}, RISK)
        assert report.failed == ["broken"]
        assert report.partial
        assert report.per_synthesizer["broken"].error_type == "FileNotFoundError"
        assert report.per_synthesizer["copy"].ok
        assert [c.args[0] for c in recorded.call_args_list] == ["error", "success"]

    def test_json_deterministic(self, sars_orig):
        """Two runs over the same inputs give identical bytes"""
        synth = synth_marginal(sars_orig, 1000, seed=3)
        first = to_json(build_report(sars_orig, {"marginal": synth}, RISK))
        second = to_json(build_report(sars_orig, {"marginal": synth}, RISK))
        assert first == second
        assert "timestamps" not in json.loads(first)

    def test_json_timestamps_opt_in(self, copy_report):
        """Timestamps only when asked for"""
        payload = json.loads(to_json(copy_report, include_timestamps=True))
        assert payload["timestamps"]["started_at"] <= payload["timestamps"]["finished_at"]

    def test_json_error_entry(self, sars_orig):
        """Failed synthesizers keep their label, type and message"""
        report = build_report(sars_orig, {"broken": _unreadable}, RISK)
        entry = json.loads(to_json(report))["synthesizers"][0]
        assert entry["status"] == "error"
        assert "missing.csv" in entry["error"]

    def test_timeout_bounds_subject(self, sars_orig):
        """A stuck loader is cut off and its worker does not outlive the report"""
        def stuck():
            time.sleep(30)
            return sars_orig

        t0 = time.perf_counter()
        report = build_report(sars_orig, {"stuck": stuck}, RISK, timeout_seconds=0.5)
        assert time.perf_counter() - t0 < 10.0
        assert report.per_synthesizer["stuck"].error_type == "TimeoutError"
        assert multiprocessing.active_children() == []


class TestRuMap:
    """Test R-U map output"""

    POINTS = [
        RuMapPoint(label="cart", utility=0.833, risk=0.728, baseline_risk=0.442),
        RuMapPoint(label="marginal", utility=0.351, risk=0.45, baseline_risk=0.442),
    ]

    def test_csv_roundtrip(self):
        """Points parse back from their CSV"""
        assert parse_ru_csv(render_ru_csv(self.POINTS)) == self.POINTS

    def test_svg_points_and_baseline(self):
        """One circle per point and a single baseline line"""
        svg = render_ru_svg(self.POINTS, baseline=0.442)
        assert svg.count('class="point"') == 2
        assert svg.count('class="baseline"') == 1
        assert "cart" in svg and "marginal" in svg

    def test_svg_without_baseline(self):
        """A single point and no reference line"""
        svg = render_ru_svg(self.POINTS[:1])
        assert svg.count('class="point"') == 1
        assert 'class="baseline"' not in svg

    def test_label_escaped(self):
        """Labels are XML-escaped"""
        svg = render_ru_svg([RuMapPoint(label="a<b", utility=0.5, risk=0.5, baseline_risk=0.4)])
        assert "a&lt;b" in svg

    def test_non_finite_point(self):
        """A point needs finite coordinates"""
        with pytest.raises(ValueError):
            RuMapPoint(label="x", utility=float("nan"), risk=0.5, baseline_risk=0.4)

    def test_emit_only_original_excluded(self, sars_orig):
        """No successful synthesizer and no reference point leaves nothing to plot"""
        report = build_report(sars_orig, {"broken": _unreadable}, RISK)
        with pytest.raises(NoSubjects):
            emit_ru_map(report, include_original=False)

    def test_emit_svg(self, copy_report):
        """Copy plus the reference point"""
        svg = emit_ru_map(copy_report, format="svg").decode("utf-8")
        assert svg.count('class="point"') == 2


class TestTables:
    """Test tabular artifacts"""

    def test_tcap_average_row_last(self, copy_report):
        """Config rows then the Average row"""
        rows = tcap_table_rows(copy_report)
        assert [r["target"] for r in rows] == ["LTILL", "Average"]
        assert rows[0]["copy"] == pytest.approx(1.0)
        assert rows[-1]["baseline"] == pytest.approx(copy_report.baseline_average)

    def test_utility_rows(self, copy_report):
        """One row per metric"""
        rows = utility_table_rows(copy_report)
        assert rows[-1]["metric"] == "Overall utility"
        assert rows[-1]["copy"] == pytest.approx(1.0)

    def test_render_table_csv(self):
        """Missing values render empty, floats rounded"""
        text = render_table_csv([{"metric": "x", "a": None, "b": 0.12345678}])
        assert text.splitlines() == ["metric,a,b", "x,,0.123457"]

    def test_crosstab_rows(self, small_dataset):
        """Original and synthetic counts side by side"""
        rows = crosstab_rows(small_dataset, {"copy": small_dataset})
        a_rows = [r for r in rows if r["variable"] == "A"]
        assert [(r["category"], r[ORIGINAL_LABEL], r["copy"]) for r in a_rows] == [("a", 4, 4), ("b", 4, 4)]


class TestRoundSig:
    """Test significant-digit rounding"""

    @pytest.mark.parametrize("value, digits, expected", [
        (0.1234565, 6, 0.123456),
        (0.1234575, 6, 0.123458),
        (2.5, 1, 2.0),
        (3.5, 1, 4.0),
        (123456789.0, 3, 123000000.0),
        (0.0, 6, 0.0),
    ])
    def test_half_even(self, value, digits, expected):
        """Ties go to the even digit"""
        assert round_sig(value, digits) == expected

    @pytest.mark.parametrize("value", [None, float("nan"), float("inf")])
    def test_missing(self, value):
        """Non-finite values have no rounded form"""
        assert round_sig(value) is None


class TestBaselineCalibration:
    """CART and independent marginals on the shipped census configuration"""

    @pytest.fixture(scope="class")
    def points(self, sars_orig):
        order = order_variables(sars_orig.schema, first="AGE", data=sars_orig)
        synths = {
            "cart": synthesize("cart", sars_orig, sars_orig.n_rows, seed=13, rules=sars_rules(),
                               order=order).dataset,
            "marginal": synthesize("marginal", sars_orig, sars_orig.n_rows, seed=13,
                                   rules=sars_rules()).dataset,
        }
        report = build_report(sars_orig, synths, sars_risk_config(), jobs=2)
        assert not report.partial
        return {p.label: p for p in ru_points(report, include_original=False)}

    def test_cart_riskier(self, points):
        """Grand-average TCAP of CART exceeds that of marginals"""
        assert points["cart"].risk > points["marginal"].risk

    def test_cart_more_useful(self, points):
        """Overall utility of CART exceeds that of marginals"""
        assert points["cart"].utility > points["marginal"].utility

    def test_below_left_of_original(self, points):
        """Both baselines are strictly less useful and less risky than the original"""
        for point in points.values():
            assert point.utility < 1.0
            assert point.risk < 1.0
