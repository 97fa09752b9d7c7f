import json
import math

import pandas as pd
import pytest

from src.core.exceptions import IoFailure, ValidationError
from src.core.report import Metric, VerificationReport, emit, emit_table, load_report, report_to_json

pytestmark = pytest.mark.unit


@pytest.fixture
def report():
    rep = VerificationReport(suite="demo", config={"n": 33})
    rep.add("residual", 1.5e-7, bound=1e-6)
    rep.add("contraction", 0.75, bound=0.5)
    rep.add("count", 12)
    rep.add_table("curve", [(1, 0.5), (2, 0.25)])
    rep.wall_time = 1.25
    return rep


class TestMetric:
    def test_pass_is_derived_from_limits(self):
        assert Metric(name="a", value=1.0, bound=2.0).passed is True
        assert Metric(name="a", value=3.0, bound=2.0).passed is False
        assert Metric(name="a", value=1.0, lower=2.0).passed is False
        assert Metric(name="a", value=1.5, bound=2.0, lower=1.0).passed is True

    def test_informational_metric_has_no_flag(self):
        assert Metric(name="a", value=1.0).passed is None

    def test_explicit_flag_wins(self):
        assert Metric(name="a", value=3.0, bound=2.0, passed=True).passed is True

    def test_nan_never_passes(self):
        assert Metric(name="a", value=float("nan"), bound=1.0).passed is False

    def test_numbers_parse_from_strings(self):
        metric = Metric(name="a", value="inf", witness=["1.0e+00", "-2.5e-01"])
        assert math.isinf(metric.value)
        assert metric.witness == [1.0, -0.25]


class TestReport:
    def test_lookup(self, report):
        assert report.metric("count").value == 12.0
        with pytest.raises(KeyError):
            report.metric("missing")

    def test_failed_metrics(self, report):
        assert [m.name for m in report.failed] == ["contraction"]
        assert report.all_passed is False

    def test_extend_with_prefix(self, report):
        total = VerificationReport(suite="all")
        total.extend(report, prefix="demo")
        assert [m.name for m in total.metrics] == ["demo.residual", "demo.contraction", "demo.count"]
        assert total.tables["demo.curve"] == [[1.0, 0.5], [2.0, 0.25]]
        # the source report keeps its own names
        assert report.metrics[0].name == "residual"

    def test_extend_without_prefix(self, report):
        total = VerificationReport(suite="all")
        total.extend(report)
        assert total.metric("residual").passed is True


class TestSerialization:
    def test_floats_are_formatted(self, report):
        payload = json.loads(report_to_json(report))
        residual = payload["metrics"][0]
        assert residual["value"] == "1.500000000000e-07"
        assert residual["bound"] == "1.000000000000e-06"
        assert residual["lower"] is None
        assert residual["passed"] is True
        assert payload["tables"]["curve"][0] == ["1.000000000000e+00", "5.000000000000e-01"]
        assert "wall_time" not in payload

    def test_timing_is_optional(self, report):
        payload = json.loads(report_to_json(report, include_timing=True))
        assert payload["wall_time"] == "1.250000000000e+00"

    def test_output_is_deterministic(self, report):
        assert report_to_json(report) == report_to_json(report.model_copy(update={"wall_time": 9.0}))

    def test_json_round_trip(self, report, tmp_path):
        path = tmp_path / "report.json"
        emit(report, "json", path)
        loaded = load_report(path)
        assert loaded.suite == "demo"
        assert loaded.config == {"n": 33}
        assert [m.name for m in loaded.metrics] == ["residual", "contraction", "count"]
        assert loaded.metric("residual").value == pytest.approx(1.5e-7, rel=1e-12)
        assert loaded.metric("contraction").passed is False
        assert loaded.tables == report.tables
        assert loaded.wall_time is None

    def test_csv(self, report, tmp_path):
        path = tmp_path / "report.csv"
        emit(report, "csv", path)
        frame = pd.read_csv(path)
        assert list(frame.columns) == ["name", "value", "bound", "pass"]
        assert list(frame["name"]) == ["residual", "contraction", "count"]
        assert frame["value"].iloc[1] == pytest.approx(0.75)

    def test_unknown_format(self, report, tmp_path):
        with pytest.raises(ValidationError):
            emit(report, "xml", tmp_path / "report.xml")

    def test_unwritable_path(self, report, tmp_path):
        with pytest.raises(IoFailure):
            emit(report, "json", tmp_path / "missing" / "report.json")

    def test_missing_report(self, tmp_path):
        with pytest.raises(IoFailure):
            load_report(tmp_path / "absent.json")

    def test_table_csv(self, report, tmp_path):
        path = tmp_path / "curve.csv"
        emit_table(report, "curve", path)
        frame = pd.read_csv(path)
        assert list(frame.columns) == ["M_or_k", "value"]
        assert frame["value"].tolist() == [0.5, 0.25]
