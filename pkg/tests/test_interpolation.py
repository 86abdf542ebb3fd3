"""測試時間序列插值與剖面。"""

import math

import numpy as np
import pandas as pd
import pytest

from der_feedback_simulator.errors import CoverageError, SchemaError
from der_feedback_simulator.interpolation import (
    ConstantProfile,
    InterpolationMethod,
    ScaledProfile,
    SeriesProfile,
    SinusoidProfile,
    StepProfile,
    SumProfile,
    ingest_timeseries,
    interpolate,
    profile_from_spec,
)


@pytest.fixture()
def series_csv(tmp_path):
    """a 每 10 秒一筆；b 在 10 秒處缺值。"""
    path = tmp_path / "series.csv"
    path.write_text("timestamp,a,b\n0,0,10\n10,1,\n20,2,30\n", encoding="utf-8")
    return path


class TestInterpolateFunction:
    """測試 interpolate() 函式。"""

    TIMES = np.array([0.0, 10.0, 20.0])
    VALUES = np.array([0.0, 1.0, 4.0])

    def test_linear_midpoint(self):
        assert interpolate(15.0, self.TIMES, self.VALUES, InterpolationMethod.LINEAR) == pytest.approx(2.5)

    def test_previous_holds(self):
        out = interpolate([0.0, 9.9, 10.0, 19.0], self.TIMES, self.VALUES, InterpolationMethod.PREVIOUS)
        np.testing.assert_array_equal(out, [0.0, 0.0, 1.0, 1.0])

    @pytest.mark.parametrize("method", list(InterpolationMethod))
    def test_clamps_outside(self, method):
        """超出範圍取端點值。"""
        assert interpolate(-5.0, self.TIMES, self.VALUES, method) == pytest.approx(0.0)
        assert interpolate(25.0, self.TIMES, self.VALUES, method) == pytest.approx(4.0)


class TestIngestTimeseries:
    """測試 CSV 讀取與格點插值。"""

    def test_linear_grid(self, series_csv):
        table = ingest_timeseries(series_csv, h=5.0)
        np.testing.assert_allclose(table.index.to_numpy(), [0.0, 5.0, 10.0, 15.0, 20.0])
        np.testing.assert_allclose(table["a"], [0.0, 0.5, 1.0, 1.5, 2.0])
        np.testing.assert_allclose(table["b"], [10.0, 15.0, 20.0, 25.0, 30.0])

    def test_previous_grid(self, series_csv):
        table = ingest_timeseries(series_csv, h=5.0, method=InterpolationMethod.PREVIOUS)
        np.testing.assert_allclose(table["a"], [0.0, 0.0, 1.0, 1.0, 2.0])

    def test_duration_shortens_grid(self, series_csv):
        assert len(ingest_timeseries(series_csv, h=5.0, duration=12.0)) == 3

    def test_coverage(self, series_csv):
        with pytest.raises(CoverageError) as excinfo:
            ingest_timeseries(series_csv, h=5.0, duration=30.0)
        assert excinfo.value.series in {"a", "b"}

    def test_max_gap(self, series_csv):
        with pytest.raises(CoverageError) as excinfo:
            ingest_timeseries(series_csv, h=5.0, max_gap=15.0)
        assert excinfo.value.series == "b"

    def test_missing_timestamp(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("time,a\n0,1\n", encoding="utf-8")
        with pytest.raises(SchemaError):
            ingest_timeseries(path, h=1.0)

    def test_non_increasing_timestamps(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("timestamp,a\n0,1\n5,2\n5,3\n", encoding="utf-8")
        with pytest.raises(ValueError):
            ingest_timeseries(path, h=1.0)

    def test_invalid_period(self, series_csv):
        with pytest.raises(ValueError):
            ingest_timeseries(series_csv, h=0.0)


# ── 剖面 ─────────────────────────────────────────────────────────


class TestProfiles:

    def test_constant(self):
        assert ConstantProfile(0.3).value(100.0) == 0.3

    def test_sinusoid(self):
        profile = SinusoidProfile(offset=1.0, amplitude=0.5, period=40.0)
        assert profile.value(10.0) == pytest.approx(1.5)
        assert profile.value(30.0) == pytest.approx(0.5)

    def test_steps(self):
        profile = StepProfile(((0.0, 1.0), (10.0, 2.0)))
        assert profile.value(-1.0) == 1.0
        assert profile.value(5.0) == 1.0
        assert profile.value(10.0) == 2.0

    def test_series(self):
        table = pd.DataFrame({"irr": [0.0, 1.0]}, index=pd.Index([0.0, 10.0], name="t"))
        profile = SeriesProfile("irr", scale=2.0)
        assert profile.value(5.0, table) == pytest.approx(1.0)
        assert profile.columns() == {"irr"}

    def test_series_without_table(self):
        with pytest.raises(CoverageError):
            SeriesProfile("irr").value(0.0)

    def test_sum_and_scale(self):
        profile = ScaledProfile(SumProfile((ConstantProfile(1.0), SeriesProfile("irr"))), factor=0.5)
        table = pd.DataFrame({"irr": [2.0, 2.0]}, index=pd.Index([0.0, 10.0], name="t"))
        assert profile.value(3.0, table) == pytest.approx(1.5)
        assert profile.columns() == {"irr"}


class TestProfileFromSpec:
    """由場景 JSON 建立剖面。"""

    def test_number(self):
        assert profile_from_spec(2) == ConstantProfile(2.0)

    def test_sinusoid(self):
        profile = profile_from_spec({"sinusoid": {"amplitude": 1.0, "period": 4.0}})
        assert profile == SinusoidProfile(0.0, 1.0, 4.0, 0.0)
        assert profile.value(1.0) == pytest.approx(math.sin(math.pi / 2))

    def test_steps(self):
        assert profile_from_spec({"steps": [[0, 0.1], [60, 0.4]]}) == StepProfile(((0.0, 0.1), (60.0, 0.4)))

    def test_csv_and_sum(self):
        profile = profile_from_spec({"sum": [0.5, {"csv": "load", "scale": -1.0}]})
        assert profile == SumProfile((ConstantProfile(0.5), SeriesProfile("load", -1.0)))
        assert profile.columns() == {"load"}

    @pytest.mark.parametrize(
        "spec",
        [
            True,
            "0.5",
            [1.0],
            {"ramp": 1.0},
            {"steps": []},
            {"steps": [[10, 1.0], [5, 2.0]]},
            {"sinusoid": {"amplitude": 1.0, "period": 0.0}},
            {"sinusoid": {"amplitude": 1.0, "period": 4.0, "freq": 1.0}},
            {"sinusoid": {"period": 4.0}},
            {"csv": "load", "offset": 1.0},
        ],
    )
    def test_invalid(self, spec):
        with pytest.raises(SchemaError):
            profile_from_spec(spec)
