import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nilmset.errors import ChannelFormatError, EmptySeriesError
from nilmset.ingest import (
    PowerSeries,
    load_cache,
    parse_channel,
    parse_channel_with_stats,
    resample_gaps,
    save_cache,
    serialize_channel,
)


def write(tmp_path, text, name="channel_1.dat"):
    path = tmp_path / name
    path.write_text(text)
    return path


class TestParseChannel:
    def test_watts_to_kilowatts(self, tmp_path):
        series = parse_channel(write(tmp_path, "100 500\n106 0\n112 1500\n"), 0)
        assert series.timestamps.tolist() == [100, 106, 112]
        assert series.power.tolist() == [0.5, 0.0, 1.5]
        assert series.appliance_id == 0

    def test_empty_file(self, tmp_path):
        with pytest.raises(EmptySeriesError):
            parse_channel(write(tmp_path, ""), 0)

    def test_non_numeric_token_reports_line(self, tmp_path):
        with pytest.raises(ChannelFormatError) as err:
            parse_channel(write(tmp_path, "100 abc\n"), 0)
        assert err.value.line_number == 1

    def test_wrong_field_count(self, tmp_path):
        with pytest.raises(ChannelFormatError) as err:
            parse_channel(write(tmp_path, "100 5\n106 5 7\n"), 0)
        assert err.value.line_number == 2

    def test_missing_file(self, tmp_path):
        with pytest.raises(OSError):
            parse_channel(tmp_path / "nope.dat", 0)

    def test_unsorted_lines_are_ordered(self, tmp_path):
        series = parse_channel(write(tmp_path, "112 3\n100 1\n106 2\n"), 0)
        assert series.timestamps.tolist() == [100, 106, 112]
        assert series.power.tolist() == [0.001, 0.002, 0.003]

    def test_duplicate_timestamps_keep_last(self, tmp_path):
        series, stats = parse_channel_with_stats(write(tmp_path, "100 1\n100 2\n106 3\n"), 0)
        assert series.power.tolist() == [0.002, 0.003]
        assert stats.duplicate_timestamps == 1

    def test_negative_clamped_and_counted(self, tmp_path):
        series, stats = parse_channel_with_stats(write(tmp_path, "100 -5\n106 7\n"), 0)
        assert series.power.tolist() == [0.0, 0.007]
        assert stats.clamped_negatives == 1

    def test_blank_lines_skipped(self, tmp_path):
        series = parse_channel(write(tmp_path, "\n100 5\n\n106 6\n"), 0)
        assert len(series) == 2


watt_values = st.one_of(
    st.integers(min_value=0, max_value=10_000_000),
    st.decimals(min_value=0, max_value=100_000, places=2).map(float),
)


@given(st.lists(watt_values, min_size=1, max_size=40))
@settings(max_examples=60, deadline=None)
def test_parse_serialize_roundtrip(tmp_path_factory, watts):
    tmp = tmp_path_factory.mktemp("roundtrip")
    src = tmp / "src.dat"
    src.write_text("".join(f"{100 + 6 * i} {w}\n" for i, w in enumerate(watts)))
    series = parse_channel(src, 2)
    out = tmp / "out.dat"
    serialize_channel(series, out)
    again = parse_channel(out, 2)
    assert again.timestamps.tolist() == series.timestamps.tolist()
    assert again.power.tolist() == series.power.tolist()


class TestResampleGaps:
    def make(self, timestamps, power):
        return PowerSeries(
            appliance_id=0,
            timestamps=np.asarray(timestamps, dtype=np.int64),
            power=np.asarray(power, dtype=np.float64),
        )

    def test_contiguous_is_identity(self):
        series = self.make([0, 6, 12, 18], [1.0, 2.0, 3.0, 4.0])
        out = resample_gaps(series, max_gap=30)
        assert out.timestamps.tolist() == [0, 6, 12, 18]
        assert out.power.tolist() == [1.0, 2.0, 3.0, 4.0]
        assert out.run_starts.tolist() == [0]

    def test_short_gap_forward_filled(self):
        # 12 s gap: span/6 + 1 = 3 slots, middle one copies its predecessor.
        series = self.make([0, 12], [1.0, 2.0])
        out = resample_gaps(series, max_gap=30)
        assert out.timestamps.tolist() == [0, 6, 12]
        assert out.power.tolist() == [1.0, 1.0, 2.0]
        assert out.run_starts.tolist() == [0]

    def test_long_gap_splits_runs(self):
        series = self.make([0, 6, 3606, 3612], [1.0, 2.0, 3.0, 4.0])
        out = resample_gaps(series, max_gap=30)
        assert out.run_starts.tolist() == [0, 2]
        assert out.run_bounds() == [(0, 2), (2, 4)]
        assert out.power.tolist() == [1.0, 2.0, 3.0, 4.0]

    @given(
        st.lists(st.integers(min_value=1, max_value=120), min_size=1, max_size=30),
        st.lists(st.floats(min_value=0, max_value=5, allow_nan=False), min_size=31, max_size=31),
    )
    @settings(max_examples=60, deadline=None)
    def test_never_fabricates_new_values(self, gaps, power):
        timestamps = np.cumsum([0] + [6 * g for g in gaps])
        series = self.make(timestamps, power[: len(timestamps)])
        out = resample_gaps(series, max_gap=30)
        assert set(out.power.tolist()) <= set(series.power.tolist())
        assert np.all(out.power >= 0) and np.all(np.isfinite(out.power))
        for a, b in out.run_bounds():
            assert np.all(np.diff(out.timestamps[a:b]) == 6)


def test_cache_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    series = resample_gaps(
        PowerSeries(
            appliance_id=3,
            timestamps=np.int64(100) + 6 * np.arange(50, dtype=np.int64),
            power=rng.random(50),
        )
    )
    path = tmp_path / "cache.npz"
    save_cache(series, path)
    again = load_cache(path)
    assert again.appliance_id == series.appliance_id
    assert np.array_equal(again.timestamps, series.timestamps)
    assert np.array_equal(again.power, series.power)
    assert np.array_equal(again.run_starts, series.run_starts)
    assert again.sample_period == series.sample_period
