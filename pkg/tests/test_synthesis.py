import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nilmset.errors import EmptyMatrixError, NoValidWindowsError
from nilmset.ingest import PowerSeries
from nilmset.synthesis import (
    WindowMatrix,
    build_window_matrix,
    extract_windows,
    is_valid_window,
    load_dataset,
    save_dataset,
    split,
    synthesize,
)


def series_from_power(power, run_starts=None):
    power = np.asarray(power, dtype=np.float64)
    return PowerSeries(
        appliance_id=0,
        timestamps=6 * np.arange(len(power), dtype=np.int64),
        power=power,
        run_starts=np.asarray(run_starts if run_starts is not None else [0], dtype=np.int64),
    )


class TestExtractWindows:
    def test_exact_length_run_gives_one_window(self):
        out = extract_windows(series_from_power(np.ones(600)), 600, 50)
        assert out.shape == (1, 600)

    def test_seven_hundred_samples_gives_three(self):
        power = np.arange(700, dtype=float)
        out = extract_windows(series_from_power(power), 600, 50)
        assert out.shape == (3, 600)
        assert np.array_equal(out[0], power[0:600])
        assert np.array_equal(out[1], power[50:650])
        assert np.array_equal(out[2], power[100:700])

    def test_short_run_gives_nothing(self):
        assert extract_windows(series_from_power(np.ones(599)), 600, 50).shape == (0, 600)

    def test_windows_never_span_runs(self):
        power = np.concatenate([np.ones(650), np.full(650, 2.0)])
        series = series_from_power(power, run_starts=[0, 650])
        out = extract_windows(series, 600, 50)
        assert out.shape == (4, 600)
        for row in out:
            assert len(np.unique(row)) == 1  # each window stays inside one run

    @given(st.integers(min_value=0, max_value=3000), st.integers(min_value=1, max_value=400))
    @settings(max_examples=80, deadline=None)
    def test_count_matches_closed_form(self, run_len, step):
        window_len = 600
        if run_len == 0:
            return
        series = series_from_power(np.ones(run_len))
        got = extract_windows(series, window_len, step).shape[0]
        expected = (run_len - window_len) // step + 1 if run_len >= window_len else 0
        assert got == expected


class TestValidity:
    def test_all_zero_window_invalid(self):
        assert not is_valid_window(np.zeros(600))

    def test_threshold_boundary(self):
        window = np.zeros(600)
        window[:100] = 0.2
        assert is_valid_window(window)
        window[99] = 0.0
        assert not is_valid_window(window)

    def test_negative_not_counted_as_active(self):
        window = np.zeros(600)
        window[:100] = 1e-9
        assert is_valid_window(window)


class TestBuildWindowMatrix:
    def test_always_on_hour(self):
        matrix = build_window_matrix(series_from_power(np.ones(600)))
        assert matrix.num_valid == 1

    def test_all_zero_series_rejected(self):
        with pytest.raises(NoValidWindowsError):
            build_window_matrix(series_from_power(np.zeros(700)))

    def test_positives_only_at_start(self):
        power = np.zeros(700)
        power[:100] = 1.0
        matrix = build_window_matrix(series_from_power(power))
        # offsets 0 (100 positives), 50 (50), 100 (0): only the first is valid
        assert matrix.num_valid == 1
        assert np.array_equal(matrix.rows[0], power[:600])


def small_matrices(window_len=12, counts=(3, 4, 5, 2), seed=0):
    rng = np.random.default_rng(seed)
    return [
        WindowMatrix(appliance_id=i, rows=rng.uniform(0.1, 2.0, size=(n, window_len)))
        for i, n in enumerate(counts)
    ]


class TestSynthesize:
    def test_row_semantics(self):
        mats = small_matrices()
        ds = synthesize(mats, repetitions=200, seed=3)
        assert ds.features.shape == (200, 12)
        assert ds.labels.shape == (200, 4)
        # replay the documented draw protocol
        rng = np.random.default_rng(3)
        bits = rng.integers(0, 2, size=(200, 4))
        idx = np.empty((200, 4), dtype=np.int64)
        for i, m in enumerate(mats):
            idx[:, i] = rng.integers(0, m.num_valid, size=200)
        assert np.array_equal(bits.astype(np.int8), ds.labels)
        for k in range(200):
            expected = np.zeros(12)
            for i, m in enumerate(mats):
                expected = expected + bits[k, i] * m.rows[idx[k, i]]
            assert np.array_equal(expected, ds.features[k])

    def test_zero_activation_rows_are_zero(self):
        ds = synthesize(small_matrices(), repetitions=500, seed=1)
        empty = np.all(ds.labels == 0, axis=1)
        assert empty.any()
        assert np.all(ds.features[empty] == 0.0)

    def test_single_activation_row_copies_source(self):
        mats = small_matrices()
        ds = synthesize(mats, repetitions=500, seed=2)
        solo = np.flatnonzero((ds.labels.sum(axis=1) == 1) & (ds.labels[:, 1] == 1))
        assert len(solo) > 0
        row = ds.features[solo[0]]
        assert any(np.array_equal(row, r) for r in mats[1].rows)

    def test_deterministic(self):
        a = synthesize(small_matrices(), 100, seed=9)
        b = synthesize(small_matrices(), 100, seed=9)
        assert np.array_equal(a.features, b.features)
        assert np.array_equal(a.labels, b.labels)

    def test_empty_matrix_rejected(self):
        mats = small_matrices()
        mats[2] = WindowMatrix(appliance_id=2, rows=np.empty((0, 12)))
        with pytest.raises(EmptyMatrixError):
            synthesize(mats, 10, seed=0)

    def test_features_nonnegative(self):
        ds = synthesize(small_matrices(), 300, seed=5)
        assert np.all(ds.features >= 0)

    def test_label_marginals_fair(self):
        ds = synthesize(small_matrices(), 10000, seed=11)
        from scipy import stats

        for i in range(4):
            ones = int(ds.labels[:, i].sum())
            chi2 = (ones - 5000) ** 2 / 5000 + ((10000 - ones) - 5000) ** 2 / 5000
            assert stats.chi2.sf(chi2, df=1) > 0.001


class TestSplit:
    def test_eight_two(self):
        ds = synthesize(small_matrices(), 10, seed=0)
        train, test = split(ds, 0.8, seed=1)
        assert len(train) == 8 and len(test) == 2

    def test_disjoint_and_covering(self):
        ds = synthesize(small_matrices(), 101, seed=0)
        train, test = split(ds, 0.8, seed=4)
        merged = np.sort(np.concatenate([train.indices, test.indices]))
        assert np.array_equal(merged, np.arange(101))

    def test_deterministic(self):
        ds = synthesize(small_matrices(), 50, seed=0)
        a = split(ds, 0.8, seed=7)
        b = split(ds, 0.8, seed=7)
        assert np.array_equal(a[0].indices, b[0].indices)

    def test_ten_thousand_rows(self):
        ds = synthesize(small_matrices(window_len=4), 10000, seed=0)
        train, test = split(ds, 0.8, seed=1)
        assert len(train) == 8000 and len(test) == 2000
        assert ds.split_index == 8000


class TestPersistence:
    def test_roundtrip(self, tmp_path):
        ds = synthesize(small_matrices(), 40, seed=13)
        save_dataset(ds, tmp_path, params={"note": "fixture"})
        again = load_dataset(tmp_path)
        assert np.array_equal(again.features, ds.features)
        assert np.array_equal(again.labels, ds.labels)
        assert again.seed == ds.seed
        assert again.split_index == ds.split_index
        assert again.num_valid == ds.num_valid

    def test_rewrite_is_byte_identical(self, tmp_path):
        ds = synthesize(small_matrices(), 25, seed=13)
        save_dataset(ds, tmp_path / "a")
        save_dataset(ds, tmp_path / "b")
        for name in ("features.csv", "labels.csv", "dataset.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
