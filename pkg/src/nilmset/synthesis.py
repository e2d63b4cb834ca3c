"""Window extraction, validity filtering, and synthetic aggregate generation.

The pipeline slides one-hour windows (600 samples at 6 s) over each appliance
channel with a 5-minute step, keeps windows with at least 10 minutes of
activity (100 samples above zero), and then builds labeled aggregate rows by
summing randomly chosen valid windows of a random appliance subset.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EmptyMatrixError, NoValidWindowsError
from .ingest import PowerSeries

WINDOW_LEN = 600
STEP = 50
ACTIVE_THRESHOLD = 100
NUM_APPLIANCES = 4
DEFAULT_REPETITIONS = 10000
DEFAULT_TRAIN_FRACTION = 0.8


@dataclass(frozen=True)
class WindowMatrix:
    """All valid windows of one appliance, in extraction order."""

    appliance_id: int
    rows: np.ndarray  # (num_valid, window_len) kW

    @property
    def num_valid(self) -> int:
        return self.rows.shape[0]


@dataclass
class SyntheticDataset:
    """Aggregate windows paired with per-appliance activation bits."""

    features: np.ndarray  # (N, window_len) kW
    labels: np.ndarray  # (N, NUM_APPLIANCES) in {0, 1}
    seed: int
    split_index: int
    num_valid: tuple[int, ...]

    def __len__(self) -> int:
        return self.features.shape[0]


@dataclass(frozen=True)
class DatasetView:
    """A row subset of a dataset (train or test side of a split)."""

    features: np.ndarray
    labels: np.ndarray
    indices: np.ndarray

    def __len__(self) -> int:
        return self.features.shape[0]


def extract_windows(series: PowerSeries, window_len: int = WINDOW_LEN, step: int = STEP) -> np.ndarray:
    """Every window of ``window_len`` consecutive samples at multiples of ``step``.

    Windows are taken within each contiguous run only; a run shorter than the
    window contributes nothing. Returns an (n_windows, window_len) array.
    """
    if window_len < 1 or step < 1:
        raise ValueError("window_len and step must be >= 1")
    chunks = []
    for a, b in series.run_bounds():
        run_len = b - a
        if run_len < window_len:
            continue
        n = (run_len - window_len) // step + 1
        offsets = a + step * np.arange(n)
        view = np.lib.stride_tricks.sliding_window_view(series.power, window_len)
        chunks.append(view[offsets])
    if not chunks:
        return np.empty((0, window_len), dtype=np.float64)
    return np.concatenate(chunks, axis=0)


def is_valid_window(window: np.ndarray, active_threshold: int = ACTIVE_THRESHOLD) -> bool:
    """True iff the window has at least ``active_threshold`` samples above zero.

    A single positive power measurement counts as one activity event; the
    default threshold is 10 minutes of events (100 samples at 6 s).
    """
    return int(np.count_nonzero(window > 0)) >= active_threshold


def build_window_matrix(
    series: PowerSeries,
    window_len: int = WINDOW_LEN,
    step: int = STEP,
    active_threshold: int = ACTIVE_THRESHOLD,
) -> WindowMatrix:
    """Extract windows and keep the valid ones, preserving extraction order."""
    windows = extract_windows(series, window_len, step)
    if windows.shape[0] > 0:
        valid = np.count_nonzero(windows > 0, axis=1) >= active_threshold
        windows = windows[valid]
    if windows.shape[0] == 0:
        raise NoValidWindowsError(
            f"appliance {series.appliance_id}: no window has >= {active_threshold} active samples"
        )
    return WindowMatrix(appliance_id=series.appliance_id, rows=np.ascontiguousarray(windows))


def synthesize(
    matrices: list[WindowMatrix],
    repetitions: int = DEFAULT_REPETITIONS,
    seed: int = 0,
    train_fraction: float = DEFAULT_TRAIN_FRACTION,
) -> SyntheticDataset:
    """Build ``repetitions`` labeled aggregate rows from the window matrices.

    Draw protocol, replayable from the stored seed (the reconstruction
    contract relied on by tests and the sidecar):

        rng = np.random.default_rng(seed)
        bits = rng.integers(0, 2, size=(repetitions, 4))
        idx[:, i] = rng.integers(0, num_valid_i, size=repetitions)   # i = 0..3

    Feature row k is the elementwise sum, in appliance order, of
    ``matrices[i].rows[idx[k, i]]`` over appliances with ``bits[k, i] == 1``;
    the label row is ``bits[k]``. Index vectors are drawn for all four
    appliances whether or not the activation bit is set.
    """
    if len(matrices) != NUM_APPLIANCES:
        raise ValueError(f"expected {NUM_APPLIANCES} window matrices, got {len(matrices)}")
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    for m in matrices:
        if m.num_valid == 0:
            raise EmptyMatrixError(f"appliance {m.appliance_id} has an empty window matrix")

    window_len = matrices[0].rows.shape[1]
    rng = np.random.default_rng(seed)
    bits = rng.integers(0, 2, size=(repetitions, NUM_APPLIANCES))
    indices = np.empty((repetitions, NUM_APPLIANCES), dtype=np.int64)
    for i, m in enumerate(matrices):
        indices[:, i] = rng.integers(0, m.num_valid, size=repetitions)

    features = np.zeros((repetitions, window_len), dtype=np.float64)
    for i, m in enumerate(matrices):
        features += bits[:, i : i + 1] * m.rows[indices[:, i]]

    return SyntheticDataset(
        features=features,
        labels=bits.astype(np.int8),
        seed=seed,
        split_index=int(np.floor(train_fraction * repetitions)),
        num_valid=tuple(m.num_valid for m in matrices),
    )


def split(
    dataset: SyntheticDataset,
    train_fraction: float = DEFAULT_TRAIN_FRACTION,
    seed: int = 0,
) -> tuple[DatasetView, DatasetView]:
    """Seeded shuffle, then split at floor(train_fraction * N).

    The two views are disjoint and together cover the dataset.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must be in (0, 1)")
    n = len(dataset)
    perm = np.random.default_rng(seed).permutation(n)
    cut = int(np.floor(train_fraction * n))
    train_idx, test_idx = perm[:cut], perm[cut:]
    return (
        DatasetView(dataset.features[train_idx], dataset.labels[train_idx], train_idx),
        DatasetView(dataset.features[test_idx], dataset.labels[test_idx], test_idx),
    )


def save_dataset(dataset: SyntheticDataset, out_dir, params: dict | None = None) -> dict:
    """Write features.csv, labels.csv, and the JSON sidecar.

    CSV cells use '.' decimals and shortest round-trip float formatting, in
    generation order, so identical datasets serialize byte-identically.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "features.csv", "w", encoding="ascii") as fh:
        for row in dataset.features:
            fh.write(",".join(repr(v) for v in row.tolist()))
            fh.write("\n")
    with open(out_dir / "labels.csv", "w", encoding="ascii") as fh:
        for row in dataset.labels:
            fh.write(",".join(str(int(v)) for v in row))
            fh.write("\n")
    sidecar = {
        "seed": dataset.seed,
        "repetitions": len(dataset),
        "split_index": dataset.split_index,
        "num_valid": list(dataset.num_valid),
        "window_len": int(dataset.features.shape[1]),
    }
    if params:
        sidecar["params"] = params
    with open(out_dir / "dataset.json", "w", encoding="ascii") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return sidecar


def load_dataset(out_dir) -> SyntheticDataset:
    out_dir = Path(out_dir)
    with open(out_dir / "dataset.json", "r", encoding="ascii") as fh:
        sidecar = json.load(fh)
    features = np.loadtxt(out_dir / "features.csv", delimiter=",", dtype=np.float64, ndmin=2)
    labels = np.loadtxt(out_dir / "labels.csv", delimiter=",", dtype=np.int8, ndmin=2)
    return SyntheticDataset(
        features=features,
        labels=labels,
        seed=sidecar["seed"],
        split_index=sidecar["split_index"],
        num_valid=tuple(sidecar["num_valid"]),
    )
