"""Parse appliance channel recordings into validated power series.

Channel files follow the common per-appliance layout: one ``<unix_timestamp>
<power_watts>`` pair per line, sampled nominally every 6 seconds. Power is
stored internally in kW.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ChannelFormatError, EmptySeriesError

SAMPLE_PERIOD = 6.0
DEFAULT_MAX_GAP = 30.0


@dataclass(frozen=True)
class PowerSeries:
    """One appliance channel: strictly increasing timestamps, power in kW.

    ``run_starts`` marks the beginning of each contiguous run; windowing must
    never span a run boundary. A freshly parsed series has a single nominal
    run. ``resample_gaps`` establishes real run boundaries.
    """

    appliance_id: int
    timestamps: np.ndarray
    power: np.ndarray
    sample_period: float = SAMPLE_PERIOD
    run_starts: np.ndarray = field(default_factory=lambda: np.zeros(1, dtype=np.int64))

    def __post_init__(self):
        if len(self.timestamps) != len(self.power):
            raise ValueError("timestamps and power must have equal length")
        if len(self.timestamps) == 0:
            raise EmptySeriesError("power series has no samples")
        if np.any(np.diff(self.timestamps) <= 0):
            raise ValueError("timestamps must be strictly increasing")
        if not np.all(np.isfinite(self.power)) or np.any(self.power < 0):
            raise ValueError("power values must be finite and non-negative")

    def __len__(self) -> int:
        return len(self.timestamps)

    def run_bounds(self) -> list[tuple[int, int]]:
        """(start, end) index pairs of the contiguous runs, end exclusive."""
        starts = list(self.run_starts) + [len(self.timestamps)]
        return [(int(a), int(b)) for a, b in zip(starts[:-1], starts[1:])]


@dataclass(frozen=True)
class ParseStats:
    """What parsing had to clean up."""

    total_lines: int = 0
    clamped_negatives: int = 0
    duplicate_timestamps: int = 0


def parse_channel_with_stats(path, appliance_id: int) -> tuple[PowerSeries, ParseStats]:
    """Parse a channel file, reporting clamped and deduplicated samples.

    Lines are sorted by timestamp; duplicate timestamps keep the last value;
    negative readings are clamped to zero (sensor noise should not abort a
    multi-year ingest).
    """
    path = Path(path)
    timestamps: list[int] = []
    watts: list[float] = []
    total = 0
    with open(path, "r", encoding="ascii") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            total += 1
            fields = line.split()
            if len(fields) != 2:
                raise ChannelFormatError(path, lineno, line, "expected 2 fields")
            try:
                ts = int(fields[0])
                w = float(fields[1])
            except ValueError:
                raise ChannelFormatError(path, lineno, line, "non-numeric token") from None
            if not np.isfinite(w):
                raise ChannelFormatError(path, lineno, line, "non-finite power")
            timestamps.append(ts)
            watts.append(w)
    if not timestamps:
        raise EmptySeriesError(f"{path}: no valid samples")

    ts_arr = np.asarray(timestamps, dtype=np.int64)
    w_arr = np.asarray(watts, dtype=np.float64)
    order = np.argsort(ts_arr, kind="stable")
    ts_arr = ts_arr[order]
    w_arr = w_arr[order]

    # Duplicates keep the last occurrence in sorted (stable) order.
    keep = np.ones(len(ts_arr), dtype=bool)
    keep[:-1] = ts_arr[1:] != ts_arr[:-1]
    dups = int(len(ts_arr) - keep.sum())
    ts_arr = ts_arr[keep]
    w_arr = w_arr[keep]

    negatives = int(np.sum(w_arr < 0))
    w_arr = np.maximum(w_arr, 0.0)

    series = PowerSeries(
        appliance_id=appliance_id,
        timestamps=ts_arr,
        power=w_arr / 1000.0,
    )
    stats = ParseStats(
        total_lines=total,
        clamped_negatives=negatives,
        duplicate_timestamps=dups,
    )
    return series, stats


def parse_channel(path, appliance_id: int) -> PowerSeries:
    """Parse a ``<timestamp> <watts>`` channel file into a PowerSeries (kW)."""
    return parse_channel_with_stats(path, appliance_id)[0]


def serialize_channel(series: PowerSeries, path) -> None:
    """Write a series back to the channel file format.

    Inverse of ``parse_channel`` for any series that came from a channel file:
    the emitted watt value is chosen so that ``watts / 1000`` reproduces the
    stored kW value exactly.
    """
    with open(path, "w", encoding="ascii") as fh:
        for ts, kw in zip(series.timestamps, series.power):
            fh.write(f"{int(ts)} {_exact_watts(float(kw))}\n")


def _exact_watts(kw: float) -> str:
    w = kw * 1000.0
    if w / 1000.0 != kw:
        # kw*1000 rounded the wrong way; the witness is within a few ulps.
        for _ in range(4):
            w = np.nextafter(w, np.inf if w / 1000.0 < kw else -np.inf)
            if w / 1000.0 == kw:
                break
    w = float(w)
    return str(int(w)) if w.is_integer() else repr(w)


def resample_gaps(series: PowerSeries, max_gap: float = DEFAULT_MAX_GAP) -> PowerSeries:
    """Split on long gaps and forward-fill short ones onto the 6 s grid.

    Gaps longer than ``max_gap`` seconds separate contiguous runs. Within a
    run, every slot is the latest sample at or before the slot time, so the
    only fabricated values are copies of the immediately preceding sample.
    """
    ts = series.timestamps
    gaps = np.diff(ts)
    run_edge = np.flatnonzero(gaps > max_gap) + 1
    bounds = np.concatenate([[0], run_edge, [len(ts)]])

    period = int(series.sample_period)
    out_ts: list[np.ndarray] = []
    out_power: list[np.ndarray] = []
    run_starts = []
    total = 0
    for a, b in zip(bounds[:-1], bounds[1:]):
        span = int(ts[b - 1] - ts[a])
        slots = span // period + 1
        grid = ts[a] + period * np.arange(slots, dtype=np.int64)
        src = np.searchsorted(ts[a:b], grid, side="right") - 1
        out_ts.append(grid)
        out_power.append(series.power[a:b][src])
        run_starts.append(total)
        total += slots

    return PowerSeries(
        appliance_id=series.appliance_id,
        timestamps=np.concatenate(out_ts),
        power=np.concatenate(out_power),
        sample_period=series.sample_period,
        run_starts=np.asarray(run_starts, dtype=np.int64),
    )


def save_cache(series: PowerSeries, path) -> None:
    """Binary cache of a series; round-trips bit-exactly."""
    np.savez(
        path,
        appliance_id=np.int64(series.appliance_id),
        timestamps=series.timestamps,
        power=series.power,
        sample_period=np.float64(series.sample_period),
        run_starts=series.run_starts,
    )


def load_cache(path) -> PowerSeries:
    with np.load(path) as data:
        return PowerSeries(
            appliance_id=int(data["appliance_id"]),
            timestamps=data["timestamps"],
            power=data["power"],
            sample_period=float(data["sample_period"]),
            run_starts=data["run_starts"],
        )
