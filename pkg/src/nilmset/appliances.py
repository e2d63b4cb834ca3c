"""Synthetic appliance channel generators.

Stand-ins for real per-appliance recordings when none are on disk: each
generator emits a plausible watt trace at 6-second resolution with the usage
texture of its appliance (compressor cycling, heater plateaus, agitation
bursts). Files use the standard channel layout, one ``<timestamp> <watts>``
line per sample.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

APPLIANCE_NAMES = ("dishwasher", "washing_machine", "microwave", "fridge")
SAMPLES_PER_DAY = 14400  # 24 h at 6 s
START_TIMESTAMP = 1_400_000_000
DEFAULT_DAYS = 14


def _steady(rng, length, low, high, jitter=4.0):
    level = rng.uniform(low, high)
    return np.clip(level + rng.normal(0.0, jitter, length), 1.0, None)


def _block_oscillation(rng, length, low, high):
    """Piecewise-constant level changes every few samples (drum reversals)."""
    out = np.empty(length)
    t = 0
    while t < length:
        block = int(rng.integers(5, 16))
        out[t : t + block] = rng.uniform(low, high)
        t += block
    return np.clip(out + rng.normal(0.0, 4.0, length), 1.0, None)


def _dishwasher_cycle(rng):
    parts = [
        _steady(rng, rng.integers(80, 180), 60, 140),      # pre-wash pump
        _steady(rng, rng.integers(180, 300), 2200, 2400),  # main heat
        _steady(rng, rng.integers(120, 240), 60, 140),     # wash pump
        _steady(rng, rng.integers(150, 250), 2200, 2400),  # rinse heat
    ]
    for _ in range(rng.integers(2, 4)):
        parts.append(np.zeros(rng.integers(20, 60)))
        parts.append(_steady(rng, rng.integers(10, 25), 60, 140))  # drain pulses
    return np.concatenate(parts)


def _washer_cycle(rng):
    parts = [
        _block_oscillation(rng, rng.integers(180, 330), 250, 650),     # agitation
        _steady(rng, rng.integers(120, 280), 1700, 1900),              # heat
        _block_oscillation(rng, rng.integers(100, 250), 250, 650),     # agitation
    ]
    for _ in range(rng.integers(3, 6)):
        parts.append(np.zeros(rng.integers(20, 60)))
        parts.append(_steady(rng, rng.integers(15, 40), 350, 550))  # rinse pulses
    for _ in range(rng.integers(2, 5)):
        parts.append(np.zeros(rng.integers(10, 30)))
        parts.append(_steady(rng, rng.integers(20, 50), 720, 1000))  # spin bursts
    return np.concatenate(parts)


def _place_cycles(rng, day, make_cycle, max_cycles):
    # At least one cycle a day keeps every channel synthesizable.
    for _ in range(rng.integers(1, max_cycles + 1)):
        cycle = make_cycle(rng)
        if len(cycle) >= SAMPLES_PER_DAY:
            cycle = cycle[:SAMPLES_PER_DAY]
        t0 = rng.integers(0, SAMPLES_PER_DAY - len(cycle))
        day[t0 : t0 + len(cycle)] = np.maximum(day[t0 : t0 + len(cycle)], cycle)


def _dishwasher_day(rng):
    day = np.zeros(SAMPLES_PER_DAY)
    _place_cycles(rng, day, _dishwasher_cycle, max_cycles=2)
    return day


def _washing_machine_day(rng):
    day = np.zeros(SAMPLES_PER_DAY)
    _place_cycles(rng, day, _washer_cycle, max_cycles=2)
    return day


def _microwave_day(rng):
    day = np.zeros(SAMPLES_PER_DAY)
    for _ in range(rng.poisson(4)):  # quick reheats
        t = rng.integers(0, SAMPLES_PER_DAY - 400)
        for _ in range(1 + rng.poisson(1)):
            burst = _steady(rng, rng.integers(8, 35), 1100, 1450, jitter=10.0)
            end = min(t + len(burst), SAMPLES_PER_DAY)
            day[t:end] = burst[: end - t]
            t = end + rng.integers(5, 30)
    for _ in range(1 + rng.integers(0, 2)):  # long defrost/cook sessions
        t = rng.integers(0, SAMPLES_PER_DAY - 1200)
        remaining = rng.integers(100, 160)
        while remaining > 0:
            burst = _steady(rng, min(rng.integers(25, 50), remaining), 1100, 1450, jitter=10.0)
            end = min(t + len(burst), SAMPLES_PER_DAY)
            day[t:end] = burst[: end - t]
            remaining -= len(burst)
            t = end + rng.integers(3, 12)
    return day


def _fridge_day(rng):
    # Combined fridge-freezer: ~200 W compressor cycles with inrush, plus a
    # few defrost-heater runs a day.
    day = np.zeros(SAMPLES_PER_DAY)
    t = int(rng.integers(0, 120))
    while t < SAMPLES_PER_DAY:
        on = int(rng.integers(120, 180))
        seg = _steady(rng, on, 190, 230, jitter=4.0)
        seg[: min(2, on)] = rng.uniform(650, 850)  # compressor inrush
        end = min(t + on, SAMPLES_PER_DAY)
        day[t:end] = seg[: end - t]
        t = end + int(rng.integers(80, 140))
    for _ in range(rng.integers(2, 4)):  # defrost heater
        t0 = int(rng.integers(0, SAMPLES_PER_DAY - 200))
        length = int(rng.integers(80, 160))
        day[t0 : t0 + length] = _steady(rng, length, 420, 560, jitter=5.0)
    return day


_DAY_BUILDERS = {
    "dishwasher": _dishwasher_day,
    "washing_machine": _washing_machine_day,
    "microwave": _microwave_day,
    "fridge": _fridge_day,
}


def generate_watts(name: str, days: int, rng: np.random.Generator) -> np.ndarray:
    """Integer watt trace for one appliance over ``days`` contiguous days."""
    builder = _DAY_BUILDERS[name]
    trace = np.concatenate([builder(rng) for _ in range(days)])
    return np.rint(trace).astype(np.int64)


def write_channel_files(
    out_dir,
    days: int = DEFAULT_DAYS,
    seed: int = 0,
    start_timestamp: int = START_TIMESTAMP,
) -> list[Path]:
    """Write channel_1.dat .. channel_4.dat in appliance order; returns paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, name in enumerate(APPLIANCE_NAMES):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), i]))
        watts = generate_watts(name, days, rng)
        timestamps = start_timestamp + 6 * np.arange(len(watts), dtype=np.int64)
        path = out_dir / f"channel_{i + 1}.dat"
        with open(path, "w", encoding="ascii") as fh:
            fh.writelines(f"{t} {w}\n" for t, w in zip(timestamps.tolist(), watts.tolist()))
        paths.append(path)
    return paths
