"""Ambient temperature history ingestion and the global feature vector.

The network's non-image input is the previous 72 hours of ambient
temperature at the capture site. This module reads that history out of an
hourly CSV record (from a file or URL), repairs single missing hours,
refuses larger gaps, and normalizes the window into [-1, 1] using statistics
frozen on the training split.
"""

from __future__ import annotations

import math
import urllib.request
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone

import numpy as np

from .errors import DataError, MissingHistoryError, require

HISTORY_HOURS = 72
TEMP_MIN_K = 180.0
TEMP_MAX_K = 340.0


def parse_hour(text: str) -> datetime:
    """Parse an ISO-8601 timestamp that must land exactly on a UTC hour."""
    raw = text.strip()
    try:
        stamp = datetime.fromisoformat(raw.replace("Z", "+00:00"))
    except ValueError as exc:
        raise DataError(f"bad timestamp {text!r}: {exc}") from exc
    if stamp.tzinfo is None:
        stamp = stamp.replace(tzinfo=timezone.utc)
    stamp = stamp.astimezone(timezone.utc)
    if stamp.minute or stamp.second or stamp.microsecond:
        raise DataError(f"timestamp {text!r} is not on an exact hour")
    return stamp


def format_hour(stamp: datetime) -> str:
    return stamp.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:00:00Z")


@dataclass(frozen=True)
class TemperatureHistory:
    """72 hourly Kelvin values, oldest first, ending just before `end`."""

    values: np.ndarray
    end: datetime  # the pair's capture hour; last sample is one hour earlier

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        require(v.shape == (HISTORY_HOURS,), f"history must hold {HISTORY_HOURS} values")
        require(bool(np.all(np.isfinite(v))), "history values must be finite")
        require(bool(np.all((v >= TEMP_MIN_K) & (v <= TEMP_MAX_K))),
                f"temperatures must lie in [{TEMP_MIN_K}, {TEMP_MAX_K}] K")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)


def fetch_weather_text(source: str) -> str:
    """Fetch CSV text from a URL (http/https/file) or a filesystem path."""
    if "://" in source:
        try:
            with urllib.request.urlopen(source) as resp:
                return resp.read().decode("utf-8")
        except Exception as exc:
            raise DataError(f"cannot fetch weather record {source}: {exc}") from exc
    try:
        with open(source, "r", encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise DataError(f"cannot read weather record {source}: {exc}") from exc


def parse_weather_csv(text: str) -> dict:
    """Parse `iso8601_hour,temp_kelvin` lines into {datetime: kelvin}.

    A header line is allowed; blank lines are skipped; malformed lines raise
    with their 1-based line number.
    """
    records = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        if lineno == 1 and line.lower().replace(" ", "") in (
                "hour,temp_kelvin", "iso8601_hour,temp_kelvin", "timestamp,temp_kelvin"):
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise DataError(f"weather line {lineno}: expected 2 fields, got {len(parts)}")
        try:
            stamp = parse_hour(parts[0])
            temp = float(parts[1])
        except (DataError, ValueError) as exc:
            raise DataError(f"weather line {lineno}: {exc}") from exc
        if not math.isfinite(temp):
            raise DataError(f"weather line {lineno}: non-finite temperature")
        records[stamp] = temp
    return records


def load_history(source, timestamp) -> TemperatureHistory:
    """Extract the 72-hour window ending at (and excluding) `timestamp`.

    `source` may be a path/URL string or an already-parsed {datetime: kelvin}
    mapping. Single missing hours are filled by averaging their two in-window
    neighbors; two or more consecutive missing hours raise
    MissingHistoryError, as does a missing hour at either window edge.
    """
    if isinstance(source, str):
        records = parse_weather_csv(fetch_weather_text(source))
    else:
        records = dict(source)
    end = parse_hour(timestamp) if isinstance(timestamp, str) else timestamp
    stamps = [end - timedelta(hours=HISTORY_HOURS - i) for i in range(HISTORY_HOURS)]
    values = np.full(HISTORY_HOURS, np.nan)
    for i, stamp in enumerate(stamps):
        if stamp in records:
            values[i] = records[stamp]
    missing = np.where(np.isnan(values))[0]
    if missing.size:
        runs = np.split(missing, np.where(np.diff(missing) > 1)[0] + 1)
        for run in runs:
            if len(run) >= 2:
                raise MissingHistoryError(
                    f"{len(run)} consecutive hours missing starting {format_hour(stamps[run[0]])}")
            i = int(run[0])
            if i == 0 or i == HISTORY_HOURS - 1:
                raise MissingHistoryError(
                    f"missing hour {format_hour(stamps[i])} at the window edge")
            values[i] = 0.5 * (values[i - 1] + values[i + 1])
    return TemperatureHistory(values=values, end=end)


@dataclass(frozen=True)
class NormalizationStats:
    """Pooled scalar mean/std of all training-split history values."""

    mean: float
    std: float

    @staticmethod
    def from_histories(histories) -> "NormalizationStats":
        pool = np.concatenate([np.asarray(h.values if isinstance(h, TemperatureHistory) else h,
                                          dtype=np.float64).ravel()
                               for h in histories])
        require(pool.size > 0, "need at least one history to compute stats")
        return NormalizationStats(mean=float(pool.mean()), std=float(pool.std()))

    def to_dict(self) -> dict:
        return {"mean": self.mean, "std": self.std}

    @staticmethod
    def from_dict(d: dict) -> "NormalizationStats":
        return NormalizationStats(mean=float(d["mean"]), std=float(d["std"]))


@dataclass(frozen=True)
class GlobalFeatureVector:
    """Normalized 72-vector fed to the network bottleneck; values in [-1, 1]."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        require(v.shape == (HISTORY_HOURS,), "global vector must have 72 entries")
        require(bool(np.all(np.abs(v) <= 1.0 + 1e-12)), "global vector must lie in [-1, 1]")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)


def build_global_vector(history: TemperatureHistory,
                        stats: NormalizationStats) -> GlobalFeatureVector:
    """clamp((T - mean) / (3 * std), -1, 1); all zeros when std vanishes."""
    if stats.std <= 1e-12:
        return GlobalFeatureVector(np.zeros(HISTORY_HOURS))
    scaled = (history.values - stats.mean) / (3.0 * stats.std)
    return GlobalFeatureVector(np.clip(scaled, -1.0, 1.0))


def synthesize_weather(start: datetime, hours: int, seed: int) -> dict:
    """Deterministic synthetic hourly record: season + day cycle + slow fronts.

    Returns {datetime: kelvin}. The front component is a slow AR(1) walk so
    different 72-hour windows across the record see genuinely different
    trajectories (warming runs, cold snaps, stable spells).
    """
    require(hours >= 1, "need a positive number of hours")
    rng = np.random.default_rng(seed)
    start = start.astimezone(timezone.utc)
    t = np.arange(hours, dtype=np.float64)
    hour_of_day = (start.hour + t) % 24.0
    day_of_year = ((start.timetuple().tm_yday - 1) * 24.0 + start.hour + t) / 24.0
    seasonal = 12.0 * np.sin(2.0 * math.pi * (day_of_year - 110.0) / 365.25)
    diurnal = 10.0 * np.sin(2.0 * math.pi * (hour_of_day - 8.0) / 24.0)
    front = np.empty(hours)
    rho = 0.995
    front_std = 9.0
    state = rng.normal(0.0, front_std)
    drive = math.sqrt(1.0 - rho * rho) * front_std
    for i in range(hours):
        state = rho * state + drive * rng.normal()
        front[i] = state
    noise = rng.normal(0.0, 0.4, hours)
    temps = np.clip(283.0 + seasonal + diurnal + front + noise,
                    TEMP_MIN_K + 5.0, TEMP_MAX_K - 5.0)
    return {start + timedelta(hours=int(i)): float(temps[i]) for i in range(hours)}


def weather_to_csv(records: dict) -> str:
    lines = ["iso8601_hour,temp_kelvin"]
    for stamp in sorted(records):
        lines.append(f"{format_hour(stamp)},{records[stamp]:.4f}")
    return "\n".join(lines) + "\n"
