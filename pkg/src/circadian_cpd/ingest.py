"""Location traces to daily mobility observations.

Each local calendar day becomes one observation with 24 hourly entries:

* real part: ``log(1 + metres travelled)`` in the hour;
* binary part: whether any fix in the hour lies within ``home_radius_m``
  of the estimated home.

An hour's distance is missing when it has no fixes or when any stretch of
the hour without a fix is longer than ``gap_limit_minutes``.  Gaps are
measured with the neighbouring fixes outside the hour, clipped to the hour,
so removing fixes can only turn an observed hour into a missing one.  A
pair of fixes that straddles an hour boundary splits its distance between
the hours in proportion to time.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from datetime import date, datetime, timedelta
from pathlib import Path
from zoneinfo import ZoneInfo

import numpy as np

from .errors import EmptyDataset, NoNocturnalData
from .mixture import ObservationBatch

logger = logging.getLogger(__name__)

EARTH_RADIUS_M = 6_371_000.0
HOURS = 24
GRID_M = 50.0


@dataclass(frozen=True)
class LocationTrace:
    timestamp: float
    latitude: float
    longitude: float

    def __post_init__(self):
        if not -90.0 <= self.latitude <= 90.0:
            raise ValueError(f"latitude {self.latitude} outside [-90, 90]")
        if not -180.0 <= self.longitude <= 180.0:
            raise ValueError(f"longitude {self.longitude} outside [-180, 180]")


@dataclass(frozen=True)
class HomeEstimate:
    latitude: float
    longitude: float
    support_count: int


@dataclass
class IngestConfig:
    timezone: str = "UTC"
    gap_limit_minutes: float = 30.0
    home_radius_m: float = 50.0
    night_start_hour: int = 0
    night_end_hour: int = 6

    def __post_init__(self):
        ZoneInfo(self.timezone)  # raises on unknown names
        if self.gap_limit_minutes <= 0 or self.home_radius_m <= 0:
            raise ValueError("gap limit and home radius must be positive")
        if not 0 <= self.night_start_hour < self.night_end_hour <= HOURS:
            raise ValueError("night window must satisfy 0 <= start < end <= 24")

    @property
    def tz(self) -> ZoneInfo:
        return ZoneInfo(self.timezone)

    @property
    def gap_limit_s(self) -> float:
        return 60.0 * self.gap_limit_minutes

    @classmethod
    def from_json(cls, path) -> "IngestConfig":
        raw = json.loads(Path(path).read_text())
        known = {k: raw[k] for k in asdict(cls()) if k in raw}
        return cls(**known)


@dataclass
class LoadSummary:
    n_lines: int = 0
    n_loaded: int = 0
    n_skipped: int = 0
    skipped_lines: list = field(default_factory=list)


@dataclass
class DailyDataset:
    dates: list
    batch: ObservationBatch
    home: HomeEstimate


# -- loading ----------------------------------------------------------------------


def parse_timestamp(text: str, tz: ZoneInfo) -> float:
    """Epoch seconds, or ISO-8601 (naive values are read in ``tz``)."""
    text = text.strip()
    try:
        return float(text)
    except ValueError:
        pass
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    stamp = datetime.fromisoformat(text)
    if stamp.tzinfo is None:
        stamp = stamp.replace(tzinfo=tz)
    return stamp.timestamp()


def parse_traces(lines, tz: ZoneInfo | str = "UTC"):
    """Parse ``timestamp,lat,lon`` lines; returns ``(sorted traces, LoadSummary)``."""
    tz = ZoneInfo(tz) if isinstance(tz, str) else tz
    summary = LoadSummary()
    traces = []
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        summary.n_lines += 1
        parts = line.split(",")
        try:
            if len(parts) != 3:
                raise ValueError("expected 3 fields")
            trace = LocationTrace(parse_timestamp(parts[0], tz), float(parts[1]), float(parts[2]))
            if not all(map(math.isfinite, (trace.timestamp, trace.latitude, trace.longitude))):
                raise ValueError("non-finite value")
        except ValueError:
            summary.n_skipped += 1
            summary.skipped_lines.append(lineno)
            continue
        traces.append(trace)
    summary.n_loaded = len(traces)
    if summary.n_skipped:
        logger.warning("skipped %d malformed trace lines", summary.n_skipped)
    traces.sort(key=lambda tr: tr.timestamp)
    return traces, summary


def load_traces(path, tz: ZoneInfo | str = "UTC"):
    with open(path, encoding="utf-8") as fh:
        return parse_traces(fh, tz)


def _arrays(traces):
    if not traces:
        return np.zeros(0), np.zeros(0), np.zeros(0)
    arr = np.array([(t.timestamp, t.latitude, t.longitude) for t in traces], dtype=float)
    order = np.argsort(arr[:, 0], kind="stable")
    arr = arr[order]
    return arr[:, 0], arr[:, 1], arr[:, 2]


# -- geometry ---------------------------------------------------------------------


def haversine(lat1, lon1, lat2, lon2):
    """Great-circle distance in metres."""
    p1, p2 = np.radians(lat1), np.radians(lat2)
    dphi = p2 - p1
    dlam = np.radians(np.asarray(lon2) - np.asarray(lon1))
    h = np.sin(dphi / 2.0) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dlam / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_M * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


def _local_xy(lat, lon, lat0, lon0):
    """Equirectangular metres around ``(lat0, lon0)``; adequate at grid scale."""
    x = np.radians(np.asarray(lon) - lon0) * EARTH_RADIUS_M * math.cos(math.radians(lat0))
    y = np.radians(np.asarray(lat) - lat0) * EARTH_RADIUS_M
    return x, y


# -- hourly metrics ---------------------------------------------------------------


def hour_edges(day: date, tz: ZoneInfo) -> np.ndarray:
    """Epoch seconds of the 25 local hour boundaries of ``day``."""
    start = datetime(day.year, day.month, day.day, tzinfo=tz)
    return np.array([(start + timedelta(hours=h)).timestamp() for h in range(HOURS + 1)])


def _hourly_distance(times, lats, lons, edges, gap_limit_s):
    n_hours = edges.size - 1
    dist = np.zeros(n_hours)
    missing = np.ones(n_hours, dtype=bool)
    if times.size == 0:
        return dist, missing
    seg = haversine(lats[:-1], lons[:-1], lats[1:], lons[1:])
    t0, t1 = times[:-1], times[1:]
    dt = t1 - t0
    for h in range(n_hours):
        a, b = edges[h], edges[h + 1]
        inside = np.flatnonzero((times >= a) & (times < b))
        if inside.size == 0 or b <= a:
            continue
        before = times[inside[0] - 1] if inside[0] > 0 else -np.inf
        after = times[inside[-1] + 1] if inside[-1] + 1 < times.size else np.inf
        stamps = np.concatenate([[before], times[inside], [after]])
        clipped = np.minimum(stamps[1:], b) - np.maximum(stamps[:-1], a)
        if np.any(clipped > gap_limit_s):
            continue
        overlap = np.clip(np.minimum(t1, b) - np.maximum(t0, a), 0.0, None)
        share = np.where(dt > 0, overlap / np.where(dt > 0, dt, 1.0), ((t0 >= a) & (t0 < b)).astype(float))
        dist[h] = float(np.sum(seg * share))
        missing[h] = False
    return dist, missing


def _day_of(timestamp: float, tz: ZoneInfo) -> date:
    return datetime.fromtimestamp(timestamp, tz).date()


def hourly_log_distance(traces, gap_limit_minutes: float = 30.0, day: date | None = None,
                        tz: ZoneInfo | str = "UTC", context=None):
    """``(values[24], missing[24])`` for one local day.

    ``context`` may hold fixes from neighbouring days so pairs straddling
    midnight and gaps reaching into the day are accounted for.
    """
    tz = ZoneInfo(tz) if isinstance(tz, str) else tz
    traces = list(traces)
    if not traces:
        return np.zeros(HOURS), np.ones(HOURS, dtype=bool)
    day = day or _day_of(min(tr.timestamp for tr in traces), tz)
    times, lats, lons = _arrays(traces + list(context or []))
    dist, missing = _hourly_distance(times, lats, lons, hour_edges(day, tz), 60.0 * gap_limit_minutes)
    return np.where(missing, 0.0, np.log1p(dist)), missing


def at_home_vector(traces, home: HomeEstimate, radius_m: float = 50.0, day: date | None = None,
                   tz: ZoneInfo | str = "UTC"):
    """``(bits[24], missing[24])``: 1 when some fix of the hour is within ``radius_m`` of home."""
    tz = ZoneInfo(tz) if isinstance(tz, str) else tz
    times, lats, lons = _arrays(list(traces))
    bits = np.zeros(HOURS)
    missing = np.ones(HOURS, dtype=bool)
    if times.size == 0:
        return bits, missing
    edges = hour_edges(day or _day_of(times[0], tz), tz)
    near = haversine(lats, lons, home.latitude, home.longitude) <= radius_m * (1.0 + 1e-9)
    hour = np.searchsorted(edges, times, side="right") - 1
    for h in range(HOURS):
        sel = hour == h
        if sel.any():
            missing[h] = False
            bits[h] = float(near[sel].any())
    return bits, missing


def estimate_home(traces, night_window=(0, 6), tz: ZoneInfo | str = "UTC", grid_m: float = GRID_M) -> HomeEstimate:
    """Densest 50 m cell of the nocturnal fixes, refined to the mean of fixes near it."""
    tz = ZoneInfo(tz) if isinstance(tz, str) else tz
    times, lats, lons = _arrays(list(traces))
    hours = np.array([datetime.fromtimestamp(t, tz).hour for t in times], dtype=int)
    night = (hours >= night_window[0]) & (hours < night_window[1])
    if not night.any():
        raise NoNocturnalData(f"no fixes between {night_window[0]:02d}:00 and {night_window[1]:02d}:00")
    lat, lon = lats[night], lons[night]
    lat0, lon0 = float(np.median(lat)), float(np.median(lon))
    x, y = _local_xy(lat, lon, lat0, lon0)
    cells = np.stack([np.floor(x / grid_m), np.floor(y / grid_m)], axis=1).astype(np.int64)
    uniq, counts = np.unique(cells, axis=0, return_counts=True)
    lookup = {tuple(c): n for c, n in zip(uniq.tolist(), counts)}
    scores = [sum(lookup.get((cx + i, cy + j), 0) for i in (-1, 0, 1) for j in (-1, 0, 1)) for cx, cy in uniq.tolist()]
    best = uniq[int(np.argmax(scores))]
    in_block = np.all(np.abs(cells - best) <= 1, axis=1)
    cx, cy = x[in_block].mean(), y[in_block].mean()
    close = np.hypot(x - cx, y - cy) <= grid_m
    if close.any():
        cx, cy = x[close].mean(), y[close].mean()
    home_lat = lat0 + math.degrees(cy / EARTH_RADIUS_M)
    home_lon = lon0 + math.degrees(cx / (EARTH_RADIUS_M * math.cos(math.radians(lat0))))
    return HomeEstimate(home_lat, home_lon, int(max(close.sum(), 1)))


def build_dataset(traces, config: IngestConfig | None = None, home: HomeEstimate | None = None) -> DailyDataset:
    """One observation per local calendar day from the first to the last fix."""
    cfg = config or IngestConfig()
    traces = sorted(traces, key=lambda tr: tr.timestamp)
    if not traces:
        raise EmptyDataset("no location fixes to aggregate")
    tz = cfg.tz
    home = home or estimate_home(traces, (cfg.night_start_hour, cfg.night_end_hour), tz)
    times, lats, lons = _arrays(traces)
    first, last = _day_of(times[0], tz), _day_of(times[-1], tz)
    n_days = (last - first).days + 1
    real = np.zeros((n_days, HOURS))
    real_missing = np.ones((n_days, HOURS), dtype=bool)
    bins = np.zeros((n_days, HOURS))
    bin_missing = np.ones((n_days, HOURS), dtype=bool)
    near = haversine(lats, lons, home.latitude, home.longitude) <= cfg.home_radius_m * (1.0 + 1e-9)
    dates = []
    for i in range(n_days):
        day = first + timedelta(days=i)
        dates.append(day)
        edges = hour_edges(day, tz)
        lo = max(int(np.searchsorted(times, edges[0], side="left")) - 1, 0)
        hi = min(int(np.searchsorted(times, edges[-1], side="left")) + 1, times.size)
        dist, miss = _hourly_distance(times[lo:hi], lats[lo:hi], lons[lo:hi], edges, cfg.gap_limit_s)
        real[i] = np.where(miss, 0.0, np.log1p(dist))
        real_missing[i] = miss
        hour = np.searchsorted(edges, times[lo:hi], side="right") - 1
        for h in range(HOURS):
            sel = hour == h
            if sel.any():
                bin_missing[i, h] = False
                bins[i, h] = float(near[lo:hi][sel].any())
    return DailyDataset(dates, ObservationBatch(real, real_missing, bins, bin_missing), home)
