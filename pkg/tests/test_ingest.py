import math
from datetime import date, datetime, timedelta, timezone
from zoneinfo import ZoneInfo

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from circadian_cpd.errors import EmptyDataset, NoNocturnalData
from circadian_cpd.ingest import (
    EARTH_RADIUS_M,
    HomeEstimate,
    IngestConfig,
    LocationTrace,
    at_home_vector,
    build_dataset,
    estimate_home,
    haversine,
    hour_edges,
    hourly_log_distance,
    parse_traces,
)

HOME = (40.4168, -3.7038)
UTC = ZoneInfo("UTC")


def north_of(lat, lon, metres):
    return lat + math.degrees(metres / EARTH_RADIUS_M), lon


def central_angle_distance(lat1, lon1, lat2, lon2):
    """Great-circle distance via the atan2 form of the spherical Vincenty formula."""
    p1, p2, dl = map(math.radians, (lat1, lat2, lon2 - lon1))
    num = math.hypot(math.cos(p2) * math.sin(dl), math.cos(p1) * math.sin(p2) - math.sin(p1) * math.cos(p2) * math.cos(dl))
    den = math.sin(p1) * math.sin(p2) + math.cos(p1) * math.cos(p2) * math.cos(dl)
    return EARTH_RADIUS_M * math.atan2(num, den)


def stamp(day, hour, minute=0.0, tz=UTC):
    return (datetime(day.year, day.month, day.day, tzinfo=tz) + timedelta(hours=hour, minutes=minute)).timestamp()


def fixes_every(day, hour, minutes, point, tz=UTC):
    return [LocationTrace(stamp(day, hour, m, tz), *point) for m in minutes]


# -- geometry ------------------------------------------------------------------------


def test_haversine_equatorial_step():
    d = haversine(0.0, 0.0, 0.01, 0.0)
    assert d == pytest.approx(EARTH_RADIUS_M * math.radians(0.01), rel=1e-12)
    assert d == pytest.approx(1111.95, rel=5e-3)


@settings(max_examples=200, deadline=None)
@given(lat1=st.floats(-89, 89), lon1=st.floats(-179, 179), dlat=st.floats(-0.5, 0.5), dlon=st.floats(-0.5, 0.5))
def test_haversine_matches_independent_formula(lat1, lon1, dlat, dlon):
    lat2, lon2 = max(-90, min(90, lat1 + dlat)), max(-180, min(180, lon1 + dlon))
    ref = central_angle_distance(lat1, lon1, lat2, lon2)
    assert float(haversine(lat1, lon1, lat2, lon2)) == pytest.approx(ref, rel=5e-3, abs=1e-6)


def test_trace_validation():
    with pytest.raises(ValueError):
        LocationTrace(0.0, 91.0, 0.0)
    with pytest.raises(ValueError):
        LocationTrace(0.0, 0.0, -181.0)


# -- hourly distance -----------------------------------------------------------------


def test_stationary_hour_is_zero():
    day = date(2024, 3, 4)
    traces = [tr for h in range(24) for tr in fixes_every(day, h, range(0, 60, 3), HOME)]
    values, missing = hourly_log_distance(traces, day=day)
    assert not missing.any()
    assert np.array_equal(values, np.zeros(24))


def test_empty_hour_is_missing():
    day = date(2024, 3, 4)
    traces = [tr for h in range(24) if h != 2 for tr in fixes_every(day, h, range(0, 60, 3), HOME)]
    _, missing = hourly_log_distance(traces, day=day)
    assert np.flatnonzero(missing).tolist() == [2]


def test_two_fixes_distance():
    day = date(2024, 3, 4)
    far = (HOME[0] + 0.01, HOME[1])
    traces = [LocationTrace(stamp(day, 5, m), *HOME) for m in range(0, 30, 3)]
    traces += [LocationTrace(stamp(day, 5, m), *far) for m in range(30, 60, 3)]
    values, missing = hourly_log_distance(traces, day=day)
    assert not missing[5]
    assert math.expm1(values[5]) == pytest.approx(central_angle_distance(*HOME, *far), rel=5e-3)


@pytest.mark.parametrize("gap, expect_missing", [(29, False), (31, True)])
def test_gap_rule_inside_hour(gap, expect_missing):
    day = date(2024, 3, 4)
    minutes = [0, 3, 6, 6 + gap] + list(range(6 + gap + 3, 60, 3))
    traces = fixes_every(day, 9, minutes, HOME)
    _, missing = hourly_log_distance(traces, day=day)
    assert missing[9] == expect_missing


def test_gap_measured_against_neighbouring_hours():
    day = date(2024, 3, 4)
    # last fix of hour 8 at 08:20, first of hour 9 at 09:05: only 5 min of the gap lies in hour 9
    traces = fixes_every(day, 8, range(0, 21, 3), HOME) + fixes_every(day, 9, range(5, 60, 3), HOME)
    _, missing = hourly_log_distance(traces, day=day)
    assert not missing[9]
    assert missing[8]  # 40 minutes without a fix at the end of hour 8


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), keep=st.floats(0.1, 0.95))
def test_missingness_is_monotone(seed, keep):
    rng = np.random.default_rng(seed)
    day = date(2024, 3, 4)
    t0 = stamp(day, 0)
    times = np.sort(rng.uniform(t0, t0 + 86400, 600))
    traces = [LocationTrace(t, HOME[0] + rng.normal(0, 1e-3), HOME[1] + rng.normal(0, 1e-3)) for t in times]
    subset = [tr for tr in traces if rng.random() < keep]
    _, miss_full = hourly_log_distance(traces, day=day)
    _, miss_sub = hourly_log_distance(subset, day=day)
    assert np.all(miss_sub | ~miss_full)
    values, missing = hourly_log_distance(subset, day=day)
    assert np.all(values[~missing] >= 0) and np.all(np.isfinite(values))


def test_empty_trace_list_is_all_missing():
    values, missing = hourly_log_distance([])
    assert missing.all() and values.shape == (24,)


# -- at-home indicator ---------------------------------------------------------------


def test_all_fixes_at_home():
    day = date(2024, 3, 4)
    traces = [tr for h in range(24) for tr in fixes_every(day, h, [10, 40], HOME)]
    bits, missing = at_home_vector(traces, HomeEstimate(*HOME, 1), day=day)
    assert not missing.any() and np.array_equal(bits, np.ones(24))


def test_home_radius_boundary():
    day = date(2024, 3, 4)
    at_50 = north_of(*HOME, 50.0)
    at_51 = north_of(*HOME, 51.0)
    traces = fixes_every(day, 0, [5], at_50) + fixes_every(day, 1, [5], at_51)
    bits, missing = at_home_vector(traces, HomeEstimate(*HOME, 1), day=day)
    assert bits[0] == 1.0 and bits[1] == 0.0
    assert missing.tolist() == [False, False] + [True] * 22


# -- home estimate -------------------------------------------------------------------


def night_fixes(rng, point, n, day0=date(2024, 1, 1), spread_m=5.0):
    out = []
    for i in range(n):
        day = day0 + timedelta(days=int(rng.integers(0, 30)))
        lat, lon = north_of(*point, rng.normal(0, spread_m))
        lon += math.degrees(rng.normal(0, spread_m) / (EARTH_RADIUS_M * math.cos(math.radians(lat))))
        out.append(LocationTrace(stamp(day, int(rng.integers(0, 6)), float(rng.uniform(0, 59))), lat, lon))
    return out


def test_home_identical_fixes():
    traces = [LocationTrace(stamp(date(2024, 1, d), 2), *HOME) for d in range(1, 8)]
    home = estimate_home(traces)
    assert haversine(home.latitude, home.longitude, *HOME) < 1e-6
    assert home.support_count == 7


def test_home_majority_point():
    rng = np.random.default_rng(0)
    b = north_of(*HOME, 1000.0)
    traces = night_fixes(rng, HOME, 90, spread_m=0.0) + night_fixes(rng, b, 10, spread_m=0.0)
    home = estimate_home(traces)
    assert haversine(home.latitude, home.longitude, *HOME) < 1.0


@pytest.mark.parametrize("seed", range(20))
def test_home_recovered_within_radius(seed):
    rng = np.random.default_rng(100 + seed)
    planted = (rng.uniform(-60, 60), rng.uniform(-170, 170))
    traces = night_fixes(rng, planted, int(rng.integers(40, 120)), spread_m=rng.uniform(2, 15))
    for _ in range(int(rng.integers(1, 4))):
        other = north_of(*planted, rng.uniform(200, 5000))
        traces += night_fixes(rng, other, int(rng.integers(5, 25)))
    # daytime fixes elsewhere must not matter
    traces += [LocationTrace(stamp(date(2024, 1, 3), 13, m), *north_of(*planted, 800.0)) for m in range(60)]
    home = estimate_home(traces)
    assert haversine(home.latitude, home.longitude, *planted) < 50.0


def test_no_nocturnal_fixes():
    with pytest.raises(NoNocturnalData):
        estimate_home([LocationTrace(stamp(date(2024, 1, 1), 12), *HOME)])


# -- datasets ------------------------------------------------------------------------


def plant_day(rng, day, tz, dist, bins, missing_hours=()):
    """Fixes reproducing planted hourly distances and at-home bits.

    Every hour starts and ends 100 m north of home, so hour boundaries add
    no distance.  At-home hours dip to the home point; away hours only go
    further north.  Turning points are fixes, so path length equals the
    planted distance.
    """
    traces = []
    for h in range(24):
        if h in missing_hours:
            continue
        d = dist[h]
        if bins[h]:
            way, idx = [100.0, 0.0, d / 2.0, 100.0], [0, 3, 11, 19]
        else:
            way, idx = [100.0, 100.0 + d / 2.0, 100.0], [0, 9, 19]
        y = np.interp(np.arange(20), idx, way)
        for i in range(20):
            traces.append(LocationTrace(stamp(day, h, 3 * i, tz), *north_of(*HOME, y[i])))
    return traces


@pytest.mark.parametrize("tz_name", ["UTC", "Europe/Madrid", "America/New_York"])
def test_generative_round_trip(tz_name):
    tz = ZoneInfo(tz_name)
    rng = np.random.default_rng(1)
    days = [date(2024, 5, 6) + timedelta(days=i) for i in range(3)]
    planted = []
    traces = []
    for day in days:
        dist = rng.uniform(200.0, 4000.0, 24)
        bins = rng.random(24) < 0.5
        missing_hours = set(rng.choice(24, 2, replace=False).tolist())
        planted.append((dist, bins, missing_hours))
        traces += plant_day(rng, day, tz, dist, bins, missing_hours)
    ds = build_dataset(traces, IngestConfig(timezone=tz_name), home=HomeEstimate(*HOME, 1))
    assert ds.dates == days
    for i, (dist, bins, missing_hours) in enumerate(planted):
        miss = np.zeros(24, bool)
        miss[list(missing_hours)] = True
        assert np.array_equal(ds.batch.bin_missing[i], miss)
        assert np.array_equal(ds.batch.real_missing[i], miss)
        assert np.array_equal(ds.batch.bins[i][~miss], bins[~miss].astype(float))
        got = np.expm1(ds.batch.real[i][~miss])
        assert np.allclose(got, dist[~miss], rtol=1e-2)


def test_midnight_straddle_splits_distance():
    day1, day2 = date(2024, 3, 4), date(2024, 3, 5)
    far = north_of(*HOME, 1000.0)
    traces = fixes_every(day1, 23, list(range(0, 58, 3)) + [59], HOME)
    traces += fixes_every(day2, 0, [1] + list(range(3, 60, 3)), far)
    ds = build_dataset(traces, home=HomeEstimate(*HOME, 1))
    assert len(ds.batch) == 2 and ds.batch.dim == 24
    jump = haversine(*HOME, *far)
    assert math.expm1(ds.batch.real[0, 23]) == pytest.approx(jump / 2, rel=1e-9)
    assert math.expm1(ds.batch.real[1, 0]) == pytest.approx(jump / 2, rel=1e-9)
    assert ds.batch.real_missing[0, :23].all() and ds.batch.real_missing[1, 1:].all()


def test_fully_missing_day_is_flagged():
    traces = fixes_every(date(2024, 3, 4), 3, range(0, 60, 3), HOME)
    traces += fixes_every(date(2024, 3, 6), 3, range(0, 60, 3), HOME)
    ds = build_dataset(traces, home=HomeEstimate(*HOME, 1))
    assert ds.batch.fully_missing.tolist() == [False, True, False]


def test_dataset_is_deterministic():
    rng = np.random.default_rng(2)
    traces = plant_day(rng, date(2024, 5, 6), ZoneInfo("Asia/Tokyo"), rng.uniform(200, 900, 24), rng.random(24) < 0.5)
    cfg = IngestConfig(timezone="Asia/Tokyo")
    a = build_dataset(traces, cfg)
    b = build_dataset(list(reversed(traces)), cfg)
    assert np.array_equal(a.batch.real, b.batch.real)
    assert np.array_equal(a.batch.bins, b.batch.bins)
    assert np.array_equal(a.batch.real_missing, b.batch.real_missing)


def test_daylight_saving_day_has_empty_hour():
    tz = ZoneInfo("Europe/Madrid")
    day = date(2024, 3, 31)  # clocks jump from 02:00 to 03:00
    edges = hour_edges(day, tz)
    assert (edges[-1] - edges[0]) == 23 * 3600
    traces = [LocationTrace(t, *HOME) for t in np.arange(edges[0], edges[-1], 180.0)]
    ds = build_dataset(traces, IngestConfig(timezone="Europe/Madrid"), home=HomeEstimate(*HOME, 1))
    assert ds.batch.real_missing[0].sum() == 1


def test_empty_dataset():
    with pytest.raises(EmptyDataset):
        build_dataset([])


# -- loading -------------------------------------------------------------------------


def test_parse_traces_counts_malformed_lines():
    lines = [
        "# header comment",
        "1700000000,40.0,-3.0",
        "2023-11-14T22:13:30Z,40.1,-3.1",
        "not-a-time,40.0,-3.0",
        "1700000100,95.0,-3.0",
        "1700000200,40.0",
        "",
        "1699999000,40.2,-3.2",
    ]
    traces, summary = parse_traces(lines)
    assert (summary.n_lines, summary.n_loaded, summary.n_skipped) == (6, 3, 3)
    assert summary.skipped_lines == [4, 5, 6]
    assert [t.timestamp for t in traces] == sorted(t.timestamp for t in traces)
    assert traces[2].timestamp == datetime(2023, 11, 14, 22, 13, 30, tzinfo=timezone.utc).timestamp()


def test_naive_iso_read_in_configured_zone():
    (utc,), _ = parse_traces(["2024-01-01T00:00:00,0,0"], "UTC")
    (tokyo,), _ = parse_traces(["2024-01-01T00:00:00,0,0"], "Asia/Tokyo")
    assert utc.timestamp - tokyo.timestamp == 9 * 3600


def test_config_from_json(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text('{"timezone": "Europe/Madrid", "gap_limit_minutes": 20, "unrelated": 1}')
    cfg = IngestConfig.from_json(path)
    assert cfg.timezone == "Europe/Madrid" and cfg.gap_limit_s == 1200
    with pytest.raises(ValueError):
        IngestConfig(night_start_hour=7, night_end_hour=6)
