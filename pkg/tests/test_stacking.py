import json
from datetime import datetime, timedelta, timezone
from types import SimpleNamespace

import numpy as np
import pytest

from wildspread.geo import GridSpec, PerimeterPolygon, RasterGrid, rasterize_polygon, write_ascii_grid
from wildspread.geo.perimeter import perimeters_to_geojson
from wildspread.stacking import (
    DEFAULT_SCHEMA,
    DatedScene,
    FireEventArchive,
    LayerSchema,
    StackingError,
    WeatherReading,
    WeatherStation,
    archive_from_manifest,
    build_archive,
    build_stack,
    filter_24h,
    load_archive,
    nearest_station,
    save_archive,
    select_scene,
    weather_constant_layer,
    write_weather_csv,
)

T0 = datetime(2014, 9, 13, tzinfo=timezone.utc)
H = timedelta(hours=1)
D = timedelta(days=1)
SPEC = GridSpec(0.0, 120.0, 4, 4, 30.0, "EPSG:32610")


def scene_at(t, spec=SPEC, drop=(), seed=0):
    rng = np.random.default_rng(seed)
    layers = {}
    for name in ("red", "green", "blue", "infrared", "elevation"):
        layers[name] = RasterGrid(spec, rng.uniform(0, 1000, spec.shape))
    layers["land_cover"] = RasterGrid(spec, rng.integers(1, 6, spec.shape).astype(float))
    for name in drop:
        layers.pop(name)
    return DatedScene(t, layers)


def square(t, lo=0.0, hi=60.0):
    return PerimeterPolygon([[(lo, lo + 60), (hi, lo + 60), (hi, hi + 60), (lo, hi + 60), (lo, lo + 60)]], t)


def station(readings_at, sid="A", x=60.0, y=60.0, speed=3.0):
    return WeatherStation(sid, x, y, [WeatherReading(t, speed + k, 90.0 + k) for k, t in enumerate(readings_at)])


# --- select_scene -----------------------------------------------------------


def test_select_scene_most_recent_prior():
    t = T0
    scenes = [scene_at(t - 10 * D), scene_at(t - 3 * D)]
    assert select_scene(scenes, t).timestamp == t - 3 * D


def test_select_scene_stale_excluded():
    assert select_scene([scene_at(T0 - 20 * D)], T0) is None


def test_select_scene_never_future():
    scenes = [scene_at(T0 - 2 * D), scene_at(T0 + 1 * D)]
    assert select_scene(scenes, T0).timestamp == T0 - 2 * D
    assert select_scene([scene_at(T0 + H)], T0) is None


def test_select_scene_window_is_inclusive():
    assert select_scene([scene_at(T0 - 16 * D)], T0).timestamp == T0 - 16 * D
    assert select_scene([scene_at(T0 - 16 * D - timedelta(seconds=1))], T0) is None
    assert select_scene([scene_at(T0)], T0).timestamp == T0


# --- filter_24h -------------------------------------------------------------


def hours(*hs):
    return [SimpleNamespace(timestamp=T0 + h * H) for h in hs]


def kept_hours(items):
    return [int((i.timestamp - T0) / H) for i in items]


def test_filter_24h_greedy_trace():
    # 0 kept; 5 < 24; 26 >= 24 kept; 30 < 50; 49 < 50 dropped
    assert kept_hours(filter_24h(hours(0, 5, 26, 30, 49))) == [0, 26]


def test_filter_24h_exact_spacing():
    assert kept_hours(filter_24h(hours(0, 24, 48))) == [0, 24, 48]


def test_filter_24h_single():
    assert kept_hours(filter_24h(hours(7))) == [7]


# --- stations and weather ---------------------------------------------------


def test_nearest_station_rules():
    a = station([T0], "A", x=10, y=0)
    b = station([T0], "B", x=20, y=0)
    assert nearest_station([a], (0, 0)) is a
    assert nearest_station([b, a], (0, 0)) is a
    a2 = station([T0], "A", x=-10, y=0)
    b2 = station([T0], "B", x=10, y=0)
    assert nearest_station([b2, a2], (0, 0)).id == "A"
    with pytest.raises(StackingError):
        nearest_station([], (0, 0))


def test_weather_constant_layer():
    spec = GridSpec(0, 60, 2, 2)
    np.testing.assert_array_equal(weather_constant_layer(3.5, spec).values, [[3.5, 3.5], [3.5, 3.5]])
    assert weather_constant_layer(0, spec).values.sum() == 0
    with pytest.raises(StackingError):
        weather_constant_layer(float("nan"), spec)


def test_station_requires_increasing_times():
    with pytest.raises(StackingError):
        station([T0, T0])


# --- schema -----------------------------------------------------------------


def test_default_schema():
    assert DEFAULT_SCHEMA.channel_count == 8
    assert DEFAULT_SCHEMA.names[0] == "fire_mask"
    assert "wind_direction" not in DEFAULT_SCHEMA.names


@pytest.mark.parametrize(
    "layers",
    [
        (("a", "spectral"), ("b", "spectral")),
        (("m", "fire_mask"), ("m", "spectral")),
        (("m", "fire_mask"),),
        (("m", "fire_mask"), ("n", "fire_mask")),
        (("m", "fire_mask"), ("humidity", "weather_constant")),
    ],
)
def test_schema_invariants(layers):
    with pytest.raises(StackingError):
        LayerSchema(layers)


# --- build_stack --------------------------------------------------------------


def test_build_stack_complete_scene():
    t = T0
    per = square(t)
    st = station([t - 2 * H, t + H])
    stack = build_stack(scene_at(t - D), per, st, DEFAULT_SCHEMA, SPEC)
    assert stack.data.shape == (8, 4, 4)
    np.testing.assert_array_equal(stack.fire_mask, rasterize_polygon(per, SPEC).values)
    # the t-2h reading (speed 3) is used, never the t+1h one
    assert stack.station_weather["wind_speed"] == 3.0
    np.testing.assert_allclose(stack.channel("wind_speed").values, 3.0 / 30.0)
    for name in ("red", "elevation"):
        v = stack.channel(name).values
        assert v.min() == 0.0 and v.max() == 1.0
    lc = stack.channel("land_cover").values
    assert lc.max() == 1.0 and lc.min() > 0


def test_build_stack_missing_channel():
    with pytest.raises(StackingError, match="infrared"):
        build_stack(scene_at(T0 - D, drop=("infrared",)), square(T0), station([T0]), DEFAULT_SCHEMA, SPEC)


def test_build_stack_no_prior_reading():
    with pytest.raises(StackingError, match="no reading"):
        build_stack(scene_at(T0 - D), square(T0), station([T0 + H]), DEFAULT_SCHEMA, SPEC)


def test_build_stack_resamples_and_fills_nodata():
    # scene covers only the west half of the target grid
    half = GridSpec(0.0, 120.0, 2, 4, 30.0, "EPSG:32610")
    stack = build_stack(scene_at(T0 - D, spec=half), square(T0), station([T0]), DEFAULT_SCHEMA, SPEC)
    red = stack.channel("red").values
    assert np.all(red[:, 2:] == 0.0)
    assert red[:, :2].max() == 1.0


def test_build_stack_wind_direction_channels():
    schema = LayerSchema(
        (("fire_mask", "fire_mask"), ("wind_direction", "weather_constant"),
         ("wind_dir_sin", "weather_constant"), ("wind_dir_cos", "weather_constant"))
    )
    stack = build_stack(scene_at(T0 - D), square(T0), station([T0]), schema, SPEC)
    np.testing.assert_allclose(stack.channel("wind_direction").values, 90.0 / 360.0)
    np.testing.assert_allclose(stack.channel("wind_dir_sin").values, 1.0)
    np.testing.assert_allclose(stack.channel("wind_dir_cos").values, 0.0, atol=1e-15)


# --- build_archive ----------------------------------------------------------


def make_inputs(perimeter_hours, scene_days=(-1,)):
    perims = [square(T0 + h * H, hi=30.0 + 10 * k) for k, h in enumerate(perimeter_hours)]
    scenes = [scene_at(T0 + d * D, seed=i) for i, d in enumerate(scene_days)]
    st = station([T0 - D + k * H for k in range(24 * 5)])
    return perims, scenes, [st]


def test_build_archive_three_days():
    perims, scenes, sts = make_inputs([0, 26, 52])
    arc = build_archive(perims, scenes, sts, DEFAULT_SCHEMA, SPEC, fire_id="king")
    assert len(arc.stacks) == 3
    assert [s.timestamp for s in arc.stacks] == [T0, T0 + 26 * H, T0 + 52 * H]


def test_build_archive_drops_close_perimeters():
    perims, scenes, sts = make_inputs([0, 5, 26])
    arc = build_archive(perims, scenes, sts, DEFAULT_SCHEMA, SPEC)
    assert [s.timestamp for s in arc.stacks] == [T0, T0 + 26 * H]


def test_build_archive_too_few_stacks():
    # the second perimeter has no scene within 16 days before it
    perims = [square(T0), square(T0 + 30 * D)]
    scenes = [scene_at(T0 - D)]
    st = station([T0 - 2 * D + k * D for k in range(40)])
    with pytest.raises(StackingError, match="fewer than 2 stacks"):
        build_archive(perims, scenes, [st], DEFAULT_SCHEMA, SPEC)


def test_archive_invariants_and_determinism():
    perims, scenes, sts = make_inputs([0, 3, 25, 49, 80], scene_days=(-20, -2, 1))
    a = build_archive(perims, scenes, sts, DEFAULT_SCHEMA, SPEC)
    b = build_archive(perims, scenes, sts, DEFAULT_SCHEMA, SPEC)
    for s in a.stacks:
        assert s.timestamp - timedelta(days=16) <= s.scene_timestamp <= s.timestamp
        assert set(np.unique(s.fire_mask)) <= {0.0, 1.0}
        ws = s.channel("wind_speed").values
        assert ws.var() == 0
    for x, y in zip(a.stacks, a.stacks[1:]):
        assert y.timestamp - x.timestamp >= timedelta(hours=24)
    for x, y in zip(a.stacks, b.stacks):
        assert x.data.tobytes() == y.data.tobytes()
    # normalization statistics are shared across the archive
    assert len({json.dumps(s.norm, sort_keys=True) for s in a.stacks}) == 1


def test_archive_rejects_close_stacks():
    perims, scenes, sts = make_inputs([0, 26])
    arc = build_archive(perims, scenes, sts, DEFAULT_SCHEMA, SPEC)
    s0 = arc.stacks[0]
    from dataclasses import replace

    with pytest.raises(StackingError):
        FireEventArchive("x", [s0, replace(s0, timestamp=s0.timestamp + H)])


def test_archive_save_load(tmp_path):
    perims, scenes, sts = make_inputs([0, 26, 52])
    arc = build_archive(perims, scenes, sts, DEFAULT_SCHEMA, SPEC, fire_id="king")
    save_archive(arc, tmp_path / "a.npz")
    back = load_archive(tmp_path / "a.npz")
    assert back.fire_id == "king"
    assert back.schema == arc.schema and back.spec == arc.spec
    for x, y in zip(arc.stacks, back.stacks):
        assert x.timestamp == y.timestamp and x.scene_timestamp == y.scene_timestamp
        assert x.data.tobytes() == y.data.tobytes()
        assert x.norm == y.norm


def test_archive_from_manifest(tmp_path):
    perims, scenes, sts = make_inputs([0, 26, 52])
    layers = {}
    for name, grid in scenes[0].layers.items():
        write_ascii_grid(grid, tmp_path / f"{name}.asc", fmt="%.17g")
        layers[name] = f"{name}.asc"
    (tmp_path / "perims.geojson").write_text(json.dumps(perimeters_to_geojson(perims)))
    write_weather_csv(sts, tmp_path / "weather.csv")
    manifest = {
        "fire_id": "king",
        "crs_tag": SPEC.crs_tag,
        "grid": {k: v for k, v in SPEC.to_dict().items() if k != "crs_tag"},
        "scenes": [{"timestamp": "2014-09-12T00:00:00Z", "layers": layers}],
        "perimeters": "perims.geojson",
        "weather": "weather.csv",
    }
    (tmp_path / "fire.json").write_text(json.dumps(manifest))
    arc = archive_from_manifest(tmp_path / "fire.json")
    direct = build_archive(perims, scenes, sts, DEFAULT_SCHEMA, SPEC, fire_id="king")
    assert len(arc.stacks) == 3
    for x, y in zip(arc.stacks, direct.stacks):
        np.testing.assert_array_equal(x.data, y.data)
