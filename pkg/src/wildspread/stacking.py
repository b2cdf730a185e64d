"""Per-datetime layer stacks and the fire event archive.

A :class:`LayerStack` holds C geo-synchronized channels on one grid, capped with a
binary fire mask. Stacks are built only from imagery captured in the 16 days up to
the perimeter time (never after), then thinned to one stack per 24 hours.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import zipfile
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .geo import (
    GridSpec,
    PerimeterPolygon,
    RasterGrid,
    format_timestamp,
    parse_timestamp,
    rasterize_polygons,
    resample_to_grid,
)

IMAGERY_WINDOW = timedelta(days=16)
STACK_SPACING = timedelta(hours=24)

KINDS = ("spectral", "categorical", "elevation", "weather_constant", "fire_mask")

# Weather channels are scaled by fixed physical ranges so that every fire shares
# one scale. The sin/cos channels are already in [-1, 1].
WEATHER_SCALE = {
    "wind_speed": 30.0,        # m/s
    "wind_direction": 360.0,   # degrees
    "temperature": 50.0,       # degrees C
    "precipitation": 50.0,     # mm
    "wind_dir_sin": 1.0,
    "wind_dir_cos": 1.0,
}


class StackingError(ValueError):
    pass


@dataclass(frozen=True)
class LayerSchema:
    layers: tuple  # of (name, kind)

    def __post_init__(self):
        layers = tuple((str(n), str(k)) for n, k in self.layers)
        object.__setattr__(self, "layers", layers)
        names = [n for n, _ in layers]
        if len(set(names)) != len(names):
            raise StackingError(f"duplicate layer names in schema: {names}")
        bad = [k for _, k in layers if k not in KINDS]
        if bad:
            raise StackingError(f"unknown layer kinds {bad}; expected one of {KINDS}")
        if sum(k == "fire_mask" for _, k in layers) != 1:
            raise StackingError("schema needs exactly one fire_mask layer")
        if len(layers) < 2:
            raise StackingError("schema needs at least 2 channels")
        for n, k in layers:
            if k == "weather_constant" and n not in WEATHER_SCALE:
                raise StackingError(
                    f"weather layer {n!r} unknown; expected one of {sorted(WEATHER_SCALE)}"
                )

    @property
    def names(self) -> list[str]:
        return [n for n, _ in self.layers]

    @property
    def channel_count(self) -> int:
        return len(self.layers)

    @property
    def fire_mask_index(self) -> int:
        return next(i for i, (_, k) in enumerate(self.layers) if k == "fire_mask")

    def kind(self, name: str) -> str:
        return dict(self.layers)[name]

    def index(self, name: str) -> int:
        return self.names.index(name)

    def to_list(self) -> list:
        return [{"name": n, "kind": k} for n, k in self.layers]

    @classmethod
    def from_list(cls, items) -> "LayerSchema":
        return cls(tuple((d["name"], d["kind"]) for d in items))


DEFAULT_SCHEMA = LayerSchema(
    (
        ("fire_mask", "fire_mask"),
        ("red", "spectral"),
        ("green", "spectral"),
        ("blue", "spectral"),
        ("infrared", "spectral"),
        ("land_cover", "categorical"),
        ("elevation", "elevation"),
        ("wind_speed", "weather_constant"),
    )
)


@dataclass
class DatedScene:
    timestamp: datetime
    layers: dict  # name -> RasterGrid

    def __post_init__(self):
        specs = {g.spec for g in self.layers.values()}
        if len(specs) > 1:
            raise StackingError(f"scene at {self.timestamp} mixes grids: {specs}")


@dataclass(frozen=True)
class WeatherReading:
    timestamp: datetime
    wind_speed: float
    wind_direction: float
    temperature: float = 0.0
    precipitation: float = 0.0

    def value(self, name: str) -> float:
        if name == "wind_dir_sin":
            return math.sin(math.radians(self.wind_direction))
        if name == "wind_dir_cos":
            return math.cos(math.radians(self.wind_direction))
        return float(getattr(self, name))


@dataclass
class WeatherStation:
    id: str
    x: float
    y: float
    readings: list  # of WeatherReading, strictly increasing timestamps

    def __post_init__(self):
        times = [r.timestamp for r in self.readings]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise StackingError(f"station {self.id}: reading timestamps not strictly increasing")

    def latest_before(self, t: datetime) -> Optional[WeatherReading]:
        """Latest reading at or before ``t``."""
        best = None
        for r in self.readings:
            if r.timestamp <= t:
                best = r
            else:
                break
        return best


@dataclass
class LayerStack:
    """C aligned channels (``data`` has shape (C, H, W)), normalized.

    ``norm`` maps channel name to ``(offset, scale)`` so raw = data * scale + offset
    on valid pixels; nodata pixels hold 0 after normalization.
    """

    timestamp: datetime
    spec: GridSpec
    schema: LayerSchema
    data: np.ndarray
    norm: dict = field(default_factory=dict)
    station_weather: dict = field(default_factory=dict)
    scene_timestamp: Optional[datetime] = None

    def __post_init__(self):
        C = self.schema.channel_count
        if self.data.shape != (C, self.spec.height, self.spec.width):
            raise StackingError(
                f"stack data shape {self.data.shape} != {(C, self.spec.height, self.spec.width)}"
            )
        m = self.fire_mask
        if not np.all((m == 0) | (m == 1)):
            raise StackingError("fire_mask channel must be strictly 0/1")

    @property
    def fire_mask(self) -> np.ndarray:
        return self.data[self.schema.fire_mask_index]

    def channel(self, name: str) -> RasterGrid:
        return RasterGrid(self.spec, self.data[self.schema.index(name)].copy())

    def with_fire_mask(self, mask: np.ndarray) -> "LayerStack":
        data = self.data.copy()
        data[self.schema.fire_mask_index] = np.asarray(mask, dtype=np.float64)
        return replace(self, data=data)


@dataclass
class FireEventArchive:
    fire_id: str
    stacks: list

    def __post_init__(self):
        for a, b in zip(self.stacks, self.stacks[1:]):
            if b.timestamp - a.timestamp < STACK_SPACING:
                raise StackingError(
                    f"archive {self.fire_id}: stacks at {a.timestamp} and {b.timestamp} "
                    "are less than 24h apart"
                )

    @property
    def schema(self) -> LayerSchema:
        return self.stacks[0].schema

    @property
    def spec(self) -> GridSpec:
        return self.stacks[0].spec

    def pairs(self):
        """Consecutive (stack_t, stack_next) training pairs."""
        return list(zip(self.stacks, self.stacks[1:]))

    def find(self, timestamp: datetime) -> LayerStack:
        for s in self.stacks:
            if s.timestamp == timestamp:
                return s
        raise KeyError(f"no stack at {format_timestamp(timestamp)} in archive {self.fire_id}")


# --- temporal rules ---------------------------------------------------------


def select_scene(scenes: Sequence[DatedScene], perimeter_time: datetime) -> Optional[DatedScene]:
    """Latest scene within [perimeter_time - 16 days, perimeter_time].

    Returns None (the perimeter is excluded) when no scene qualifies; imagery
    captured after the perimeter is never eligible.
    """
    best = None
    for scene in scenes:
        if perimeter_time - IMAGERY_WINDOW <= scene.timestamp <= perimeter_time:
            if best is None or scene.timestamp >= best.timestamp:
                best = scene
    return best


def filter_24h(items, key=lambda s: s.timestamp) -> list:
    """Keep the first item, then each item at least 24h after the last kept one."""
    kept = []
    for item in items:
        if not kept or key(item) - key(kept[-1]) >= STACK_SPACING:
            kept.append(item)
    return kept


def nearest_station(stations: Sequence[WeatherStation], reference) -> WeatherStation:
    """Closest station in projected coordinates; ties go to the lowest id."""
    if not stations:
        raise StackingError("no weather stations given")
    rx, ry = reference
    return min(stations, key=lambda s: (math.hypot(s.x - rx, s.y - ry), s.id))


def weather_constant_layer(value: float, spec: GridSpec) -> RasterGrid:
    value = float(value)
    if not math.isfinite(value):
        raise StackingError(f"weather value must be finite, got {value}")
    return RasterGrid(spec, np.full(spec.shape, value))


# --- stack construction -----------------------------------------------------


@dataclass
class _RawStack:
    timestamp: datetime
    scene_timestamp: datetime
    values: np.ndarray  # (C, H, W) raw units
    valid: np.ndarray   # (C, H, W) bool
    weather: dict


def _build_raw(scene, perimeters, station, schema, spec) -> _RawStack:
    perimeters = [perimeters] if isinstance(perimeters, PerimeterPolygon) else list(perimeters)
    if not perimeters:
        raise StackingError("no perimeter given")
    t = perimeters[0].timestamp
    if any(p.timestamp != t for p in perimeters):
        raise StackingError("perimeter parts of one stack must share a timestamp")

    C = schema.channel_count
    values = np.zeros((C, spec.height, spec.width))
    valid = np.ones((C, spec.height, spec.width), dtype=bool)
    weather = {}
    reading = None
    for i, (name, kind) in enumerate(schema.layers):
        if kind == "fire_mask":
            values[i] = rasterize_polygons(perimeters, spec).values
        elif kind == "weather_constant":
            if reading is None:
                reading = station.latest_before(t)
                if reading is None:
                    raise StackingError(
                        f"station {station.id} has no reading at or before {format_timestamp(t)}"
                    )
            v = reading.value(name)
            weather[name] = v
            values[i] = weather_constant_layer(v, spec).values
        else:
            if name not in scene.layers:
                raise StackingError(
                    f"scene at {format_timestamp(scene.timestamp)} lacks channel {name!r}"
                )
            grid = resample_to_grid(scene.layers[name], spec)
            values[i] = grid.values
            valid[i] = ~grid.nodata_mask()
    return _RawStack(t, scene.timestamp, values, valid, weather)


def _norm_stats(raws: Sequence[_RawStack], schema: LayerSchema) -> dict:
    norm = {}
    for i, (name, kind) in enumerate(schema.layers):
        if kind == "fire_mask":
            norm[name] = (0.0, 1.0)
        elif kind == "weather_constant":
            norm[name] = (0.0, WEATHER_SCALE[name])
        else:
            vals = np.concatenate([r.values[i][r.valid[i]] for r in raws])
            if vals.size == 0:
                norm[name] = (0.0, 1.0)
            elif kind == "categorical":
                top = float(vals.max())
                norm[name] = (0.0, top if top > 0 else 1.0)
            else:
                lo, hi = float(vals.min()), float(vals.max())
                norm[name] = (lo, hi - lo if hi > lo else 1.0)
    return norm


def _finish(raw: _RawStack, schema, spec, norm, station) -> LayerStack:
    data = np.empty_like(raw.values)
    for i, name in enumerate(schema.names):
        off, scale = norm[name]
        data[i] = np.where(raw.valid[i], (raw.values[i] - off) / scale, 0.0)
    return LayerStack(
        timestamp=raw.timestamp,
        spec=spec,
        schema=schema,
        data=data,
        norm=dict(norm),
        station_weather={"station_id": station.id, **raw.weather},
        scene_timestamp=raw.scene_timestamp,
    )


def build_stack(scene, perimeter, station, schema=DEFAULT_SCHEMA, spec=None, norm=None) -> LayerStack:
    """Resample the scene onto ``spec`` and cap it with the perimeter mask.

    ``perimeter`` is one PerimeterPolygon or a list of parts sharing a timestamp.
    Normalization statistics come from this stack alone unless ``norm`` is given
    (:func:`build_archive` passes archive-wide statistics).
    """
    if spec is None:
        spec = next(iter(scene.layers.values())).spec
    raw = _build_raw(scene, perimeter, station, schema, spec)
    if norm is None:
        norm = _norm_stats([raw], schema)
    return _finish(raw, schema, spec, norm, station)


def build_archive(perimeters, scenes, stations, schema=DEFAULT_SCHEMA, spec=None, fire_id="fire") -> FireEventArchive:
    """Assemble a FireEventArchive from parsed, geo-synchronized inputs.

    Perimeter parts sharing a timestamp form one mask. Perimeters without imagery in
    the preceding 16 days are dropped, survivors are thinned to 24h spacing, and
    spectral/elevation/land-cover scaling uses statistics over the whole archive.
    """
    scenes = sorted(scenes, key=lambda s: s.timestamp)
    if spec is None:
        spec = next(iter(scenes[0].layers.values())).spec
    station = nearest_station(stations, spec.center())

    groups: dict = {}
    for p in perimeters:
        groups.setdefault(p.timestamp, []).append(p)

    candidates = []
    for t in sorted(groups):
        scene = select_scene(scenes, t)
        if scene is None:
            continue
        candidates.append((t, scene))
    candidates = filter_24h(candidates, key=lambda c: c[0])
    raws = [_build_raw(scene, groups[t], station, schema, spec) for t, scene in candidates]
    if len(raws) < 2:
        raise StackingError(
            f"fewer than 2 stacks survive for fire {fire_id!r} ({len(raws)}); "
            "cannot form a training pair"
        )
    norm = _norm_stats(raws, schema)
    stacks = [_finish(r, schema, spec, norm, station) for r in raws]
    return FireEventArchive(fire_id, stacks)


# --- files ------------------------------------------------------------------


def read_weather_csv(path) -> list[WeatherStation]:
    """Columns: station_id,x,y,timestamp,wind_speed,wind_direction,temperature,precipitation."""
    rows: dict = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, rec in enumerate(csv.DictReader(fh), start=2):
            try:
                sid = rec["station_id"]
                st = rows.setdefault(sid, {"x": float(rec["x"]), "y": float(rec["y"]), "readings": []})
                st["readings"].append(
                    WeatherReading(
                        parse_timestamp(rec["timestamp"]),
                        float(rec["wind_speed"]),
                        float(rec["wind_direction"]),
                        float(rec.get("temperature") or 0.0),
                        float(rec.get("precipitation") or 0.0),
                    )
                )
            except (KeyError, ValueError, TypeError) as exc:
                raise StackingError(f"{path}: line {lineno}: {exc}") from None
    stations = []
    for sid in sorted(rows):
        st = rows[sid]
        readings = sorted(st["readings"], key=lambda r: r.timestamp)
        stations.append(WeatherStation(sid, st["x"], st["y"], readings))
    return stations


def write_weather_csv(stations, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["station_id", "x", "y", "timestamp", "wind_speed", "wind_direction",
                    "temperature", "precipitation"])
        for s in stations:
            for r in s.readings:
                w.writerow([s.id, repr(s.x), repr(s.y), format_timestamp(r.timestamp),
                            repr(r.wind_speed), repr(r.wind_direction),
                            repr(r.temperature), repr(r.precipitation)])


def save_archive(archive: FireEventArchive, path) -> None:
    """Write an archive as an uncompressed ``.npz`` (float64 data plus JSON metadata), atomically."""
    meta = {
        "format": "wildspread-archive",
        "version": 1,
        "fire_id": archive.fire_id,
        "schema": archive.schema.to_list(),
        "grid": archive.spec.to_dict(),
        "stacks": [
            {
                "timestamp": format_timestamp(s.timestamp),
                "scene_timestamp": format_timestamp(s.scene_timestamp) if s.scene_timestamp else None,
                "norm": {k: list(v) for k, v in s.norm.items()},
                "station_weather": s.station_weather,
            }
            for s in archive.stacks
        ],
    }
    arrays = {"meta": np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)}
    arrays.update({f"stack_{i:04d}": s.data for i, s in enumerate(archive.stacks)})
    # written by hand with fixed entry dates so identical archives are byte-identical
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with zipfile.ZipFile(tmp, "w", compression=zipfile.ZIP_STORED) as zf:
        for name, arr in arrays.items():
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arr), allow_pickle=False)
            zi = zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
            zi.external_attr = 0o644 << 16
            zf.writestr(zi, buf.getvalue())
    os.replace(tmp, path)


def load_archive(path) -> FireEventArchive:
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(bytes(z["meta"]).decode())
        if meta.get("format") != "wildspread-archive":
            raise StackingError(f"{path} is not a wildspread archive")
        schema = LayerSchema.from_list(meta["schema"])
        spec = GridSpec.from_dict(meta["grid"])
        stacks = []
        for i, sm in enumerate(meta["stacks"]):
            stacks.append(
                LayerStack(
                    timestamp=parse_timestamp(sm["timestamp"]),
                    spec=spec,
                    schema=schema,
                    data=np.array(z[f"stack_{i:04d}"]),
                    norm={k: tuple(v) for k, v in sm["norm"].items()},
                    station_weather=sm["station_weather"],
                    scene_timestamp=parse_timestamp(sm["scene_timestamp"]) if sm["scene_timestamp"] else None,
                )
            )
    return FireEventArchive(meta["fire_id"], stacks)


def archive_from_manifest(path) -> FireEventArchive:
    """Build an archive from a fire manifest JSON; relative paths resolve against it.

    Keys: fire_id, crs_tag, grid (GridSpec fields), optional schema (list of
    {name, kind}), scenes (list of {timestamp, layers: {name: raster path}}),
    perimeters (GeoJSON path), weather (CSV path).
    """
    from .geo import read_perimeter_geojson, read_raster

    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    base = path.parent
    crs = doc.get("crs_tag", "")
    grid = dict(doc["grid"])
    grid.setdefault("crs_tag", crs)
    spec = GridSpec.from_dict(grid)
    schema = LayerSchema.from_list(doc["schema"]) if doc.get("schema") else DEFAULT_SCHEMA
    scenes = []
    for sc in doc["scenes"]:
        layers = {name: read_raster(base / p, crs_tag=crs) for name, p in sc["layers"].items()}
        scenes.append(DatedScene(parse_timestamp(sc["timestamp"]), layers))
    perimeters = read_perimeter_geojson(base / doc["perimeters"])
    stations = read_weather_csv(base / doc["weather"])
    return build_archive(perimeters, scenes, stations, schema, spec, fire_id=doc["fire_id"])
