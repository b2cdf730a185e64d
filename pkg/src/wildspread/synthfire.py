"""Seeded cellular-automaton fire spread used as synthetic ground truth.

This is a test harness with simple, well-defined dynamics. It makes no claim
about real fire behaviour.

Each CA step, an unburned pixel with burning 8-neighbours ignites with
probability ``1 - prod(1 - p_k)`` over those neighbours, where

    p_k = min(1, p0 * flammability * (1 + alpha * max(0, cos theta_k)))

and ``theta_k`` is the angle between the wind vector and the direction from
neighbour k to the pixel. Wind direction is the compass bearing the wind
blows toward (degrees clockwise from north). Burning pixels stay burning and
water (flammability 0) never ignites.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.ndimage import gaussian_filter

from .geo import (
    GridSpec,
    RasterGrid,
    format_timestamp,
    mask_to_polygons,
    parse_timestamp,
    perimeters_to_geojson,
    write_ascii_grid,
)
from .sampling.rng import numpy_generator
from .stacking import (
    DEFAULT_SCHEMA,
    DatedScene,
    FireEventArchive,
    LayerSchema,
    WeatherReading,
    WeatherStation,
    build_archive,
    write_weather_csv,
)

WATER = 0
# class id -> (name, default flammability, mean red, green, blue, infrared)
LAND_COVER = {
    0: ("water", 0.0, 0.05, 0.08, 0.12, 0.03),
    1: ("grass", 1.3, 0.30, 0.35, 0.20, 0.45),
    2: ("shrub", 1.0, 0.25, 0.28, 0.18, 0.38),
    3: ("forest", 0.8, 0.10, 0.18, 0.08, 0.55),
    4: ("barren", 0.3, 0.40, 0.38, 0.35, 0.30),
}
# neighbour offsets (drow, dcol); the pixel at (r, c) sees the neighbour at (r - dr, c - dc)
OFFSETS = [(dr, dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1) if (dr, dc) != (0, 0)]


class SynthError(ValueError):
    pass


@dataclass
class SynthParams:
    width: int = 160
    height: int = 160
    days: int = 10
    p0: float = 0.35
    wind_speed: float = 6.0
    wind_direction: float = 45.0
    alpha: float = 1.5
    wind_jitter: float = 0.0  # std dev (degrees) of day-to-day wind direction changes
    steps_per_day: int = 3
    flammability: dict = field(default_factory=lambda: {k: v[1] for k, v in LAND_COVER.items()})
    class_weights: dict = field(default_factory=lambda: {0: 0.06, 1: 0.3, 2: 0.3, 3: 0.26, 4: 0.08})
    block: int = 12
    elevation_min: float = 800.0
    elevation_max: float = 2400.0
    elevation_smoothing: float = 10.0
    spectral_noise: float = 0.02
    ignition: Optional[list] = None  # (col, row); random near the center when None
    ignition_radius: int = 1
    pixel_size: float = 30.0
    origin_x: float = 300000.0
    origin_y: float = 4200000.0
    crs_tag: str = "EPSG:32611"
    start: str = "2020-08-01T00:00:00Z"
    fire_id: str = "synth"
    seed: int = 0

    def __post_init__(self):
        self.flammability = {int(k): float(v) for k, v in self.flammability.items()}
        self.class_weights = {int(k): float(v) for k, v in self.class_weights.items()}
        if not 0.0 <= self.p0 <= 1.0:
            raise SynthError(f"p0 must lie in [0, 1], got {self.p0}")
        if any(v < 0 for v in self.flammability.values()):
            raise SynthError("flammability multipliers must be >= 0")
        if self.flammability.get(WATER, 0.0) != 0.0:
            raise SynthError("water must have flammability 0")
        if self.days < 2:
            raise SynthError("days must be >= 2")
        if self.width < 1 or self.height < 1 or self.steps_per_day < 1 or self.block < 1:
            raise SynthError("grid dims, block and steps_per_day must be positive")
        if set(self.class_weights) - set(LAND_COVER):
            raise SynthError(f"unknown land-cover classes {sorted(set(self.class_weights) - set(LAND_COVER))}")
        if "_" in self.fire_id or "/" in self.fire_id:
            raise SynthError("fire_id may not contain '_' or '/'")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthParams":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise SynthError(f"unknown synth parameters: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "SynthParams":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["flammability"] = {str(k): v for k, v in self.flammability.items()}
        d["class_weights"] = {str(k): v for k, v in self.class_weights.items()}
        return d

    @property
    def spec(self) -> GridSpec:
        return GridSpec(self.origin_x, self.origin_y, self.width, self.height, self.pixel_size, self.crs_tag)

    @property
    def start_time(self) -> datetime:
        return parse_timestamp(self.start)


@dataclass
class Terrain:
    land_cover: np.ndarray  # (H, W) int class ids
    elevation: np.ndarray  # (H, W) metres
    flammability: np.ndarray  # (H, W) multipliers
    spectra: dict  # band name -> (H, W) reflectance in [0, 1]


# --- terrain ----------------------------------------------------------------


def generate_terrain(params: SynthParams) -> Terrain:
    """Smooth random elevation, blocky land cover and class-driven spectra."""
    H, W = params.height, params.width
    rng = numpy_generator(params.seed, "terrain", "elevation")
    noise = gaussian_filter(rng.standard_normal((H, W)), params.elevation_smoothing, mode="reflect")
    lo, hi = noise.min(), noise.max()
    unit = (noise - lo) / (hi - lo) if hi > lo else np.zeros_like(noise)
    elevation = params.elevation_min + unit * (params.elevation_max - params.elevation_min)

    rng = numpy_generator(params.seed, "terrain", "land_cover")
    classes = np.array(sorted(params.class_weights))
    weights = np.array([params.class_weights[c] for c in classes])
    bh, bw = -(-H // params.block), -(-W // params.block)
    coarse = rng.choice(classes, size=(bh, bw), p=weights / weights.sum())
    land_cover = np.kron(coarse, np.ones((params.block, params.block), dtype=int))[:H, :W]

    flam = np.vectorize(lambda c: params.flammability.get(int(c), 0.0), otypes=[float])(land_cover)

    rng = numpy_generator(params.seed, "terrain", "spectra")
    spectra = {}
    for b, band in enumerate(("red", "green", "blue", "infrared")):
        means = np.vectorize(lambda c: LAND_COVER[int(c)][2 + b], otypes=[float])(land_cover)
        spectra[band] = np.clip(means + params.spectral_noise * rng.standard_normal((H, W)), 0.0, 1.0)
    return Terrain(land_cover, elevation, flam, spectra)


# --- fire dynamics ----------------------------------------------------------------


def wind_unit(direction_deg: float) -> tuple:
    """(east, north) unit vector of a wind blowing toward ``direction_deg``."""
    b = math.radians(direction_deg)
    return math.sin(b), math.cos(b)


def neighbour_probabilities(params: SynthParams, wind_direction: Optional[float] = None) -> list:
    """Per-offset base probability factor ``p0 * (1 + alpha * max(0, cos theta))``."""
    we, wn = wind_unit(params.wind_direction if wind_direction is None else wind_direction)
    out = []
    for dr, dc in OFFSETS:
        # direction from the burning neighbour to the pixel, in (east, north)
        e, n = dc, -dr
        norm = math.hypot(e, n)
        cos_t = (e * we + n * wn) / norm
        out.append(params.p0 * (1.0 + params.alpha * max(0.0, cos_t)))
    return out


def step_fire(mask: np.ndarray, flammability: np.ndarray, params: SynthParams, day_seed: int,
              wind_direction: Optional[float] = None) -> np.ndarray:
    """One CA step. Uniform draws come from one derived substream per row."""
    burning = np.asarray(mask).astype(bool)
    H, W = burning.shape
    padded = np.pad(burning, 1)
    survive = np.ones((H, W))
    for (dr, dc), base in zip(OFFSETS, neighbour_probabilities(params, wind_direction)):
        # neighbour of (r, c) at (r - dr, c - dc)
        nb = padded[1 - dr:1 - dr + H, 1 - dc:1 - dc + W]
        p = np.minimum(1.0, base * flammability)
        survive *= np.where(nb, 1.0 - p, 1.0)
    ignite_p = 1.0 - survive
    u = np.empty((H, W))
    for r in range(H):
        u[r] = numpy_generator(params.seed, "fire", day_seed, "row", r).random(W)
    new = ~burning & (flammability > 0) & (u < ignite_p)
    return (burning | new).astype(np.uint8)


def ignition_mask(params: SynthParams, terrain: Terrain) -> np.ndarray:
    H, W = params.height, params.width
    burnable = terrain.flammability > 0
    if params.ignition is not None:
        col, row = params.ignition
    else:
        rng = numpy_generator(params.seed, "ignition")
        rows, cols = np.nonzero(burnable[H // 4: H - H // 4, W // 4: W - W // 4])
        if rows.size == 0:
            raise SynthError("no burnable pixel near the grid center")
        k = int(rng.integers(rows.size))
        row, col = rows[k] + H // 4, cols[k] + W // 4
    r = params.ignition_radius
    mask = np.zeros((H, W), dtype=np.uint8)
    mask[max(0, row - r):row + r + 1, max(0, col - r):col + r + 1] = 1
    mask &= burnable
    if not mask.any():
        raise SynthError(f"ignition at {(col, row)} has no burnable pixel")
    return mask


def daily_wind(params: SynthParams) -> list:
    """Wind direction for each day, a seeded random walk when jitter > 0."""
    if params.wind_jitter <= 0:
        return [params.wind_direction] * params.days
    rng = numpy_generator(params.seed, "wind")
    steps = rng.normal(0.0, params.wind_jitter, params.days - 1)
    return list((params.wind_direction + np.concatenate([[0.0], np.cumsum(steps)])) % 360.0)


def simulate(params: SynthParams, terrain: Optional[Terrain] = None) -> list:
    """Daily fire masks, day 0 being the ignition."""
    terrain = terrain or generate_terrain(params)
    winds = daily_wind(params)
    masks = [ignition_mask(params, terrain)]
    step = 0
    for day in range(1, params.days):
        m = masks[-1]
        for _ in range(params.steps_per_day):
            m = step_fire(m, terrain.flammability, params, step, winds[day - 1])
            step += 1
        masks.append(m)
    return masks


# --- archive assembly --------------------------------------------------------------


def _weather(params: SynthParams) -> list:
    t0 = params.start_time
    readings = [
        WeatherReading(t0 + timedelta(days=d), params.wind_speed, float(w), 25.0, 0.0)
        for d, w in enumerate(daily_wind(params))
    ]
    spec = params.spec
    x, y = spec.center()
    return [WeatherStation(f"{params.fire_id}-wx", x, y, readings)]


def synth_inputs(params: SynthParams):
    """(perimeters, scenes, stations, terrain, masks) as raw pipeline inputs.

    One imagery scene one day before ignition carries the static channels;
    another is added every 8 days so each perimeter has imagery within the
    16-day window.
    """
    terrain = generate_terrain(params)
    masks = simulate(params, terrain)
    spec = params.spec
    t0 = params.start_time
    perimeters = []
    for d, m in enumerate(masks):
        perimeters += mask_to_polygons(m, spec, t0 + timedelta(days=d))
    layers = {name: RasterGrid(spec, v) for name, v in terrain.spectra.items()}
    layers["land_cover"] = RasterGrid(spec, terrain.land_cover.astype(np.float64))
    layers["elevation"] = RasterGrid(spec, terrain.elevation)
    scenes = [
        DatedScene(t0 - timedelta(days=1) + timedelta(days=8 * k), layers)
        for k in range(1 + (params.days - 1) // 8)
    ]
    return perimeters, scenes, _weather(params), terrain, masks


def generate_archive(params: SynthParams, schema: LayerSchema = DEFAULT_SCHEMA) -> FireEventArchive:
    """Daily stacks 24h apart, built through the regular stacking pipeline."""
    perimeters, scenes, stations, _, _ = synth_inputs(params)
    return build_archive(perimeters, scenes, stations, schema, params.spec, fire_id=params.fire_id)


def write_bundle(params: SynthParams, out_dir) -> Path:
    """Raw-file form of a synthetic fire (ASCII rasters, GeoJSON, weather CSV, manifest).

    The returned manifest is what the ``stack`` subcommand consumes.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    perimeters, scenes, stations, terrain, _ = synth_inputs(params)
    scene_docs = []
    for k, scene in enumerate(scenes):
        files = {}
        for name, grid in scene.layers.items():
            fname = f"scene{k}_{name}.asc"
            fmt = "%.0f" if name == "land_cover" else "%.9g"
            write_ascii_grid(grid, out / fname, fmt=fmt)
            files[name] = fname
        scene_docs.append({"timestamp": format_timestamp(scene.timestamp), "layers": files})
    geo = perimeters_to_geojson(perimeters)
    (out / "perimeters.geojson").write_text(json.dumps(geo) + "\n")
    write_weather_csv(stations, out / "weather.csv")
    spec = params.spec
    manifest = {
        "fire_id": params.fire_id,
        "crs_tag": spec.crs_tag,
        "grid": spec.to_dict(),
        "schema": DEFAULT_SCHEMA.to_list(),
        "scenes": scene_docs,
        "perimeters": "perimeters.geojson",
        "weather": "weather.csv",
        "synth_params": params.to_dict(),
    }
    path = out / "manifest.json"
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, path)
    return path
