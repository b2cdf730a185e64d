"""Grid geometry and the single-layer raster container."""

from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import datetime
from typing import Optional

import numpy as np

DEFAULT_PIXEL_SIZE = 30.0
DEFAULT_NODATA = -9999.0


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class GridSpec:
    """North-up grid: top-left corner at (origin_x, origin_y), square pixels.

    Rows grow southward, so pixel (col, row) has its center at
    ``(origin_x + (col + 0.5) * pixel_size, origin_y - (row + 0.5) * pixel_size)``.
    """

    origin_x: float
    origin_y: float
    width: int
    height: int
    pixel_size: float = DEFAULT_PIXEL_SIZE
    crs_tag: str = ""

    def __post_init__(self):
        if not (self.pixel_size > 0 and math.isfinite(self.pixel_size)):
            raise GridError(f"pixel_size must be positive, got {self.pixel_size}")
        if self.width < 1 or self.height < 1:
            raise GridError(f"grid must be at least 1x1, got {self.width}x{self.height}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        """(left, bottom, right, top)"""
        return (
            self.origin_x,
            self.origin_y - self.height * self.pixel_size,
            self.origin_x + self.width * self.pixel_size,
            self.origin_y,
        )

    def pixel_to_map(self, col, row):
        """Map coordinates of pixel centers. Accepts scalars or arrays."""
        x = self.origin_x + (np.asarray(col) + 0.5) * self.pixel_size
        y = self.origin_y - (np.asarray(row) + 0.5) * self.pixel_size
        if np.ndim(x) == 0:
            return float(x), float(y)
        return x, y

    def map_to_pixel(self, x, y):
        """Indices of the pixels containing the map points (may be out of bounds)."""
        col = np.floor((np.asarray(x) - self.origin_x) / self.pixel_size).astype(np.int64)
        row = np.floor((self.origin_y - np.asarray(y)) / self.pixel_size).astype(np.int64)
        if np.ndim(col) == 0:
            return int(col), int(row)
        return col, row

    def center(self) -> tuple[float, float]:
        left, bottom, right, top = self.bounds
        return ((left + right) / 2, (bottom + top) / 2)

    def to_dict(self) -> dict:
        return {
            "origin_x": self.origin_x,
            "origin_y": self.origin_y,
            "width": self.width,
            "height": self.height,
            "pixel_size": self.pixel_size,
            "crs_tag": self.crs_tag,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        return cls(
            origin_x=float(d["origin_x"]),
            origin_y=float(d["origin_y"]),
            width=int(d["width"]),
            height=int(d["height"]),
            pixel_size=float(d.get("pixel_size", DEFAULT_PIXEL_SIZE)),
            crs_tag=str(d.get("crs_tag", "")),
        )


@dataclass
class RasterGrid:
    spec: GridSpec
    values: np.ndarray
    nodata: Optional[float] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != self.spec.shape:
            raise GridError(
                f"values shape {self.values.shape} does not match grid {self.spec.shape}"
            )
        valid = self.values[~self.nodata_mask()]
        if not np.all(np.isfinite(valid)):
            raise GridError("raster contains non-finite values outside the nodata mask")

    def nodata_mask(self) -> np.ndarray:
        if self.nodata is None:
            return np.zeros(self.values.shape, dtype=bool)
        if math.isnan(self.nodata):
            return np.isnan(self.values)
        return self.values == self.nodata


@dataclass
class PerimeterPolygon:
    """A fire perimeter part. ``rings[0]`` is the exterior, the rest are holes."""

    rings: list
    timestamp: datetime

    def __post_init__(self):
        rings = []
        for i, ring in enumerate(self.rings):
            arr = np.asarray(ring, dtype=np.float64)
            if arr.ndim != 2 or arr.shape[1] < 2:
                raise GridError(f"ring {i} is not a list of coordinate pairs")
            arr = arr[:, :2]
            if len(arr) < 4:
                raise GridError(f"ring {i} has {len(arr)} points; at least 4 are required")
            if not np.array_equal(arr[0], arr[-1]):
                raise GridError(f"ring {i} is not closed")
            rings.append(arr)
        if not rings:
            raise GridError("polygon has no rings")
        self.rings = rings

    @property
    def exterior(self) -> np.ndarray:
        return self.rings[0]

    def area(self) -> float:
        """Unsigned area of the exterior minus the holes."""
        def shoelace(r):
            x, y = r[:, 0], r[:, 1]
            return 0.5 * abs(np.dot(x[:-1], y[1:]) - np.dot(x[1:], y[:-1]))

        return shoelace(self.rings[0]) - sum(shoelace(h) for h in self.rings[1:])
