"""Raster/vector ingestion and grid arithmetic."""

from .ascii_grid import AsciiGridError, parse_ascii_grid, read_ascii_grid, write_ascii_grid
from .geotiff import TiffError, UnsupportedTiffFeature, parse_geotiff_minimal, read_geotiff
from .grid import DEFAULT_NODATA, GridError, GridSpec, PerimeterPolygon, RasterGrid
from .perimeter import (
    PerimeterError,
    format_timestamp,
    parse_perimeter_geojson,
    parse_timestamp,
    perimeters_to_geojson,
    read_perimeter_geojson,
)
from .rasterize import (
    DegeneratePolygonWarning,
    mask_to_polygons,
    point_in_polygon,
    rasterize_polygon,
    rasterize_polygons,
)
from .regrid import CrsMismatchError, mosaic, resample_to_grid


def read_raster(path, crs_tag: str = "") -> RasterGrid:
    """Dispatch on extension: ``.tif``/``.tiff`` GeoTIFF, anything else ASCII grid."""
    suffix = str(path).lower()
    if suffix.endswith((".tif", ".tiff")):
        return read_geotiff(path, crs_tag=crs_tag or None)
    return read_ascii_grid(path, crs_tag=crs_tag)


__all__ = [
    "AsciiGridError",
    "CrsMismatchError",
    "DEFAULT_NODATA",
    "DegeneratePolygonWarning",
    "GridError",
    "GridSpec",
    "PerimeterError",
    "PerimeterPolygon",
    "RasterGrid",
    "TiffError",
    "UnsupportedTiffFeature",
    "format_timestamp",
    "mask_to_polygons",
    "mosaic",
    "parse_ascii_grid",
    "parse_geotiff_minimal",
    "parse_perimeter_geojson",
    "parse_timestamp",
    "perimeters_to_geojson",
    "point_in_polygon",
    "rasterize_polygon",
    "rasterize_polygons",
    "read_ascii_grid",
    "read_geotiff",
    "read_perimeter_geojson",
    "read_raster",
    "resample_to_grid",
    "write_ascii_grid",
]
