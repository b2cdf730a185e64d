"""Same-CRS regridding: nearest-neighbour resampling and mosaicking.

Reprojection between coordinate systems is not supported; every input must carry
the target's ``crs_tag``.
"""

from __future__ import annotations

import numpy as np

from .grid import DEFAULT_NODATA, GridError, GridSpec, RasterGrid


class CrsMismatchError(GridError):
    pass


def _check_crs(src: GridSpec, target: GridSpec):
    if src.crs_tag != target.crs_tag:
        raise CrsMismatchError(
            f"crs_tag mismatch: source {src.crs_tag!r} vs target {target.crs_tag!r}"
        )


def _source_indices(src: GridSpec, target: GridSpec):
    cols = np.arange(target.width)
    rows = np.arange(target.height)
    tx, _ = target.pixel_to_map(cols, np.zeros_like(cols))
    _, ty = target.pixel_to_map(np.zeros_like(rows), rows)
    # the containing source cell is the one with the nearest center
    sc = np.floor((tx - src.origin_x) / src.pixel_size).astype(np.int64)
    sr = np.floor((src.origin_y - ty) / src.pixel_size).astype(np.int64)
    return sc, sr


def resample_to_grid(src: RasterGrid, target: GridSpec) -> RasterGrid:
    """Nearest-neighbour resample of ``src`` onto ``target``.

    Target pixels whose center falls outside the source extent become nodata
    (the source's sentinel, or -9999 when the source has none).
    """
    _check_crs(src.spec, target)
    if src.spec == target:
        return RasterGrid(target, src.values.copy(), src.nodata)
    sc, sr = _source_indices(src.spec, target)
    col_ok = (sc >= 0) & (sc < src.spec.width)
    row_ok = (sr >= 0) & (sr < src.spec.height)
    inside = row_ok[:, None] & col_ok[None, :]

    nodata = src.nodata
    if nodata is None and not inside.all():
        nodata = DEFAULT_NODATA
    out = np.full(target.shape, nodata if nodata is not None else 0.0, dtype=np.float64)
    rr = np.clip(sr, 0, src.spec.height - 1)
    cc = np.clip(sc, 0, src.spec.width - 1)
    picked = src.values[np.ix_(rr, cc)]
    out[inside] = picked[inside]
    return RasterGrid(target, out, nodata)


def mosaic(rasters, target: GridSpec) -> RasterGrid:
    """Fill ``target`` from the first raster (in list order) with valid data there."""
    rasters = list(rasters)
    if not rasters:
        raise GridError("mosaic needs at least one raster")
    for r in rasters:
        _check_crs(r.spec, target)
        if r.spec.pixel_size != target.pixel_size:
            raise GridError(
                f"pixel_size mismatch: {r.spec.pixel_size} vs target {target.pixel_size}"
            )
    nodata = next((r.nodata for r in rasters if r.nodata is not None), DEFAULT_NODATA)
    out = np.full(target.shape, nodata, dtype=np.float64)
    filled = np.zeros(target.shape, dtype=bool)
    for r in rasters:
        res = resample_to_grid(r, target)
        valid = ~res.nodata_mask() & ~filled
        out[valid] = res.values[valid]
        filled |= valid
    return RasterGrid(target, out, nodata if not filled.all() else rasters[0].nodata)
