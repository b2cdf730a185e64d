"""Polygon to binary mask rasterization by pixel-center containment.

A pixel is set when its center lies inside the polygon under the even-odd rule.
Edge crossings use the half-open convention ``(y0 < py) != (y1 < py)`` together
with ``px < x_intersect``, which makes left and top (north) edges inclusive and
right and bottom edges exclusive. Holes fall out of the even-odd count.
"""

from __future__ import annotations

import warnings

import numpy as np

from .grid import GridSpec, PerimeterPolygon, RasterGrid


class DegeneratePolygonWarning(UserWarning):
    pass


def _edges(poly: PerimeterPolygon) -> np.ndarray:
    """All ring edges as an (E, 4) array of x0, y0, x1, y1."""
    segs = [np.hstack([r[:-1], r[1:]]) for r in poly.rings]
    return np.vstack(segs)


def point_in_polygon(px: float, py: float, poly: PerimeterPolygon) -> bool:
    """Scalar even-odd test with the module's half-open convention."""
    inside = False
    for ring in poly.rings:
        for k in range(len(ring) - 1):
            x0, y0 = ring[k]
            x1, y1 = ring[k + 1]
            if (y0 < py) != (y1 < py):
                xint = x0 + (py - y0) * (x1 - x0) / (y1 - y0)
                if px < xint:
                    inside = not inside
    return inside


def rasterize_mask(poly: PerimeterPolygon, spec: GridSpec) -> np.ndarray:
    """Boolean (height, width) containment mask; see :func:`rasterize_polygon`."""
    mask = np.zeros(spec.shape, dtype=bool)
    if not poly.area() > 0:
        warnings.warn(
            f"degenerate perimeter polygon at {poly.timestamp} (zero area); mask left empty",
            DegeneratePolygonWarning,
            stacklevel=3,
        )
        return mask

    e = _edges(poly)
    x0, y0, x1, y1 = e.T
    keep = y0 != y1
    x0, y0, x1, y1 = x0[keep], y0[keep], x1[keep], y1[keep]

    cols = np.arange(spec.width)
    cx, _ = spec.pixel_to_map(cols, np.zeros_like(cols))
    ymin, ymax = min(y0.min(), y1.min()), max(y0.max(), y1.max())
    # candidate rows: those whose center could fall within [ymin, ymax]
    r_lo = max(0, int(np.floor((spec.origin_y - ymax) / spec.pixel_size - 0.5)) - 1)
    r_hi = min(spec.height, int(np.ceil((spec.origin_y - ymin) / spec.pixel_size - 0.5)) + 2)

    for row in range(r_lo, r_hi):
        py = spec.origin_y - (row + 0.5) * spec.pixel_size
        crossing = (y0 < py) != (y1 < py)
        if not crossing.any():
            continue
        a0, b0, a1, b1 = x0[crossing], y0[crossing], x1[crossing], y1[crossing]
        xint = np.sort(a0 + (py - b0) * (a1 - a0) / (b1 - b0))
        # crossings strictly to the right of each center
        right = len(xint) - np.searchsorted(xint, cx, side="right")
        mask[row] = (right % 2) == 1
    return mask


def rasterize_polygon(poly: PerimeterPolygon, spec: GridSpec) -> RasterGrid:
    """Binary 0/1 raster of ``poly`` on ``spec``.

    A zero-area polygon yields an all-zero mask and emits a
    :class:`DegeneratePolygonWarning`.
    """
    return RasterGrid(spec, rasterize_mask(poly, spec).astype(np.float64))


def rasterize_polygons(polys, spec: GridSpec) -> RasterGrid:
    """Union of several perimeter parts (e.g. the parts of one MultiPolygon)."""
    mask = np.zeros(spec.shape, dtype=bool)
    for p in polys:
        mask |= rasterize_mask(p, spec)
    return RasterGrid(spec, mask.astype(np.float64))


def mask_to_polygons(mask: np.ndarray, spec: GridSpec, timestamp) -> list[PerimeterPolygon]:
    """Exact polygon cover of a binary mask: one rectangle per horizontal run.

    Rasterizing the result on ``spec`` reproduces ``mask`` exactly, since every
    rectangle edge lies half a pixel away from the nearest center.
    """
    mask = np.asarray(mask, dtype=bool)
    ps = spec.pixel_size
    polys = []
    for row in range(mask.shape[0]):
        line = np.concatenate([[False], mask[row], [False]]).astype(np.int8)
        d = np.diff(line)
        starts = np.flatnonzero(d == 1)
        stops = np.flatnonzero(d == -1)
        top = spec.origin_y - row * ps
        bottom = top - ps
        for c0, c1 in zip(starts, stops):
            left = spec.origin_x + c0 * ps
            right = spec.origin_x + c1 * ps
            ring = [(left, bottom), (right, bottom), (right, top), (left, top), (left, bottom)]
            polys.append(PerimeterPolygon([ring], timestamp))
    return polys
