"""Reading and writing ESRI ASCII grids.

Header keys (case-insensitive): ncols, nrows, xllcorner, yllcorner, cellsize and an
optional NODATA_value. The body lists nrows x ncols numbers, north row first.
"""

from __future__ import annotations

import io
import math
import os

import numpy as np

from .grid import GridSpec, RasterGrid

_REQUIRED = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize")
_OPTIONAL = ("nodata_value",)


class AsciiGridError(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


def _parse_number(token, line):
    try:
        return float(token)
    except ValueError:
        raise AsciiGridError(f"non-numeric token {token!r}", line) from None


def parse_ascii_grid(text, crs_tag: str = "") -> RasterGrid:
    """Parse ESRI ASCII grid text (a string or text stream) into a RasterGrid.

    The lower-left corner in the header becomes the top-left origin
    ``(xllcorner, yllcorner + nrows * cellsize)``.
    """
    if not isinstance(text, str):
        text = text.read()
    lines = text.splitlines()

    header = {}
    lineno = 0
    while lineno < len(lines):
        raw = lines[lineno].strip()
        if not raw:
            lineno += 1
            continue
        parts = raw.split()
        if not parts[0][0].isalpha():
            break
        key = parts[0].lower()
        if key not in _REQUIRED + _OPTIONAL:
            raise AsciiGridError(f"unknown header key {parts[0]!r}", lineno + 1)
        if key in header:
            raise AsciiGridError(f"duplicate header key {parts[0]!r}", lineno + 1)
        if len(parts) != 2:
            raise AsciiGridError(f"header key {parts[0]!r} needs exactly one value", lineno + 1)
        header[key] = (_parse_number(parts[1], lineno + 1), lineno + 1)
        lineno += 1

    for key in _REQUIRED:
        if key not in header:
            raise AsciiGridError(f"missing header key {key!r}", lineno + 1)

    def as_int(key):
        value, line = header[key]
        if value != int(value) or value < 1:
            raise AsciiGridError(f"{key} must be a positive integer", line)
        return int(value)

    ncols, nrows = as_int("ncols"), as_int("nrows")
    cellsize = header["cellsize"][0]
    if not cellsize > 0:
        raise AsciiGridError("cellsize must be positive", header["cellsize"][1])
    nodata = header["nodata_value"][0] if "nodata_value" in header else None

    expected = ncols * nrows
    values = []
    for i in range(lineno, len(lines)):
        for token in lines[i].split():
            if len(values) == expected:
                raise AsciiGridError(
                    f"wrong value count: more than {expected} values", i + 1
                )
            values.append(_parse_number(token, i + 1))
    if len(values) != expected:
        raise AsciiGridError(
            f"wrong value count: expected {expected}, found {len(values)}", len(lines)
        )

    arr = np.array(values, dtype=np.float64).reshape(nrows, ncols)
    spec = GridSpec(
        origin_x=header["xllcorner"][0],
        origin_y=header["yllcorner"][0] + nrows * cellsize,
        width=ncols,
        height=nrows,
        pixel_size=cellsize,
        crs_tag=crs_tag,
    )
    if nodata is not None:
        bad = ~np.isfinite(arr) & (arr != nodata)
    else:
        bad = ~np.isfinite(arr)
    if bad.any():
        row = int(np.argwhere(bad)[0][0])
        raise AsciiGridError(f"non-finite value in data row {row}")
    return RasterGrid(spec, arr, nodata)


def read_ascii_grid(path, crs_tag: str = "") -> RasterGrid:
    with open(path, "r", encoding="ascii") as fh:
        return parse_ascii_grid(fh.read(), crs_tag=crs_tag)


def format_ascii_grid(grid: RasterGrid, fmt: str = "%.6g") -> str:
    spec = grid.spec
    out = io.StringIO()
    out.write(f"ncols {spec.width}\n")
    out.write(f"nrows {spec.height}\n")
    out.write(f"xllcorner {spec.origin_x!r}\n")
    out.write(f"yllcorner {spec.origin_y - spec.height * spec.pixel_size!r}\n")
    out.write(f"cellsize {spec.pixel_size!r}\n")
    if grid.nodata is not None and not math.isnan(grid.nodata):
        out.write(f"NODATA_value {grid.nodata!r}\n")
    for row in grid.values:
        out.write(" ".join(fmt % v for v in row))
        out.write("\n")
    return out.getvalue()


def write_ascii_grid(grid: RasterGrid, path, fmt: str = "%.6g") -> None:
    """Write ``grid``; values use ``fmt`` (six significant digits by default)."""
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "w", encoding="ascii", newline="\n") as fh:
        fh.write(format_ascii_grid(grid, fmt))
    os.replace(tmp, path)
