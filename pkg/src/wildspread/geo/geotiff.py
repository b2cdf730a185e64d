"""Minimal GeoTIFF reader.

Supported profile: baseline TIFF (classic, not BigTIFF), either byte order, one
band, no compression, strip organization, uint8 / uint16 / float32 samples, north-up
georeferencing via ModelPixelScaleTag + ModelTiepointTag. Anything else is
rejected with :class:`UnsupportedTiffFeature` rather than read approximately.
"""

from __future__ import annotations

import struct

import numpy as np

from .grid import GridSpec, RasterGrid

TAG_IMAGE_WIDTH = 256
TAG_IMAGE_LENGTH = 257
TAG_BITS_PER_SAMPLE = 258
TAG_COMPRESSION = 259
TAG_STRIP_OFFSETS = 273
TAG_SAMPLES_PER_PIXEL = 277
TAG_ROWS_PER_STRIP = 278
TAG_STRIP_BYTE_COUNTS = 279
TAG_PLANAR_CONFIG = 284
TAG_TILE_WIDTH = 322
TAG_TILE_LENGTH = 323
TAG_TILE_OFFSETS = 324
TAG_TILE_BYTE_COUNTS = 325
TAG_SAMPLE_FORMAT = 339
TAG_MODEL_PIXEL_SCALE = 33550
TAG_MODEL_TIEPOINT = 33922
TAG_MODEL_TRANSFORMATION = 34264
TAG_GEO_KEY_DIRECTORY = 34735
TAG_GDAL_NODATA = 42113

# TIFF field type -> (struct code, size)
_FIELD_TYPES = {
    1: ("B", 1),   # BYTE
    2: ("c", 1),   # ASCII
    3: ("H", 2),   # SHORT
    4: ("I", 4),   # LONG
    5: ("II", 8),  # RATIONAL
    6: ("b", 1),   # SBYTE
    7: ("B", 1),   # UNDEFINED
    8: ("h", 2),   # SSHORT
    9: ("i", 4),   # SLONG
    10: ("ii", 8), # SRATIONAL
    11: ("f", 4),  # FLOAT
    12: ("d", 8),  # DOUBLE
}

GEOKEY_RASTER_TYPE = 1025
GEOKEY_PROJECTED_CS_TYPE = 3072
RASTER_PIXEL_IS_POINT = 2


class TiffError(ValueError):
    pass


class UnsupportedTiffFeature(TiffError):
    def __init__(self, feature, detail=""):
        self.feature = feature
        msg = f"unsupported TIFF feature: {feature}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


def _read_ifd(data: bytes, offset: int, bo: str) -> dict:
    if offset + 2 > len(data):
        raise TiffError("IFD offset beyond end of file")
    (count,) = struct.unpack_from(bo + "H", data, offset)
    tags = {}
    for i in range(count):
        entry = offset + 2 + 12 * i
        if entry + 12 > len(data):
            raise TiffError("truncated IFD")
        tag, ftype, n = struct.unpack_from(bo + "HHI", data, entry)
        if ftype not in _FIELD_TYPES:
            continue
        code, size = _FIELD_TYPES[ftype]
        nbytes = size * n
        if nbytes <= 4:
            start = entry + 8
        else:
            (start,) = struct.unpack_from(bo + "I", data, entry + 8)
        if start + nbytes > len(data):
            raise TiffError(f"tag {tag} data beyond end of file")
        raw = data[start:start + nbytes]
        if ftype == 2:
            tags[tag] = raw.split(b"\x00", 1)[0].decode("ascii", "replace")
        elif ftype in (5, 10):
            vals = struct.unpack(bo + code[0] * (2 * n), raw)
            tags[tag] = tuple(vals[k] / vals[k + 1] for k in range(0, len(vals), 2))
        else:
            tags[tag] = struct.unpack(bo + code * n, raw)
    (next_ifd,) = struct.unpack_from(bo + "I", data, offset + 2 + 12 * count)
    tags["_next_ifd"] = next_ifd
    return tags


def _scalar(tags, tag, default=None):
    if tag not in tags:
        if default is None:
            raise TiffError(f"missing required tag {tag}")
        return default
    vals = tags[tag]
    if len(vals) != 1:
        raise UnsupportedTiffFeature("multi-valued tag", f"tag {tag} has {len(vals)} values")
    return vals[0]


def _geokeys(tags) -> dict:
    raw = tags.get(TAG_GEO_KEY_DIRECTORY)
    if not raw or len(raw) < 4:
        return {}
    n = raw[3]
    keys = {}
    for k in range(n):
        key_id, location, count, value = raw[4 + 4 * k: 8 + 4 * k]
        if location == 0:
            keys[key_id] = value
    return keys


def parse_geotiff_minimal(data: bytes, crs_tag: str | None = None) -> RasterGrid:
    """Decode a single-band uncompressed strip GeoTIFF into a RasterGrid.

    ``crs_tag`` overrides the tag derived from ProjectedCSTypeGeoKey ("EPSG:<code>").
    """
    data = bytes(data)
    if len(data) < 8:
        raise TiffError("file too short for a TIFF header")
    if data[:2] == b"II":
        bo = "<"
    elif data[:2] == b"MM":
        bo = ">"
    else:
        raise TiffError("bad byte-order mark")
    (magic,) = struct.unpack_from(bo + "H", data, 2)
    if magic == 43:
        raise UnsupportedTiffFeature("BigTIFF")
    if magic != 42:
        raise TiffError(f"bad TIFF magic {magic}")
    (ifd_offset,) = struct.unpack_from(bo + "I", data, 4)
    tags = _read_ifd(data, ifd_offset, bo)

    width = _scalar(tags, TAG_IMAGE_WIDTH)
    height = _scalar(tags, TAG_IMAGE_LENGTH)

    compression = _scalar(tags, TAG_COMPRESSION, 1)
    if compression != 1:
        raise UnsupportedTiffFeature("compression", f"Compression={compression}")
    if any(t in tags for t in (TAG_TILE_WIDTH, TAG_TILE_LENGTH, TAG_TILE_OFFSETS, TAG_TILE_BYTE_COUNTS)):
        raise UnsupportedTiffFeature("tiled layout")
    spp = _scalar(tags, TAG_SAMPLES_PER_PIXEL, 1)
    if spp != 1:
        raise UnsupportedTiffFeature("multi-band", f"SamplesPerPixel={spp}")
    if _scalar(tags, TAG_PLANAR_CONFIG, 1) != 1:
        raise UnsupportedTiffFeature("planar configuration")

    bits = _scalar(tags, TAG_BITS_PER_SAMPLE, 1)
    fmt = _scalar(tags, TAG_SAMPLE_FORMAT, 1)
    if (fmt, bits) == (1, 8):
        dtype = np.dtype("u1")
    elif (fmt, bits) == (1, 16):
        dtype = np.dtype(bo + "u2")
    elif (fmt, bits) == (3, 32):
        dtype = np.dtype(bo + "f4")
    else:
        raise UnsupportedTiffFeature("sample type", f"SampleFormat={fmt}, BitsPerSample={bits}")

    if TAG_MODEL_TRANSFORMATION in tags:
        raise UnsupportedTiffFeature("ModelTransformationTag")
    if TAG_MODEL_PIXEL_SCALE not in tags or TAG_MODEL_TIEPOINT not in tags:
        raise UnsupportedTiffFeature("missing geotags", "ModelPixelScaleTag and ModelTiepointTag are required")
    scale = tags[TAG_MODEL_PIXEL_SCALE]
    tie = tags[TAG_MODEL_TIEPOINT]
    if len(tie) != 6:
        raise UnsupportedTiffFeature("multiple tiepoints")
    sx, sy = scale[0], scale[1]
    if sx <= 0 or sy <= 0 or sx != sy:
        raise UnsupportedTiffFeature("non-square or non-north-up pixels", f"scale=({sx}, {sy})")
    i, j, _, x, y, _ = tie
    origin_x = x - i * sx
    origin_y = y + j * sy
    geokeys = _geokeys(tags)
    if geokeys.get(GEOKEY_RASTER_TYPE) == RASTER_PIXEL_IS_POINT:
        origin_x -= 0.5 * sx
        origin_y += 0.5 * sy
    if crs_tag is None:
        epsg = geokeys.get(GEOKEY_PROJECTED_CS_TYPE)
        crs_tag = f"EPSG:{epsg}" if epsg else ""

    offsets = tags.get(TAG_STRIP_OFFSETS)
    counts = tags.get(TAG_STRIP_BYTE_COUNTS)
    if offsets is None or counts is None:
        raise TiffError("missing strip offsets or byte counts")
    if len(offsets) != len(counts):
        raise TiffError("strip offset/byte-count length mismatch")
    rows_per_strip = _scalar(tags, TAG_ROWS_PER_STRIP, height)
    rows_per_strip = min(rows_per_strip, height)
    n_strips = -(-height // rows_per_strip)
    if len(offsets) != n_strips:
        raise TiffError(f"expected {n_strips} strips, found {len(offsets)}")

    row_bytes = width * dtype.itemsize
    buf = bytearray()
    for k, (off, cnt) in enumerate(zip(offsets, counts)):
        rows = min(rows_per_strip, height - k * rows_per_strip)
        need = rows * row_bytes
        if cnt < need or off + need > len(data):
            raise TiffError(f"strip {k} is truncated")
        buf += data[off:off + need]
    values = np.frombuffer(bytes(buf), dtype=dtype).reshape(height, width).astype(np.float64)

    nodata = None
    if TAG_GDAL_NODATA in tags:
        try:
            nodata = float(tags[TAG_GDAL_NODATA].strip())
        except ValueError:
            raise TiffError(f"unparseable GDAL_NODATA {tags[TAG_GDAL_NODATA]!r}") from None

    spec = GridSpec(origin_x, origin_y, width, height, sx, crs_tag)
    return RasterGrid(spec, values, nodata)


def read_geotiff(path, crs_tag: str | None = None) -> RasterGrid:
    with open(path, "rb") as fh:
        return parse_geotiff_minimal(fh.read(), crs_tag=crs_tag)
