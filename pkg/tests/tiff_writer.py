"""Byte-level GeoTIFF writer used as the round-trip oracle for the reader.

Deliberately written without reference to the reader's code paths: it lays out
header, strips and one IFD by hand with ``struct``.
"""

import struct

import numpy as np

_TYPES = {"u1": (1, 8), "u2": (1, 16), "f4": (3, 32)}


def write_geotiff(
    values,
    dtype="f4",
    origin=(0.0, 60.0),
    pixel_size=30.0,
    byteorder="<",
    compression=1,
    rows_per_strip=None,
    samples_per_pixel=1,
    tiled=False,
    geotags=True,
    nodata=None,
    epsg=None,
):
    values = np.asarray(values)
    height, width = values.shape
    fmt_code, bits = _TYPES[dtype]
    bo = byteorder
    arr = values.astype(np.dtype(bo + dtype))
    rows_per_strip = rows_per_strip or height

    strips = []
    for r in range(0, height, rows_per_strip):
        strips.append(arr[r:r + rows_per_strip].tobytes())

    # (tag, type, values)
    SHORT, LONG, DOUBLE, ASCII = 3, 4, 12, 2
    entries = [
        (256, LONG, [width]),
        (257, LONG, [height]),
        (258, SHORT, [bits]),
        (259, SHORT, [compression]),
        (262, SHORT, [1]),
        (273, LONG, [0] * len(strips)),  # patched below
        (277, SHORT, [samples_per_pixel]),
        (278, LONG, [rows_per_strip]),
        (279, LONG, [len(s) for s in strips]),
        (339, SHORT, [fmt_code]),
    ]
    if tiled:
        entries.append((322, LONG, [16]))
        entries.append((323, LONG, [16]))
    if geotags:
        entries.append((33550, DOUBLE, [pixel_size, pixel_size, 0.0]))
        entries.append((33922, DOUBLE, [0.0, 0.0, 0.0, origin[0], origin[1], 0.0]))
    if epsg is not None:
        entries.append((34735, SHORT, [1, 1, 0, 2, 1024, 0, 1, 1, 3072, 0, 1, epsg]))
    if nodata is not None:
        entries.append((42113, ASCII, str(nodata)))
    entries.sort(key=lambda e: e[0])

    sizes = {SHORT: 2, LONG: 4, DOUBLE: 8, ASCII: 1}
    codes = {SHORT: "H", LONG: "I", DOUBLE: "d"}

    header_len = 8
    pixel_len = sum(len(s) for s in strips)
    ifd_offset = header_len + pixel_len
    ifd_offset += ifd_offset % 2
    ifd_len = 2 + 12 * len(entries) + 4
    extra_offset = ifd_offset + ifd_len

    strip_offsets = []
    pos = header_len
    for s in strips:
        strip_offsets.append(pos)
        pos += len(s)

    extra = b""
    ifd = struct.pack(bo + "H", len(entries))
    for tag, typ, vals in entries:
        if tag == 273:
            vals = strip_offsets
        if typ == ASCII:
            payload = vals.encode("ascii") + b"\x00"
            count = len(payload)
        else:
            payload = struct.pack(bo + codes[typ] * len(vals), *vals)
            count = len(vals)
        if len(payload) <= 4:
            field = payload.ljust(4, b"\x00")
        else:
            field = struct.pack(bo + "I", extra_offset + len(extra))
            extra += payload
            if len(extra) % 2:
                extra += b"\x00"
        ifd += struct.pack(bo + "HHI", tag, typ, count) + field
    ifd += struct.pack(bo + "I", 0)

    out = (b"II" if bo == "<" else b"MM") + struct.pack(bo + "HI", 42, ifd_offset)
    out += b"".join(strips)
    out = out.ljust(ifd_offset, b"\x00")
    out += ifd + extra
    return out
