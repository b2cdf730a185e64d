"""Fire perimeter GeoJSON reading/writing."""

from __future__ import annotations

import json
from datetime import datetime, timezone

import numpy as np

from .grid import GridError, PerimeterPolygon


class PerimeterError(ValueError):
    pass


def parse_timestamp(value: str) -> datetime:
    """ISO-8601 to an aware UTC datetime. Naive values are taken as UTC."""
    if not isinstance(value, str):
        raise ValueError(f"timestamp must be a string, got {type(value).__name__}")
    text = value.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        return ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def format_timestamp(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_perimeter_geojson(text) -> list[PerimeterPolygon]:
    """One PerimeterPolygon per Polygon / MultiPolygon part, sorted by timestamp."""
    if not isinstance(text, (str, bytes)):
        text = text.read()
    doc = json.loads(text)
    if doc.get("type") == "Feature":
        features = [doc]
    elif doc.get("type") == "FeatureCollection":
        features = doc.get("features", [])
    else:
        raise PerimeterError("expected a FeatureCollection or Feature")

    polys = []
    for idx, feat in enumerate(features):
        props = feat.get("properties") or {}
        if "timestamp" not in props:
            raise PerimeterError(f"feature {idx}: missing 'timestamp' property")
        try:
            ts = parse_timestamp(props["timestamp"])
        except ValueError as exc:
            raise PerimeterError(f"feature {idx}: bad timestamp: {exc}") from None
        geom = feat.get("geometry") or {}
        gtype = geom.get("type")
        coords = geom.get("coordinates")
        if gtype == "Polygon":
            parts = [coords]
        elif gtype == "MultiPolygon":
            parts = coords
        else:
            raise PerimeterError(f"feature {idx}: unsupported geometry type {gtype!r}")
        for pidx, rings in enumerate(parts):
            try:
                polys.append(PerimeterPolygon(rings, ts))
            except (GridError, ValueError, TypeError) as exc:
                raise PerimeterError(f"feature {idx}, part {pidx}: {exc}") from None
    # stable sort keeps file order among equal timestamps
    polys.sort(key=lambda p: p.timestamp)
    return polys


def read_perimeter_geojson(path) -> list[PerimeterPolygon]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_perimeter_geojson(fh.read())


def perimeters_to_geojson(polys) -> dict:
    """Group parts with equal timestamps into MultiPolygon features."""
    groups: dict[datetime, list] = {}
    for p in polys:
        groups.setdefault(p.timestamp, []).append(
            [np.asarray(r).tolist() for r in p.rings]
        )
    features = []
    for ts in sorted(groups):
        parts = groups[ts]
        geom = (
            {"type": "Polygon", "coordinates": parts[0]}
            if len(parts) == 1
            else {"type": "MultiPolygon", "coordinates": parts}
        )
        features.append(
            {
                "type": "Feature",
                "properties": {"timestamp": format_timestamp(ts)},
                "geometry": geom,
            }
        )
    return {"type": "FeatureCollection", "features": features}
