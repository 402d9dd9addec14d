"""Synthetic city fixtures: locations, roads, view images, and a tile
pyramid with deterministic per-pixel content.

Used by the test suite and the desk-run script; nothing here ships data
anywhere. Tile pixels are a pure function of (zoom, x, y, i, j) so window
assembly can be checked against brute-force per-pixel addressing.
"""

from __future__ import annotations

import json
import math
import random
from pathlib import Path

import numpy as np
from PIL import Image

from .tiling import TILE_SIZE, lonlat_to_world_pixel

STREET_NAMES = (
    "Grant Street",
    "Penn Avenue",
    "Liberty Avenue",
    "Fifth Avenue",
    "Forbes Avenue",
    "Smithfield Street",
    "Wood Street",
    "Butler Street",
)

DISTRICT_NAMES = ("Downtown", "Northside", "Shadyside", "Oakland", "Bloomfield")

BASE_LON = -80.0030556
BASE_LAT = 40.4388611


def synth_tile_array(zoom: int, x: int, y: int, size: int = TILE_SIZE) -> np.ndarray:
    """Deterministic RGB content for one tile."""
    i = np.arange(size, dtype=np.int64)
    jj, ii = np.meshgrid(i, i, indexing="ij")  # jj: row (y), ii: col (x)
    r = (x * 7 + ii + jj // 3) % 256
    g = (y * 11 + jj + ii // 5) % 256
    b = (x + y + zoom + ii * jj) % 256
    return np.stack([r, g, b], axis=-1).astype(np.uint8)


def write_tiles(root: str | Path, zoom: int, x_range: range, y_range: range) -> int:
    """Materialize the synthetic tiles; returns how many were written."""
    root = Path(root)
    n = 0
    for x in x_range:
        tile_dir = root / str(zoom) / str(x)
        tile_dir.mkdir(parents=True, exist_ok=True)
        for y in y_range:
            Image.fromarray(synth_tile_array(zoom, x, y)).save(tile_dir / f"{y}.png")
            n += 1
    return n


def _street_geometry(idx: int, span: float) -> list[tuple[float, float]]:
    """Alternating horizontal/vertical streets on a grid around the base
    point, spaced 0.002 degrees."""
    offset = (idx // 2 - 1) * 0.002
    if idx % 2 == 0:  # horizontal: constant lat
        lat = BASE_LAT + offset
        return [(BASE_LON - span, lat), (BASE_LON + span, lat)]
    lon = BASE_LON + offset
    return [(lon, BASE_LAT - span), (lon, BASE_LAT + span)]


def build_synthetic_city(
    root: str | Path,
    n_locations: int = 20,
    n_views: int = 4,
    n_streets: int = 6,
    zoom: int = 17,
    window_px: int = 640,
    seed: int = 0,
    view_size: tuple[int, int] = (96, 48),
    with_tiles: bool = True,
    city_id: str = "synthcity",
) -> dict:
    """Create a full fixture tree under root.

    Layout: locations.jsonl, roads.geojson, views/*.png, tiles/{z}/{x}/{y}.png.
    Returns a dict of the created paths plus the zoom.
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    rng = random.Random(seed)
    n_streets = min(n_streets, len(STREET_NAMES))
    span = 0.004
    streets = {
        STREET_NAMES[i]: _street_geometry(i, span) for i in range(n_streets)
    }

    views_dir = root / "views"
    views_dir.mkdir(exist_ok=True)
    records = []
    for i in range(n_locations):
        street = STREET_NAMES[i % n_streets]
        (lon0, lat0), (lon1, lat1) = streets[street]
        t = rng.uniform(0.2, 0.8)
        lon = lon0 + t * (lon1 - lon0)
        lat = lat0 + t * (lat1 - lat0)
        district = DISTRICT_NAMES[i % len(DISTRICT_NAMES)]
        views = []
        for v in range(n_views):
            heading = round(v * 360.0 / n_views, 3)
            img_path = views_dir / f"L{i:04d}_{v}.png"
            color = (rng.randrange(256), rng.randrange(256), rng.randrange(256))
            img = Image.new("RGB", view_size, color)
            # a second band so downscales are not a single flat color
            px = np.asarray(img).copy()
            px[: view_size[1] // 2, :, 0] = (color[0] + 97) % 256
            Image.fromarray(px).save(img_path)
            views.append({"path": str(img_path), "heading": heading,
                          "width": view_size[0], "height": view_size[1]})
        records.append(
            {
                "id": f"L{i:04d}",
                "lat": lat,
                "lon": lon,
                "district": district,
                "street": street,
                "views": views,
            }
        )

    locations_path = root / "locations.jsonl"
    with locations_path.open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")

    roads_path = root / "roads.geojson"
    roads_doc = {
        "type": "FeatureCollection",
        "features": [
            {
                "type": "Feature",
                "geometry": {"type": "LineString",
                             "coordinates": [[lon, lat] for lon, lat in coords]},
                "properties": {"name": name},
            }
            for name, coords in streets.items()
        ],
    }
    roads_path.write_text(json.dumps(roads_doc, indent=2) + "\n", encoding="utf-8")

    tiles_root = root / "tiles"
    if with_tiles:
        xs, ys = [], []
        for rec in records:
            px, py = lonlat_to_world_pixel(rec["lon"], rec["lat"], zoom)
            xs.append(px)
            ys.append(py)
        pad = window_px
        x0 = int((min(xs) - pad) // TILE_SIZE)
        x1 = int((max(xs) + pad) // TILE_SIZE)
        y0 = int((min(ys) - pad) // TILE_SIZE)
        y1 = int((max(ys) + pad) // TILE_SIZE)
        write_tiles(tiles_root, zoom, range(x0, x1 + 1), range(y0, y1 + 1))

    return {
        "root": root,
        "city_id": city_id,
        "locations": locations_path,
        "roads": roads_path,
        "tiles": tiles_root,
        "zoom": zoom,
        "window_px": window_px,
    }
