"""Web-Mercator math, slippy-tile window assembly, and street-name labels.

Tile layout follows the {root}/{z}/{x}/{y}.png slippy convention with y
counted from the north. All pixel math is done in world-pixel coordinates
(256 * 2^zoom pixels across the whole world).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from PIL import Image, ImageDraw, ImageFont

from .geo_model import Road

TILE_SIZE = 256
MAX_MERCATOR_LAT = 85.05112878
DEFAULT_FILL = (128, 128, 128)


def lonlat_to_world_pixel(lon: float, lat: float, zoom: int) -> tuple[float, float]:
    """Forward spherical-Mercator projection to world pixels at a zoom."""
    if abs(lat) > MAX_MERCATOR_LAT:
        raise ValueError(f"lat {lat} outside Mercator bounds (+-{MAX_MERCATOR_LAT})")
    world = TILE_SIZE * (1 << zoom)
    px = (lon + 180.0) / 360.0 * world
    lat_rad = math.radians(lat)
    py = (1.0 - math.log(math.tan(lat_rad) + 1.0 / math.cos(lat_rad)) / math.pi) / 2.0 * world
    return px, py


def world_pixel_to_lonlat(px: float, py: float, zoom: int) -> tuple[float, float]:
    """Exact inverse of lonlat_to_world_pixel up to float tolerance."""
    world = TILE_SIZE * (1 << zoom)
    if not (0 <= px <= world) or not (0 <= py <= world):
        raise ValueError(f"world pixel ({px}, {py}) out of bounds at zoom {zoom}")
    lon = px / world * 360.0 - 180.0
    n = math.pi * (1.0 - 2.0 * py / world)
    lat = math.degrees(math.atan(math.sinh(n)))
    return lon, lat


@dataclass(frozen=True)
class TileStore:
    root: Path
    zoom: int
    tile_size: int = TILE_SIZE
    fill_color: tuple[int, int, int] = DEFAULT_FILL

    def tile_path(self, x: int, y: int) -> Path:
        return Path(self.root) / str(self.zoom) / str(x) / f"{y}.png"

    def load_tile(self, x: int, y: int) -> Optional[Image.Image]:
        n = 1 << self.zoom
        if not (0 <= x < n and 0 <= y < n):
            return None
        path = self.tile_path(x, y)
        if not path.exists():
            return None
        return Image.open(path).convert("RGB")


@dataclass
class SatelliteWindow:
    image: Image.Image
    center: tuple[float, float]  # (lon, lat)
    zoom: int
    origin: tuple[int, int]  # world-pixel of the window's top-left corner
    missing_tiles: int = 0

    @property
    def side(self) -> int:
        return self.image.width


def assemble_window(
    center: tuple[float, float], zoom: int, window_px: int, store: TileStore
) -> SatelliteWindow:
    """Crop a square window centered on a lon/lat from the tile pyramid.

    Missing tiles are filled with the store fill color and counted; if every
    intersecting tile is missing the assembly fails.
    """
    if window_px <= 0:
        raise ValueError("window_px must be positive")
    lon, lat = center
    cx, cy = lonlat_to_world_pixel(lon, lat, zoom)
    ox = int(round(cx)) - window_px // 2
    oy = int(round(cy)) - window_px // 2
    ts = store.tile_size
    canvas = Image.new("RGB", (window_px, window_px), store.fill_color)
    tx0 = math.floor(ox / ts)
    ty0 = math.floor(oy / ts)
    tx1 = math.floor((ox + window_px - 1) / ts)
    ty1 = math.floor((oy + window_px - 1) / ts)
    missing = 0
    total = 0
    for ty in range(ty0, ty1 + 1):
        for tx in range(tx0, tx1 + 1):
            total += 1
            tile = store.load_tile(tx, ty)
            if tile is None:
                missing += 1
                continue
            canvas.paste(tile, (tx * ts - ox, ty * ts - oy))
    if missing == total:
        raise FileNotFoundError(
            f"no tiles available around ({lon}, {lat}) at zoom {zoom} under {store.root}"
        )
    return SatelliteWindow(
        image=canvas, center=(lon, lat), zoom=zoom, origin=(ox, oy), missing_tiles=missing
    )


@dataclass(frozen=True)
class AnnotationStyle:
    font_size_px: int = 14
    text_color: tuple[int, int, int] = (255, 255, 0)
    halo_color: tuple[int, int, int] = (0, 0, 0)
    halo_width: int = 2
    max_labels: int = 8
    enabled: bool = True

    def __post_init__(self):
        if self.font_size_px < 8:
            raise ValueError("font_size_px must be >= 8")


def _clip_segment(
    p0: tuple[float, float], p1: tuple[float, float], w: float, h: float
) -> Optional[tuple[tuple[float, float], tuple[float, float]]]:
    """Liang-Barsky clip of a segment to the [0,w]x[0,h] box."""
    x0, y0 = p0
    x1, y1 = p1
    dx, dy = x1 - x0, y1 - y0
    t0, t1 = 0.0, 1.0
    for p, q in ((-dx, x0), (dx, w - x0), (-dy, y0), (dy, h - y0)):
        if p == 0:
            if q < 0:
                return None
        else:
            t = q / p
            if p < 0:
                if t > t1:
                    return None
                t0 = max(t0, t)
            else:
                if t < t0:
                    return None
                t1 = min(t1, t)
    return (x0 + t0 * dx, y0 + t0 * dy), (x0 + t1 * dx, y0 + t1 * dy)


@dataclass(frozen=True)
class LabelPlacement:
    name: str
    position: tuple[float, float]  # window pixels, midpoint of longest segment
    in_window_length: float


def _project_road(road: Road, window: SatelliteWindow) -> list[tuple[float, float]]:
    ox, oy = window.origin
    pts = []
    for lon, lat in road.polyline:
        px, py = lonlat_to_world_pixel(lon, lat, window.zoom)
        pts.append((px - ox, py - oy))
    return pts


def select_labels(
    window: SatelliteWindow, roads: Sequence[Road], style: AnnotationStyle
) -> list[LabelPlacement]:
    """Pick up to max_labels roads, longest in-window polyline first, and
    place each label at the midpoint of its longest clipped segment."""
    side = float(window.side)
    placements = []
    for road in roads:
        pts = _project_road(road, window)
        total = 0.0
        best_seg = None
        best_len = 0.0
        for a, b in zip(pts, pts[1:]):
            clipped = _clip_segment(a, b, side, side)
            if clipped is None:
                continue
            (cx0, cy0), (cx1, cy1) = clipped
            seg_len = math.hypot(cx1 - cx0, cy1 - cy0)
            total += seg_len
            if seg_len > best_len:
                best_len = seg_len
                best_seg = clipped
        if total > 0 and best_seg is not None:
            (cx0, cy0), (cx1, cy1) = best_seg
            placements.append(
                LabelPlacement(
                    name=road.name,
                    position=((cx0 + cx1) / 2.0, (cy0 + cy1) / 2.0),
                    in_window_length=total,
                )
            )
    placements.sort(key=lambda p: (-p.in_window_length, p.name))
    return placements[: style.max_labels]


def _load_font(size: int) -> ImageFont.ImageFont | ImageFont.FreeTypeFont:
    try:
        return ImageFont.load_default(size=size)
    except TypeError:  # older Pillow without size kwarg
        return ImageFont.load_default()


def annotate_streets(
    window: SatelliteWindow, roads: Sequence[Road], style: AnnotationStyle
) -> Image.Image:
    """Render street-name labels onto a copy of the window raster.

    With annotation disabled (or no intersecting roads) the output is an
    unmodified copy. Labels are clamped inside the window bounds.
    """
    out = window.image.copy()
    if not style.enabled or not roads:
        return out
    placements = select_labels(window, roads, style)
    if not placements:
        return out
    draw = ImageDraw.Draw(out)
    font = _load_font(style.font_size_px)
    side = window.side
    hw = style.halo_width
    for placement in placements:
        x, y = placement.position
        left, top, right, bottom = draw.textbbox((0, 0), placement.name, font=font)
        tw, th = right - left, bottom - top
        # center on the placement point, then clamp inside the window
        tx = min(max(x - tw / 2.0, hw), side - tw - hw)
        ty = min(max(y - th / 2.0, hw), side - th - hw)
        for ddx in range(-hw, hw + 1):
            for ddy in range(-hw, hw + 1):
                if ddx == 0 and ddy == 0:
                    continue
                draw.text((tx + ddx, ty + ddy), placement.name, font=font, fill=style.halo_color)
        draw.text((tx, ty), placement.name, font=font, fill=style.text_color)
    return out
