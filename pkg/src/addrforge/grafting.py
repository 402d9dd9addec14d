"""Street-view onto satellite compositing, plus the two alternative layouts.

The default "grafted" mode drops the scaled street-view image into the
upper-right corner of the satellite raster through a binary mask; the
occupied fraction of the longer side is the overlap ratio delta in
[0, 0.5]. "stitched" composes the two side by side and pads to square,
"separate" keeps two images.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from PIL import Image

MODES = ("grafted", "stitched", "separate")
PAD_GRAY = (128, 128, 128)


@dataclass(frozen=True)
class GraftSpec:
    mode: str = "grafted"
    delta: float = 0.5
    target_side: int = 336

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not (0.0 <= self.delta <= 0.5):
            raise ValueError(f"delta {self.delta} outside [0, 0.5]")
        if self.target_side <= 0:
            raise ValueError("target_side must be positive")


@dataclass(frozen=True)
class GraftGeometry:
    scale: float
    rect: tuple[int, int, int, int]  # [x0, y0, x1, y1), flush to top-right
    scaled_size: tuple[int, int]  # (width, height) of the resampled street image

    @property
    def empty(self) -> bool:
        x0, y0, x1, y1 = self.rect
        return x1 <= x0 or y1 <= y0

    @property
    def area(self) -> int:
        x0, y0, x1, y1 = self.rect
        return max(0, x1 - x0) * max(0, y1 - y0)


def _round_half_away(x: float) -> int:
    return int(math.floor(x + 0.5)) if x >= 0 else -int(math.floor(-x + 0.5))


def compute_graft_geometry(street_w: int, street_h: int, spec: GraftSpec) -> GraftGeometry:
    """Placement rectangle for the street image inside the target square.

    The street image's longer side scales to round(delta * target_side),
    the shorter side proportionally with the same half-away-from-zero
    rounding. The rectangle is anchored at the top-right corner.
    """
    if street_w <= 0 or street_h <= 0:
        raise ValueError("street image dimensions must be positive")
    longer = max(street_w, street_h)
    scaled_longer = _round_half_away(spec.delta * spec.target_side)
    scale = scaled_longer / longer
    if street_w >= street_h:
        sw = scaled_longer
        sh = _round_half_away(street_h * scale)
    else:
        sh = scaled_longer
        sw = _round_half_away(street_w * scale)
    side = spec.target_side
    return GraftGeometry(scale=scale, rect=(side - sw, 0, side, sh), scaled_size=(sw, sh))


def resample_street(street: Image.Image, size: tuple[int, int]) -> Image.Image:
    """Area-averaging (box) downscale; fixed filter so outputs are
    deterministic across platforms."""
    return street.convert("RGB").resize(size, Image.BOX)


def graft(
    satellite: Image.Image, street: Image.Image, spec: GraftSpec
) -> Image.Image | tuple[Image.Image, Image.Image]:
    """Combine the two views according to the configured mode.

    grafted: pixels inside the placement rect come from the resampled street
    image, everything else from the satellite. stitched: side-by-side at
    equal height, padded below to square with mid-gray, then resized.
    separate: (satellite, street resized to target square) pair.
    """
    side = spec.target_side
    if satellite.size != (side, side):
        raise ValueError(f"satellite must be {side}x{side}, got {satellite.size}")
    satellite = satellite.convert("RGB")
    if spec.mode == "separate":
        return satellite.copy(), resample_street(street, (side, side))
    if spec.mode == "stitched":
        sw = _round_half_away(street.width * side / street.height)
        street_scaled = resample_street(street, (sw, side))
        total_w = side + sw
        canvas = Image.new("RGB", (total_w, max(total_w, side)), PAD_GRAY)
        canvas.paste(satellite, (0, 0))
        canvas.paste(street_scaled, (side, 0))
        return canvas.resize((side, side), Image.BOX)
    geom = compute_graft_geometry(street.width, street.height, spec)
    out = satellite.copy()
    if not geom.empty:
        out.paste(resample_street(street, geom.scaled_size), (geom.rect[0], geom.rect[1]))
    return out
