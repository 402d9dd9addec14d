"""Core domain types: locations, roads, addresses, and the city gazetteer.

Everything downstream (tiling, QA synthesis, scoring) works against the
immutable CityIndex built here. Street/district name matching is fully
deterministic: a fixed canonicalization (case fold, punctuation strip,
whitespace collapse, street-suffix expansion) defines equality.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional


class IngestError(ValueError):
    """Malformed input file; carries the offending line number when known."""

    def __init__(self, message: str, line: Optional[int] = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


# Fixed street-suffix expansion table. Applied to the final token only so
# that names like "St Clair St" keep their leading "St" intact.
SUFFIX_EXPANSIONS = {
    "st": "street",
    "ave": "avenue",
    "blvd": "boulevard",
    "rd": "road",
    "dr": "drive",
}

_PUNCT_RE = re.compile(r"[^\w\s]+", re.UNICODE)
_WS_RE = re.compile(r"\s+")


def normalize_address(text: str, level: str = "street") -> str:
    """Canonicalize an address string for matching.

    Case-folds, strips punctuation, collapses whitespace, and (for streets)
    expands the trailing suffix abbreviation per SUFFIX_EXPANSIONS.
    Idempotent: normalize(normalize(x)) == normalize(x).
    """
    if not text or not text.strip():
        raise ValueError("empty address text")
    folded = _PUNCT_RE.sub(" ", text.casefold())
    tokens = folded.split()
    if level == "street" and tokens and tokens[-1] in SUFFIX_EXPANSIONS:
        tokens[-1] = SUFFIX_EXPANSIONS[tokens[-1]]
    return " ".join(tokens)


def normalize_text(text: str) -> str:
    """Looser normalization for free-form model output: every abbreviation
    token is expanded, not just the final one. Used for substring matching
    of street names inside sentences."""
    folded = _PUNCT_RE.sub(" ", text.casefold())
    tokens = [SUFFIX_EXPANSIONS.get(t, t) for t in folded.split()]
    return " ".join(tokens)


@dataclass(frozen=True)
class AddressLabel:
    street: str
    district: str

    def __post_init__(self):
        if not self.street or not self.street.strip():
            raise ValueError("empty street in AddressLabel")
        if not self.district or not self.district.strip():
            raise ValueError("empty district in AddressLabel")


@dataclass(frozen=True)
class ViewImage:
    path: str
    heading: float
    width: int = 0
    height: int = 0

    def __post_init__(self):
        if not (0 <= self.heading < 360):
            raise ValueError(f"heading {self.heading} outside [0, 360)")
        if self.width < 0 or self.height < 0:
            raise ValueError("negative image dimensions")


@dataclass(frozen=True)
class Location:
    id: str
    lat: float
    lon: float
    address: AddressLabel
    views: tuple[ViewImage, ...]

    def __post_init__(self):
        if not (-90 <= self.lat <= 90):
            raise ValueError(f"lat {self.lat} outside [-90, 90]")
        if not (-180 <= self.lon <= 180):
            raise ValueError(f"lon {self.lon} outside [-180, 180]")
        if not self.views:
            raise ValueError(f"location {self.id} has no views")
        headings = [v.heading for v in self.views]
        if len(set(headings)) != len(headings):
            raise ValueError(f"location {self.id} has duplicate view headings")


@dataclass(frozen=True)
class Road:
    name: str
    polyline: tuple[tuple[float, float], ...]  # (lon, lat) vertices

    def __post_init__(self):
        if not self.name or not self.name.strip():
            raise ValueError("road with empty name")
        if len(self.polyline) < 2:
            raise ValueError(f"road {self.name!r} needs >= 2 vertices")
        for lon, lat in self.polyline:
            if not (-180 <= lon <= 180) or not (-90 <= lat <= 90):
                raise ValueError(f"road {self.name!r} vertex out of range")


class Gazetteer:
    """Canonical name sets with normalized lookup and mention extraction."""

    def __init__(self, streets: Iterable[str], districts: Iterable[str]):
        self.streets: tuple[str, ...] = tuple(dict.fromkeys(streets))
        self.districts: tuple[str, ...] = tuple(dict.fromkeys(districts))
        self._by_level = {
            "street": {normalize_address(s, "street"): s for s in self.streets},
            "district": {normalize_address(d, "district"): d for d in self.districts},
        }

    def names(self, level: str) -> tuple[str, ...]:
        return self.streets if level == "street" else self.districts

    def lookup(self, text: str, level: str) -> Optional[str]:
        """Canonical name whose normalized form equals normalize(text)."""
        try:
            key = normalize_address(text, level)
        except ValueError:
            return None
        return self._by_level[level].get(key)

    def extract(self, text: str, level: str) -> Optional[str]:
        """Longest gazetteer entry appearing (on word boundaries) inside the
        normalized text, or None."""
        haystack = f" {normalize_text(text)} "
        best = None
        best_len = -1
        for norm, canonical in self._by_level[level].items():
            if f" {norm} " in haystack and len(norm) > best_len:
                best, best_len = canonical, len(norm)
        return best


@dataclass(frozen=True)
class CityIndex:
    city_id: str
    locations: tuple[Location, ...]
    roads: tuple[Road, ...] = ()
    streets: tuple[str, ...] = ()
    districts: tuple[str, ...] = ()

    def gazetteer(self) -> Gazetteer:
        return Gazetteer(self.streets, self.districts)

    def with_roads(self, roads: Iterable[Road]) -> "CityIndex":
        return replace(self, roads=tuple(roads))


def gazetteer_lookup(text: str, level: str, index: CityIndex | Gazetteer) -> Optional[str]:
    gaz = index if isinstance(index, Gazetteer) else index.gazetteer()
    return gaz.lookup(text, level)


def _dedup_canonical(names: Iterable[str], level: str) -> tuple[str, ...]:
    seen: dict[str, str] = {}
    for name in names:
        key = normalize_address(name, level)
        seen.setdefault(key, name)
    return tuple(seen.values())


def ingest_locations(path: str | Path, city_id: Optional[str] = None) -> CityIndex:
    """Read a locations JSONL file into a (road-less) CityIndex.

    One JSON object per line with fields id, lat, lon, district, street,
    views[{path, heading, width?, height?}]. Input order is preserved;
    street/district sets are deduplicated under normalization.
    """
    path = Path(path)
    locations: list[Location] = []
    ids: set[str] = set()
    streets: list[str] = []
    districts: list[str] = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise IngestError(f"invalid JSON: {exc}", line=lineno) from exc
            try:
                loc_id = str(rec["id"])
                if loc_id in ids:
                    raise IngestError(f"duplicate location id {loc_id!r}", line=lineno)
                views = tuple(
                    ViewImage(
                        path=str(v["path"]),
                        heading=float(v["heading"]),
                        width=int(v.get("width", 0)),
                        height=int(v.get("height", 0)),
                    )
                    for v in rec["views"]
                )
                loc = Location(
                    id=loc_id,
                    lat=float(rec["lat"]),
                    lon=float(rec["lon"]),
                    address=AddressLabel(street=rec["street"], district=rec["district"]),
                    views=views,
                )
            except IngestError:
                raise
            except (KeyError, TypeError, ValueError) as exc:
                raise IngestError(str(exc), line=lineno) from exc
            ids.add(loc_id)
            locations.append(loc)
            streets.append(loc.address.street)
            districts.append(loc.address.district)
    return CityIndex(
        city_id=city_id or path.stem,
        locations=tuple(locations),
        streets=_dedup_canonical(streets, "street"),
        districts=_dedup_canonical(districts, "district"),
    )


def ingest_roads(path: str | Path) -> tuple[list[Road], int]:
    """Read named LineStrings from a GeoJSON FeatureCollection.

    Returns (roads, skipped) where skipped counts unnamed features and
    non-LineString geometries.
    """
    path = Path(path)
    try:
        with path.open("r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise IngestError(f"unparsable GeoJSON {path}: {exc}") from exc
    if doc.get("type") != "FeatureCollection":
        raise IngestError(f"{path}: expected FeatureCollection, got {doc.get('type')!r}")
    roads: list[Road] = []
    skipped = 0
    for feature in doc.get("features", []):
        geom = feature.get("geometry") or {}
        name = (feature.get("properties") or {}).get("name")
        if geom.get("type") != "LineString" or not name:
            skipped += 1
            continue
        coords = tuple((float(lon), float(lat)) for lon, lat in geom["coordinates"])
        roads.append(Road(name=str(name), polyline=coords))
    return roads, skipped
