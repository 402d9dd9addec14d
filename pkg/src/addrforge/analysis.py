"""Street-probability-distribution analysis over repeated inference runs.

Consumes response transcripts (typically 100 runs per image collected at
temperature 0.8), tallies the street mentioned in each response via the
gazetteer, and emits a GeoJSON overlay highlighting the top-k streets
around the ground-truth point.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .geo_model import Gazetteer, Location, Road

RANK_COLORS = ("red", "orange", "yellow")


@dataclass
class FrequencyMap:
    counts: dict[str, int] = field(default_factory=dict)
    invalid_count: int = 0

    @property
    def total(self) -> int:
        return sum(self.counts.values()) + self.invalid_count


def tally(responses: Sequence[str], gazetteer: Gazetteer) -> FrequencyMap:
    """Resolve each response's street mention; unresolved responses land in
    the invalid tally. counts + invalid always equals len(responses)."""
    if not responses:
        raise ValueError("no responses to tally")
    freq = FrequencyMap()
    for raw in responses:
        street = gazetteer.extract(raw, "street") if raw else None
        if street is None:
            freq.invalid_count += 1
        else:
            freq.counts[street] = freq.counts.get(street, 0) + 1
    return freq


def topk(freq: FrequencyMap, k: int = 3) -> list[tuple[str, int]]:
    """k highest-count streets; ties broken lexicographically."""
    if k < 1:
        raise ValueError("k must be >= 1")
    ranked = sorted(freq.counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return ranked[:k]


def emit_overlay(
    freq: FrequencyMap,
    roads: Sequence[Road],
    truth: Location,
    k: int = 3,
) -> tuple[dict, int]:
    """GeoJSON FeatureCollection: the truth point plus top-k road features
    carrying rank/count/color. Streets without geometry in scope get a
    geometry-less feature; returns (document, warning count)."""
    by_name = {road.name: road for road in roads}
    features: list[dict] = [
        {
            "type": "Feature",
            "geometry": {"type": "Point", "coordinates": [truth.lon, truth.lat]},
            "properties": {
                "role": "truth",
                "street": truth.address.street,
                "district": truth.address.district,
            },
        }
    ]
    warnings = 0
    for rank, (street, count) in enumerate(topk(freq, k), start=1):
        road = by_name.get(street)
        if road is None:
            warnings += 1
            geometry = None
        else:
            geometry = {
                "type": "LineString",
                "coordinates": [[lon, lat] for lon, lat in road.polyline],
            }
        color = RANK_COLORS[rank - 1] if rank <= len(RANK_COLORS) else RANK_COLORS[-1]
        features.append(
            {
                "type": "Feature",
                "geometry": geometry,
                "properties": {"role": "prediction", "street": street,
                               "rank": rank, "count": count, "color": color},
            }
        )
    return {"type": "FeatureCollection", "features": features}, warnings


def build_choice_prompt(streets: Sequence[str]) -> str:
    """List-selection prompt for zero-shot models: enumerate the given
    streets (deduplicated, order preserved) and ask for one."""
    if not streets:
        raise ValueError("empty street list")
    unique = list(dict.fromkeys(streets))
    lines = "\n".join(f"{i}. {name}" for i, name in enumerate(unique, start=1))
    return (
        "Which of the following streets was this street-view photo taken on? "
        "Answer with exactly one street name from the list.\n" + lines
    )


def load_responses(path: str | Path) -> dict[str, list[str]]:
    """Read a responses JSONL ({image id, run index, response}) grouped by
    image id, ordered by run index."""
    grouped: dict[str, list[tuple[int, str]]] = {}
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            grouped.setdefault(rec["id"], []).append((int(rec.get("run", 0)), rec["response"]))
    return {sid: [r for _, r in sorted(runs)] for sid, runs in grouped.items()}


def write_frequency_csv(freqs: dict[str, FrequencyMap], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_id", "street", "count"])
        for sid in sorted(freqs):
            freq = freqs[sid]
            for street, count in sorted(freq.counts.items(), key=lambda kv: (-kv[1], kv[0])):
                writer.writerow([sid, street, count])
            writer.writerow([sid, "<invalid>", freq.invalid_count])
