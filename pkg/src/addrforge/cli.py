"""Command-line front end: one subcommand per pipeline stage.

Configuration comes from an optional JSON file (--config or the
ADDRFORGE_CONFIG env var) with flags taking precedence; every run writes a
manifest recording the resolved config hash and seeds next to its outputs.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from PIL import Image

from . import analysis, evaluation, labelgen, qa_forge, tiling
from .geo_model import Gazetteer, ingest_locations, ingest_roads
from .grafting import GraftSpec, graft
from .mock_responder import ErrorModel, generate_predictions, write_predictions

CONFIG_ENV = "ADDRFORGE_CONFIG"


@dataclass
class Config:
    """Resolved run configuration: JSON file values overridden by flags."""

    values: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path: Optional[str], overrides: dict) -> "Config":
        values: dict = {}
        config_path = path or os.environ.get(CONFIG_ENV)
        if config_path:
            values.update(json.loads(Path(config_path).read_text(encoding="utf-8")))
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(values=values)

    def get(self, key: str, default=None):
        return self.values.get(key, default)

    def hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.values, sort_keys=True, default=str).encode("utf-8")
        ).hexdigest()[:16]


def write_run_manifest(out_dir: Path, command: str, config: Config) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "config_hash": config.hash(),
        "config": config.values,
        "seed": config.get("seed"),
    }
    (out_dir / f"run_{command}.json").write_text(
        json.dumps(manifest, indent=2, default=str) + "\n", encoding="utf-8"
    )


def _load_index(config: Config):
    index = ingest_locations(config.get("locations"), city_id=config.get("city_id"))
    roads_path = config.get("roads")
    if roads_path:
        roads, _ = ingest_roads(roads_path)
        index = index.with_roads(roads)
    return index


def cmd_ingest(config: Config) -> int:
    index = _load_index(config)
    summary = {
        "city_id": index.city_id,
        "locations": len(index.locations),
        "images": sum(len(l.views) for l in index.locations),
        "streets": len(index.streets),
        "districts": len(index.districts),
        "roads": len(index.roads),
    }
    out = config.get("out")
    if out:
        out_dir = Path(out)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "index_summary.json").write_text(
            json.dumps(summary, indent=2) + "\n", encoding="utf-8"
        )
        write_run_manifest(out_dir, "ingest", config)
    print(json.dumps(summary, indent=2))
    return 0


def cmd_tiles(config: Config) -> int:
    """Assemble annotated satellite squares (resized to target side) for
    every location."""
    index = _load_index(config)
    zoom = int(config.get("zoom", 17))
    window_px = int(config.get("window_px", 640))
    target = int(config.get("target_side", 336))
    annotate = bool(config.get("annotate", True))
    out_dir = Path(config.get("out"))
    out_dir.mkdir(parents=True, exist_ok=True)
    store = tiling.TileStore(root=Path(config.get("tiles")), zoom=zoom)
    style = tiling.AnnotationStyle(enabled=annotate,
                                   max_labels=int(config.get("max_labels", 8)))

    def one(loc):
        window = tiling.assemble_window((loc.lon, loc.lat), zoom, window_px, store)
        raster = tiling.annotate_streets(window, index.roads, style)
        raster = raster.resize((target, target), Image.BOX)
        path = out_dir / f"{loc.id}.png"
        raster.save(path)
        return path

    jobs = int(config.get("jobs", 1))
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        list(pool.map(one, index.locations))
    write_run_manifest(out_dir, "tiles", config)
    print(f"wrote {len(index.locations)} satellite windows to {out_dir}")
    return 0


def cmd_graft(config: Config) -> int:
    spec = GraftSpec(
        mode=config.get("mode", "grafted"),
        delta=float(config.get("delta", 0.5)),
        target_side=int(config.get("target_side", 336)),
    )
    out_dir = Path(config.get("out"))
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest_rows = []
    if config.get("satellite") and config.get("street"):
        pairs = [(Path(config.get("satellite")), Path(config.get("street")), "single", 0.0)]
    else:
        index = _load_index(config)
        sat_dir = Path(config.get("satellite_dir"))
        pairs = [
            (sat_dir / f"{loc.id}.png", Path(view.path), loc.id, view.heading)
            for loc in index.locations
            for view in loc.views
        ]

    def one(pair):
        sat_path, street_path, loc_id, heading = pair
        satellite = Image.open(sat_path).convert("RGB")
        street = Image.open(street_path).convert("RGB")
        result = graft(satellite, street, spec)
        if spec.mode == "separate":
            sat_out = out_dir / f"{loc_id}_{heading:g}_sat.png"
            street_out = out_dir / f"{loc_id}_{heading:g}_street.png"
            result[0].save(sat_out)
            result[1].save(street_out)
            paths = [str(sat_out), str(street_out)]
        else:
            out_path = out_dir / f"{loc_id}_{heading:g}.png"
            result.save(out_path)
            paths = [str(out_path)]
        return {"location": loc_id, "heading": heading, "delta": spec.delta,
                "mode": spec.mode, "outputs": paths}

    jobs = int(config.get("jobs", 1))
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        manifest_rows = list(pool.map(one, pairs))
    with (out_dir / "graft_manifest.jsonl").open("w", encoding="utf-8") as fh:
        for row in manifest_rows:
            fh.write(json.dumps(row) + "\n")
    write_run_manifest(out_dir, "graft", config)
    print(f"grafted {len(manifest_rows)} images to {out_dir}")
    return 0


def _parse_ratio(text: str) -> tuple[int, int]:
    a, b = text.split(":")
    return int(a), int(b)


def cmd_gen_qa(config: Config) -> int:
    index = _load_index(config)
    seed = int(config.get("seed", 0))
    fractions = tuple(config.get("fractions", (0.7, 0.2, 0.1)))
    split = qa_forge.split_locations(index, fractions=fractions, seed=seed)
    plan = qa_forge.make_plan(index, split)
    view_frac = float(config.get("view_frac", 1.0))
    loc_frac = float(config.get("loc_frac", 1.0))
    if view_frac < 1.0 or loc_frac < 1.0:
        plan = qa_forge.downsample(plan, view_frac, loc_frac, seed=seed)
    ds = qa_forge.forge_dataset(index, plan, seed=seed)
    mix_path = config.get("mix_external")
    if mix_path:
        ratio = _parse_ratio(config.get("mix_ratio", "1:1"))
        external = qa_forge.read_samples(mix_path)
        ds.samples["train"] = qa_forge.mix_external(
            ds.samples["train"], external, ratio, seed=seed
        )
        ds.manifest["mixed_external"] = {"path": str(mix_path), "ratio": list(ratio)}
    out_dir = Path(config.get("out"))
    qa_forge.write_dataset(ds, out_dir)
    write_run_manifest(out_dir, "gen-qa", config)
    print(json.dumps(ds.manifest["counts"], indent=2))
    return 0


def cmd_gen_labels(config: Config) -> int:
    index = _load_index(config)
    endpoint = labelgen.EndpointConfig(
        base_url=config.get("endpoint"),
        model=config.get("model", "default"),
        temperature=float(config.get("temperature", 0.2)),
        max_tokens=int(config.get("max_tokens", 512)),
        max_in_flight=int(config.get("jobs", 4)),
        retry_budget=int(config.get("retries", 3)),
        timeout=float(config.get("timeout", 60.0)),
    )
    grafted_dir = Path(config.get("grafted_dir"))
    prompts = []
    with (grafted_dir / "graft_manifest.jsonl").open("r", encoding="utf-8") as fh:
        rows = [json.loads(line) for line in fh if line.strip()]
    by_id = {loc.id: loc for loc in index.locations}
    for row in rows:
        loc = by_id.get(row["location"])
        if loc is None:
            continue
        sid = f"{index.city_id}/{row['location']}/{row['heading']:g}"
        prompts.append(
            labelgen.build_alignment_prompt(sid, row["outputs"][0], loc.address)
        )
    out_dir = Path(config.get("out"))
    out_dir.mkdir(parents=True, exist_ok=True)
    result = labelgen.run_labelgen(
        endpoint, prompts, out_dir / "alignment.jsonl", out_dir / "audit.jsonl"
    )
    write_run_manifest(out_dir, "gen-labels", config)
    print(
        f"accepted {len(result.accepted)}, rejected {result.rejected}, "
        f"failed {result.failed}, skipped {result.skipped}"
    )
    return 0


def _gazetteers_for(config: Config, gt_path: Path) -> dict[str, Gazetteer]:
    gaz_path = config.get("gazetteer")
    if gaz_path is None:
        candidate = gt_path.parent / "gazetteer.json"
        if candidate.exists():
            gaz_path = candidate
    if gaz_path is None:
        raise FileNotFoundError("no gazetteer.json found; pass --gazetteer")
    doc = json.loads(Path(gaz_path).read_text(encoding="utf-8"))
    return {city: Gazetteer(v["streets"], v["districts"]) for city, v in doc.items()}


def cmd_eval(config: Config) -> int:
    gt_path = Path(config.get("gt"))
    ground_truth = {doc["id"]: doc for doc in qa_forge.read_samples(gt_path)}
    predictions = qa_forge.read_samples(config.get("pred"))
    gazetteers = _gazetteers_for(config, gt_path)
    report = evaluation.evaluate_predictions(predictions, ground_truth, gazetteers)
    print(evaluation.render_report(report))
    out = config.get("out")
    if out:
        out_path = Path(out)
        if out_path.suffix == ".json":
            out_path.parent.mkdir(parents=True, exist_ok=True)
            evaluation.save_report(report, out_path)
        else:
            out_path.mkdir(parents=True, exist_ok=True)
            evaluation.save_report(report, out_path / "report.json")
            write_run_manifest(out_path, "eval", config)
    return 0


def cmd_analyze(config: Config) -> int:
    index = _load_index(config)
    gaz = index.gazetteer()
    responses = analysis.load_responses(config.get("responses"))
    out_dir = Path(config.get("out"))
    out_dir.mkdir(parents=True, exist_ok=True)
    by_id = {f"{index.city_id}/{loc.id}": loc for loc in index.locations}
    by_id.update({loc.id: loc for loc in index.locations})
    freqs = {}
    k = int(config.get("topk", 3))
    for sid, texts in responses.items():
        freq = analysis.tally(texts, gaz)
        freqs[sid] = freq
        loc = by_id.get(sid) or by_id.get(sid.split("/")[-2] if "/" in sid else sid)
        if loc is None:
            continue
        overlay, _ = analysis.emit_overlay(freq, index.roads, loc, k=k)
        safe = sid.replace("/", "_")
        (out_dir / f"{safe}.geojson").write_text(
            json.dumps(overlay, indent=2) + "\n", encoding="utf-8"
        )
    analysis.write_frequency_csv(freqs, out_dir / "frequencies.csv")
    write_run_manifest(out_dir, "analyze", config)
    print(f"analyzed {len(freqs)} images into {out_dir}")
    return 0


def cmd_mock(config: Config) -> int:
    samples = qa_forge.read_samples(config.get("gt"))
    gt_path = Path(config.get("gt"))
    gazetteers = _gazetteers_for(config, gt_path)
    # pools over all cities in the ground truth
    streets, districts = [], []
    for gaz in gazetteers.values():
        streets.extend(gaz.streets)
        districts.extend(gaz.districts)
    model = ErrorModel.uniform(float(config.get("error_rate", 0.0)),
                               seed=int(config.get("seed", 0)))
    records = generate_predictions(
        samples, {"street": streets, "district": districts}, model
    )
    out_path = Path(config.get("out"))
    out_path.parent.mkdir(parents=True, exist_ok=True)
    write_predictions(records, out_path)
    print(f"wrote {len(records)} mock predictions to {out_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="addrforge")
    parser.add_argument("--config", help=f"JSON config file (or ${CONFIG_ENV})")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *names):
        if "locations" in names:
            p.add_argument("--locations")
            p.add_argument("--roads")
            p.add_argument("--city-id", dest="city_id")
        if "out" in names:
            p.add_argument("--out")
        if "seed" in names:
            p.add_argument("--seed", type=int)
        if "jobs" in names:
            p.add_argument("--jobs", type=int)

    p = sub.add_parser("ingest", help="read locations/roads and summarize the index")
    common(p, "locations", "out")

    p = sub.add_parser("tiles", help="assemble annotated satellite windows")
    common(p, "locations", "out", "jobs")
    p.add_argument("--tiles")
    p.add_argument("--zoom", type=int)
    p.add_argument("--window-px", dest="window_px", type=int)
    p.add_argument("--target-side", dest="target_side", type=int)
    p.add_argument("--annotate", dest="annotate", action="store_true", default=None)
    p.add_argument("--no-annotate", dest="annotate", action="store_false")
    p.add_argument("--max-labels", dest="max_labels", type=int)

    p = sub.add_parser("graft", help="composite street views onto satellite squares")
    common(p, "locations", "out", "jobs")
    p.add_argument("--satellite")
    p.add_argument("--street")
    p.add_argument("--satellite-dir", dest="satellite_dir")
    p.add_argument("--delta", type=float)
    p.add_argument("--mode", choices=["grafted", "stitched", "separate"])
    p.add_argument("--target-side", dest="target_side", type=int)

    p = sub.add_parser("gen-qa", help="synthesize VQA conversations and splits")
    common(p, "locations", "out", "seed")
    p.add_argument("--view-frac", dest="view_frac", type=float)
    p.add_argument("--loc-frac", dest="loc_frac", type=float)
    p.add_argument("--mix-external", dest="mix_external")
    p.add_argument("--mix-ratio", dest="mix_ratio")

    p = sub.add_parser("gen-labels", help="generate alignment labels via a chat endpoint")
    common(p, "locations", "out", "jobs")
    p.add_argument("--grafted-dir", dest="grafted_dir")
    p.add_argument("--endpoint")
    p.add_argument("--model")
    p.add_argument("--temperature", type=float)
    p.add_argument("--retries", type=int)

    p = sub.add_parser("eval", help="score predictions and print the metric table")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--gazetteer")
    p.add_argument("--out")

    p = sub.add_parser("analyze", help="street frequency tallies and GeoJSON overlays")
    common(p, "locations", "out")
    p.add_argument("--responses")
    p.add_argument("--topk", type=int)

    p = sub.add_parser("mock", help="emit seeded mock predictions for a test set")
    p.add_argument("--gt", required=True)
    p.add_argument("--gazetteer")
    p.add_argument("--error-rate", dest="error_rate", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)

    return parser


COMMANDS = {
    "ingest": cmd_ingest,
    "tiles": cmd_tiles,
    "graft": cmd_graft,
    "gen-qa": cmd_gen_qa,
    "gen-labels": cmd_gen_labels,
    "eval": cmd_eval,
    "analyze": cmd_analyze,
    "mock": cmd_mock,
}


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    overrides = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    config = Config.load(args.config, overrides)
    try:
        return COMMANDS[args.command](config)
    except (OSError, ValueError, KeyError) as exc:
        print(f"addrforge {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
