"""Acceptance suite: one test per release criterion, each printing a
single PASS/FAIL line on the real stdout so the outcome survives pytest
capture."""

import json
import math
import random
import sys
import time
from contextlib import contextmanager

import numpy as np
import pytest
from PIL import Image

from addrforge.cli import main
from addrforge.evaluation import (
    ScoredQuestion,
    aggregate,
    evaluate_predictions,
    load_report,
    parse_answer,
    score_question,
)
from addrforge.geo_model import (
    AddressLabel,
    CityIndex,
    Gazetteer,
    Location,
    Road,
    ViewImage,
)
from addrforge.grafting import GraftSpec, compute_graft_geometry, graft, resample_street
from addrforge.labelgen import (
    EndpointConfig,
    HINT_CLOSE,
    HINT_OPEN,
    build_alignment_prompt,
    run_labelgen,
)
from addrforge.mock_responder import (
    ErrorModel,
    StubChatServer,
    extract_prompt_text,
    generate_predictions,
)
from addrforge.analysis import FrequencyMap, emit_overlay, tally, topk
from addrforge.qa_forge import (
    DistractorPools,
    build_conversation,
    forge_dataset,
    make_plan,
    read_samples,
    sample_to_json,
    split_locations,
)
from addrforge.synthcity import build_synthetic_city, synth_tile_array, write_tiles
from addrforge.tiling import TileStore, assemble_window, lonlat_to_world_pixel, world_pixel_to_lonlat


def _emit(capman, line):
    # bypass fd-level capture so the verdict lands on the real stdout
    if capman is not None:
        with capman.global_and_fixture_disabled():
            print(line, flush=True)
    else:
        print(line, file=sys.__stdout__, flush=True)


@pytest.fixture()
def criterion(request):
    capman = request.config.pluginmanager.getplugin("capturemanager")

    @contextmanager
    def _criterion(num, name):
        try:
            yield
        except BaseException:
            _emit(capman, f"ACCEPTANCE {num} ({name}): FAIL")
            raise
        _emit(capman, f"ACCEPTANCE {num} ({name}): PASS")

    return _criterion


def _random_rgb(rng, w, h):
    return Image.fromarray(rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8))


def test_criterion_1_graft_mask_exactness(criterion):
    with criterion(1, "graft mask exactness"):
        start = time.monotonic()
        rng = np.random.default_rng(0)
        py_rng = random.Random(0)
        for i in range(200):
            w = py_rng.randrange(1, 1200)
            h = py_rng.randrange(1, 1200)
            delta = py_rng.uniform(0.0, 0.5)
            satellite = _random_rgb(rng, 336, 336)
            street = _random_rgb(rng, w, h)
            spec = GraftSpec(delta=delta)
            out = np.asarray(graft(satellite, street, spec))
            geom = compute_graft_geometry(w, h, spec)
            sat = np.asarray(satellite)
            # oracle: boolean-mask composition over pixel coordinates
            yy, xx = np.mgrid[0:336, 0:336]
            x0, y0, x1, y1 = geom.rect
            inside = (xx >= x0) & (xx < x1) & (yy >= y0) & (yy < y1)
            canvas = sat.copy()
            if not geom.empty:
                canvas[y0:y1, x0:x1] = np.asarray(
                    resample_street(street, geom.scaled_size)
                )
            expected = np.where(inside[..., None], canvas, sat)
            assert np.array_equal(out, expected)
            if delta == 0.0 or geom.empty:
                assert np.array_equal(out, sat)
        # explicit delta = 0 identity
        satellite = _random_rgb(rng, 336, 336)
        street = _random_rgb(rng, 640, 480)
        out = graft(satellite, street, GraftSpec(delta=0.0))
        assert np.array_equal(np.asarray(out), np.asarray(satellite))
        assert time.monotonic() - start < 30.0


def test_criterion_2_graft_geometry(criterion):
    with criterion(2, "graft geometry"):
        geom = compute_graft_geometry(672, 336, GraftSpec(delta=0.5, target_side=336))
        # arithmetic oracle: 0.5 * 336 = 168 on the long (x) side,
        # 336 * 168/672 = 84 on the short side, flush top-right
        assert geom.rect == (336 - 168, 0, 336, 84)
        side = 336
        slack = (2 * side + 1) / side ** 2
        rng = random.Random(1)
        for _ in range(2000):
            w = rng.randrange(1, 4000)
            h = rng.randrange(1, 4000)
            delta = rng.uniform(0.0, 0.5)
            g = compute_graft_geometry(w, h, GraftSpec(delta=delta))
            assert g.area / side ** 2 <= delta ** 2 + slack


def test_criterion_3_projection_and_window(criterion, tmp_path):
    with criterion(3, "projection round-trip and window assembly"):
        rng = random.Random(2)
        for _ in range(10000):
            lon = rng.uniform(-180, 180)
            lat = rng.uniform(-85, 85)
            zoom = rng.randrange(0, 21)
            px, py = lonlat_to_world_pixel(lon, lat, zoom)
            lon2, lat2 = world_pixel_to_lonlat(px, py, zoom)
            assert abs(lon - lon2) <= 1e-9
            assert abs(lat - lat2) <= 1e-9
        # 3x3 synthetic tile fixture, pixel-exact vs per-pixel addressing
        zoom = 5
        write_tiles(tmp_path, zoom, range(2, 5), range(2, 5))
        store = TileStore(root=tmp_path, zoom=zoom)
        cx, cy = 3 * 256 + 128, 3 * 256 + 128
        lon, lat = world_pixel_to_lonlat(cx, cy, zoom)
        win = assemble_window((lon, lat), zoom, 256, store)
        got = np.asarray(win.image)
        ox, oy = win.origin
        tiles = {}
        for j in range(256):
            for i in range(256):
                wx, wy = ox + i, oy + j
                tx, ty = wx // 256, wy // 256
                if (tx, ty) not in tiles:
                    tiles[(tx, ty)] = synth_tile_array(zoom, tx, ty)
                assert np.array_equal(got[j, i], tiles[(tx, ty)][wy % 256, wx % 256])


def _city_scale_index(n_locations=100, n_views=24):
    streets = [f"Street {c}" for c in "ABCDEFGH"]
    districts = [f"District {c}" for c in "VWXYZ"]
    rng = random.Random(3)
    locations = []
    for i in range(n_locations):
        views = tuple(
            ViewImage(path=f"views/L{i:04d}_{k}.png", heading=k * (360.0 / n_views))
            for k in range(n_views)
        )
        locations.append(
            Location(
                id=f"L{i:04d}",
                lat=40.4 + i * 1e-4,
                lon=-80.0 + i * 1e-4,
                address=AddressLabel(
                    street=rng.choice(streets), district=rng.choice(districts)
                ),
                views=views,
            )
        )
    return CityIndex(
        city_id="ratio",
        locations=tuple(locations),
        streets=tuple(streets),
        districts=tuple(districts),
    )


def test_criterion_4_dataset_arithmetic(criterion):
    with criterion(4, "dataset arithmetic reproduction"):
        start = time.monotonic()
        index = _city_scale_index(100, 24)
        split = split_locations(index, seed=0)
        ds = forge_dataset(index, make_plan(index, split), seed=0)
        counts = ds.manifest["counts"]["train"]
        assert counts["images"] == 70 * 24
        assert counts["questions"] == 3 * counts["images"]
        big_split = split_locations([f"L{i}" for i in range(10586)], seed=0)
        n_train = sum(1 for part in big_split.assignment.values() if part == "train")
        assert n_train == 7410
        assert time.monotonic() - start < 120.0


def test_criterion_5_split_hygiene(criterion):
    with criterion(5, "split hygiene"):
        ids = [f"L{i}" for i in range(211)]
        for seed in range(50):
            split = split_locations(ids, seed=seed)
            parts = {p: set(split.ids(p)) for p in ("train", "val", "test")}
            assert not (parts["train"] & parts["val"])
            assert not (parts["train"] & parts["test"])
            assert not (parts["val"] & parts["test"])
            assert parts["train"] | parts["val"] | parts["test"] == set(ids)
            again = split_locations(ids, seed=seed)
            assert json.dumps(split.assignment, sort_keys=True) == json.dumps(
                again.assignment, sort_keys=True
            )


METRIC_STREETS = [f"Street {c}" for c in "ABCDEFGH"]
METRIC_DISTRICTS = [f"District {c}" for c in "VWXYZ"]


def test_criterion_6_metric_oracle(criterion):
    with criterion(6, "metric oracle"):
        gaz = Gazetteer(METRIC_STREETS, METRIC_DISTRICTS)
        pools = DistractorPools(
            streets=tuple(METRIC_STREETS), districts=tuple(METRIC_DISTRICTS)
        )
        rng = random.Random(1234)
        samples = []
        for i in range(3000):
            truth = AddressLabel(
                street=rng.choice(METRIC_STREETS), district=rng.choice(METRIC_DISTRICTS)
            )
            s = build_conversation(f"acc/s{i:05d}", ["img.png"], "test", truth, pools, rng)
            samples.append(sample_to_json(s))
        total_questions = sum(len(d["meta"]["turns"]) for d in samples)
        assert total_questions >= 10000
        preds = generate_predictions(
            samples,
            {"street": METRIC_STREETS, "district": METRIC_DISTRICTS},
            ErrorModel.uniform(0.25, seed=4),
        )
        gt = {d["id"]: d for d in samples}
        report = evaluate_predictions(preds, gt, {"acc": gaz})
        for level in ("district", "street"):
            for qtype in ("generation", "judgment", "multiple_choice"):
                assert abs(report.category(level, qtype).pct - 75.0) <= 1.5
        assert abs(report.combined.pct - 75.0) <= 1.5
        # 4-question hand fixture: exactly 75.00 micro
        fixture = aggregate(
            [
                ScoredQuestion("district", "generation", True),
                ScoredQuestion("district", "judgment", False),
                ScoredQuestion("street", "generation", True),
                ScoredQuestion("street", "multiple_choice", True),
            ]
        )
        assert fixture.micro_overall() == 75.0
        # A_sd conjunctivity: street-only-correct combined answers score 0
        meta = {
            "qtype": "generation",
            "level": "combined",
            "truth": {"street": "Street A", "district": "District V"},
        }
        street_only = parse_answer("Street A, District W", "generation", gaz, "combined")
        assert not score_question(street_only, meta, gaz)
        both = parse_answer("Street A, District V", "generation", gaz, "combined")
        assert score_question(both, meta, gaz)


PARSER_GAZ = Gazetteer(
    streets=["Grant Street", "Fifth Avenue", "Penn Avenue"],
    districts=["Downtown", "Shadyside", "Oakland"],
)

# (raw, qtype, level, field, expected) hand truth table
PARSER_TABLE = [
    ("Yes.", "judgment", "street", "yesno", "yes"),
    ("no, it is not", "judgment", "street", "yesno", "no"),
    ("I believe the answer is Yes", "judgment", "district", "yesno", "yes"),
    ("NO", "judgment", "district", "yesno", "no"),
    ("Yesterday it was", "judgment", "street", "yesno", None),
    ("definitely", "judgment", "street", "yesno", None),
    ("The answer is (C)", "multiple_choice", "street", "letter", "C"),
    ("B) Fifth Avenue", "multiple_choice", "street", "letter", "B"),
    ("I think A", "multiple_choice", "district", "letter", "A"),
    ("Answer: D", "multiple_choice", "district", "letter", "D"),
    ("a street in the city", "multiple_choice", "street", "letter", None),
    ("Probably E", "multiple_choice", "street", "letter", None),
    ("ABCD", "multiple_choice", "street", "letter", None),
    ("grant st", "generation", "street", "text", "grant st"),
    ("It's Fifth Avenue.", "generation", "street", "text", "It's Fifth Avenue."),
    ("DOWNTOWN", "generation", "district", "text", "DOWNTOWN"),
    ("Grant Street, Downtown", "generation", "combined", "pair", ("Grant Street", "Downtown")),
    ("Taken on Penn Ave in Oakland.", "generation", "combined", "pair", ("Penn Avenue", "Oakland")),
    ("somewhere nice", "generation", "combined", "pair", (None, None)),
    ("The district is Shadyside, street unknown", "generation", "combined", "pair", (None, "Shadyside")),
]


def test_criterion_7_parser_fixture(criterion):
    with criterion(7, "parser fixture"):
        assert len(PARSER_TABLE) == 20
        for raw, qtype, level, field, expected in PARSER_TABLE:
            parsed = parse_answer(raw, qtype, gazetteer=PARSER_GAZ, level=level)
            if field == "yesno":
                assert parsed.yesno == expected, raw
            elif field == "letter":
                assert parsed.letter == expected, raw
            elif field == "text":
                assert parsed.text == expected, raw
            else:
                assert (parsed.street, parsed.district) == expected, raw


def test_criterion_8_label_hygiene(criterion, tmp_path):
    with criterion(8, "label hygiene"):
        image = tmp_path / "grafted.png"
        Image.new("RGB", (336, 336), (30, 60, 90)).save(image)
        prompts = [
            build_alignment_prompt(
                f"s{i:03d}", image,
                AddressLabel(street=f"Street Number {i}", district="Downtown"),
            )
            for i in range(200)
        ]
        omitted = {p.sample_id for p in prompts[::10]}  # 20 of 200 (10%)
        texts = {}
        for p in prompts:
            if p.sample_id in omitted:
                texts[p.text] = "a nondescript urban scene"
            else:
                texts[p.text] = f"The grafted view clearly shows {p.label.street}."

        def responder(body):
            return texts[extract_prompt_text(body)]

        max_in_flight = 4
        with StubChatServer(responder, latency=0.002) as stub:
            result = run_labelgen(
                EndpointConfig(
                    base_url=stub.base_url, model="stub", retry_budget=2,
                    max_in_flight=max_in_flight, backoff_base=0.0, timeout=5.0,
                ),
                prompts,
                tmp_path / "out.jsonl",
                tmp_path / "audit.jsonl",
            )
            assert stub.max_in_flight_seen <= max_in_flight
        assert len(result.accepted) == 180  # acceptance exactly 90%
        assert result.rejected == 20
        emitted = (tmp_path / "out.jsonl").read_text()
        assert HINT_OPEN not in emitted and HINT_CLOSE not in emitted


def test_criterion_9_analysis(criterion):
    with criterion(9, "analysis"):
        gaz_names = [f"Street {chr(65 + i)}" for i in range(10)]
        gaz = Gazetteer(gaz_names, ["Downtown"])
        rng = random.Random(5)
        for _ in range(500):
            names = rng.sample(gaz_names, rng.randrange(1, 10))
            responses = []
            counts = {}
            for name in names:
                c = rng.randrange(1, 20)
                counts[name] = c
                responses.extend([name] * c)
            invalid = rng.randrange(0, 5)
            responses.extend(["gibberish"] * invalid)
            rng.shuffle(responses)
            freq = tally(responses, gaz)
            assert freq.counts == counts
            assert freq.invalid_count == invalid
            assert freq.total == len(responses)
            expected = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:3]
            assert topk(freq, 3) == expected
        # overlay: schema-valid GeoJSON with ranked colors
        truth = Location(
            id="L1", lat=40.44, lon=-80.0,
            address=AddressLabel(street="Street A", district="Downtown"),
            views=(ViewImage(path="v.png", heading=0.0),),
        )
        roads = [
            Road(name=f"Street {c}", polyline=((-80.001, 40.439), (-79.999, 40.441)))
            for c in "ABC"
        ]
        freq = FrequencyMap(counts={"Street A": 50, "Street B": 30, "Street C": 20})
        doc, warnings = emit_overlay(freq, roads, truth, k=3)
        assert warnings == 0
        assert doc["type"] == "FeatureCollection"
        assert all(f["type"] == "Feature" for f in doc["features"])
        assert doc["features"][0]["geometry"]["type"] == "Point"
        preds = doc["features"][1:]
        assert all(f["geometry"]["type"] == "LineString" for f in preds)
        assert [f["properties"]["color"] for f in preds] == ["red", "orange", "yellow"]
        json.dumps(doc)


def test_criterion_10_end_to_end(criterion, tmp_path, capsys):
    with criterion(10, "end-to-end desk run"):
        start = time.monotonic()
        city = build_synthetic_city(tmp_path / "city", n_locations=20, n_views=4, seed=7)
        loc_args = [
            "--locations", str(city["locations"]), "--roads", str(city["roads"]),
            "--city-id", "synthcity",
        ]
        tiles_dir = tmp_path / "sat"
        assert main([
            "tiles", *loc_args, "--tiles", str(city["tiles"]),
            "--zoom", str(city["zoom"]), "--out", str(tiles_dir), "--jobs", "4",
        ]) == 0
        graft_dir = tmp_path / "grafted"
        assert main([
            "graft", *loc_args, "--satellite-dir", str(tiles_dir),
            "--delta", "0.5", "--out", str(graft_dir), "--jobs", "4",
        ]) == 0
        rows = (graft_dir / "graft_manifest.jsonl").read_text().splitlines()
        assert len(rows) == 20 * 4
        ds_dir = tmp_path / "dataset"
        assert main(["gen-qa", *loc_args, "--seed", "0", "--out", str(ds_dir)]) == 0
        pred_path = tmp_path / "pred.jsonl"
        assert main([
            "mock", "--gt", str(ds_dir / "test.jsonl"),
            "--error-rate", "0.1", "--seed", "0", "--out", str(pred_path),
        ]) == 0
        report_path = tmp_path / "report.json"
        assert main([
            "eval", "--pred", str(pred_path), "--gt", str(ds_dir / "test.jsonl"),
            "--out", str(report_path),
        ]) == 0
        report = load_report(report_path)
        # all ten table columns populated
        for level in ("district", "street"):
            for qtype in ("generation", "judgment", "multiple_choice"):
                assert report.category(level, qtype).pct is not None
            assert report.macro_level(level) is not None
        assert report.macro_overall() is not None
        assert report.combined.pct is not None
        assert time.monotonic() - start < 180.0
