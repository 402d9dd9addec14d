"""Multi-turn address-VQA conversation synthesis.

Builds generation / judgment / multiple-choice question turns from a fixed
template bank, assembles per-image conversations for train and test
profiles, splits locations 7:2:1, and supports density down-sampling,
multi-city merging, and external-data mixing.
"""

from __future__ import annotations

import datetime as _dt
import hashlib
import json
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .geo_model import AddressLabel, CityIndex, Location, ViewImage, normalize_address

IMAGE_PLACEHOLDER = "<image>"

DISTRICT_TEMPLATES = (
    "Tell me the district where this image was captured.",
    "I'm curious about the district, where is this?",
    "In which urban district was this photo taken?",
    "Can you identify which district this is?",
    "What district is shown in this photograph?",
    "What major district does the photo fall under?",
    "I'm looking for the name of the district in this photo, can you help?",
    "Can you specify the district shown in this photo?",
    "Which district is depicted in the photo?",
    "What's the name of the district shown in the photo?",
)

STREET_TEMPLATES = (
    "Identify the street in this image, please.",
    "What is the street seen in this picture called?",
    "On which boulevard or street was this taken?",
    "Give me the name of the street that appears in this photograph.",
    "Where was this, can you name the street?",
    "What's the name of the avenue or street captured in this shot?",
    "The street in this image, what is it named?",
    "What's the name of this street shown in the photo?",
    "Can you tell me which road this is?",
    "What thoroughfare is depicted here?",
)

GENERATION_PROMPT = "Answer the question using a single word or phrase."
JUDGMENT_PROMPTS = {
    "street": "Is this image taken on {name}, Yes or No?",
    "district": "Is this image taken in {name}, Yes or No?",
}
MULTIPLE_CHOICE_PROMPT = (
    "Which of the following {kind} correctly represents the location shown in the image? "
    "(A) {a} (B) {b} (C) {c} (D) {d}. Please select the correct option (A/B/C/D)."
)
COMBINED_PROMPT = (
    "What street and district is shown in this photo? Answer with street and district."
)

LETTERS = ("A", "B", "C", "D")


@dataclass(frozen=True)
class QuestionTemplateBank:
    district: tuple[str, ...] = DISTRICT_TEMPLATES
    street: tuple[str, ...] = STREET_TEMPLATES

    def __post_init__(self):
        if len(self.district) != 10 or len(self.street) != 10:
            raise ValueError("template bank needs exactly 10 templates per address type")

    def pick(self, level: str, rng: random.Random) -> str:
        pool = self.district if level == "district" else self.street
        return rng.choice(pool)


DEFAULT_BANK = QuestionTemplateBank()


@dataclass(frozen=True)
class QuestionTurn:
    qtype: str  # generation | judgment | multiple_choice
    level: str  # district | street | combined
    question: str
    answer: str
    truth: dict  # scoring payload, serialized into meta
    options: Optional[tuple[str, ...]] = None


@dataclass(frozen=True)
class ConversationSample:
    id: str
    images: tuple[str, ...]
    turns: tuple[QuestionTurn, ...]
    stage: str = "localization"

    def __post_init__(self):
        if not self.turns:
            raise ValueError("conversation with no turns")
        if not self.images:
            raise ValueError("conversation with no image refs")


def render_question(
    bank: QuestionTemplateBank,
    qtype: str,
    level: str,
    truth: AddressLabel,
    distractors: Sequence[str],
    rng: random.Random,
    judgment_truth: Optional[str] = None,
) -> QuestionTurn:
    """Render one question turn.

    Template chosen uniformly from the 10 for the level; judgment negatives
    drawn uniformly from the distractor pool; multiple-choice options are
    truth plus 3 uniform distractors shuffled over A-D.
    """
    if level == "combined":
        return QuestionTurn(
            qtype="generation",
            level="combined",
            question=COMBINED_PROMPT,
            answer=f"{truth.street}, {truth.district}",
            truth={"street": truth.street, "district": truth.district},
        )
    name = truth.street if level == "street" else truth.district
    base = bank.pick(level, rng)
    if qtype == "generation":
        return QuestionTurn(
            qtype=qtype,
            level=level,
            question=f"{base} {GENERATION_PROMPT}",
            answer=name,
            truth={"name": name},
        )
    if qtype == "judgment":
        expected = judgment_truth or rng.choice(("yes", "no"))
        if expected == "yes":
            candidate = name
        else:
            if not distractors:
                raise ValueError("empty distractor pool for a negative judgment")
            candidate = rng.choice(list(distractors))
        question = f"{base} {JUDGMENT_PROMPTS[level].format(name=candidate)}"
        return QuestionTurn(
            qtype=qtype,
            level=level,
            question=question,
            answer="Yes" if expected == "yes" else "No",
            truth={"expected": expected, "candidate": candidate},
        )
    if qtype == "multiple_choice":
        if len(distractors) < 3:
            raise ValueError("multiple_choice needs at least 3 distractors")
        options = [name] + rng.sample(list(distractors), 3)
        rng.shuffle(options)
        letter = LETTERS[options.index(name)]
        question = f"{base} " + MULTIPLE_CHOICE_PROMPT.format(
            kind="streets" if level == "street" else "districts",
            a=options[0], b=options[1], c=options[2], d=options[3],
        )
        return QuestionTurn(
            qtype=qtype,
            level=level,
            question=question,
            answer=f"({letter}) {name}",
            truth={"letter": letter, "name": name},
            options=tuple(options),
        )
    raise ValueError(f"unknown question type {qtype!r}")


@dataclass(frozen=True)
class DistractorPools:
    streets: tuple[str, ...]
    districts: tuple[str, ...]

    @classmethod
    def from_index(cls, index: CityIndex) -> "DistractorPools":
        return cls(streets=index.streets, districts=index.districts)

    def for_level(self, level: str, truth: AddressLabel) -> list[str]:
        name = truth.street if level == "street" else truth.district
        key = normalize_address(name, level)
        pool = self.streets if level == "street" else self.districts
        return [p for p in pool if normalize_address(p, level) != key]


def build_conversation(
    sample_id: str,
    image_refs: Sequence[str],
    profile: str,
    truth: AddressLabel,
    pools: DistractorPools,
    rng: random.Random,
    bank: QuestionTemplateBank = DEFAULT_BANK,
    stage: str = "localization",
) -> ConversationSample:
    """Assemble the per-image conversation for a profile.

    train: 3 turns (one of each question type, level uniform over
    district/street). test: 9 turns (generation x2 levels, judgment yes+no
    at both levels, multiple-choice x2 levels, one combined turn).
    """
    turns: list[QuestionTurn] = []
    if profile == "train":
        for qtype in ("generation", "judgment", "multiple_choice"):
            level = rng.choice(("district", "street"))
            turns.append(
                render_question(bank, qtype, level, truth, pools.for_level(level, truth), rng)
            )
    elif profile == "test":
        for level in ("district", "street"):
            turns.append(
                render_question(bank, "generation", level, truth, pools.for_level(level, truth), rng)
            )
        for level in ("district", "street"):
            for expected in ("yes", "no"):
                turns.append(
                    render_question(
                        bank, "judgment", level, truth, pools.for_level(level, truth), rng,
                        judgment_truth=expected,
                    )
                )
        for level in ("district", "street"):
            turns.append(
                render_question(
                    bank, "multiple_choice", level, truth, pools.for_level(level, truth), rng
                )
            )
        turns.append(render_question(bank, "generation", "combined", truth, (), rng))
    else:
        raise ValueError(f"unknown profile {profile!r}")
    return ConversationSample(
        id=sample_id, images=tuple(image_refs), turns=tuple(turns), stage=stage
    )


def sample_to_json(sample: ConversationSample) -> dict:
    """Serialize to the conversation JSONL schema. The image placeholder
    appears only in turn 1."""
    conversations = []
    for i, turn in enumerate(sample.turns):
        question = turn.question
        if i == 0:
            placeholder = "".join(f"{IMAGE_PLACEHOLDER}\n" for _ in sample.images)
            question = placeholder + question
        conversations.append({"from": "human", "value": question})
        conversations.append({"from": "assistant", "value": turn.answer})
    doc: dict = {"id": sample.id, "conversations": conversations}
    if len(sample.images) == 1:
        doc["image"] = sample.images[0]
    else:
        doc["images"] = list(sample.images)
    doc["meta"] = {
        "stage": sample.stage,
        "turns": [
            {
                "qtype": t.qtype,
                "level": t.level,
                "truth": t.truth,
                **({"options": list(t.options)} if t.options else {}),
            }
            for t in sample.turns
        ],
    }
    return doc


@dataclass(frozen=True)
class SplitAssignment:
    assignment: dict[str, str]  # location id -> train | val | test
    fractions: tuple[float, float, float]
    seed: int

    def ids(self, part: str) -> list[str]:
        return [lid for lid, p in self.assignment.items() if p == part]


def split_locations(
    index: CityIndex | Sequence[str],
    fractions: tuple[float, float, float] = (0.7, 0.2, 0.1),
    seed: int = 0,
) -> SplitAssignment:
    """Deterministic location-level split: shuffle by seed, then take
    floor(f_train * n) train, floor(f_val * n) val, remainder test."""
    if any(f <= 0 for f in fractions):
        raise ValueError("fractions must be positive")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("fractions must sum to 1")
    ids = [loc.id for loc in index.locations] if isinstance(index, CityIndex) else list(index)
    if len(ids) < 3:
        raise ValueError("need at least 3 locations to split")
    rng = random.Random(seed)
    shuffled = ids[:]
    rng.shuffle(shuffled)
    n = len(shuffled)
    n_train = int(math.floor(fractions[0] * n))
    n_val = int(math.floor(fractions[1] * n))
    assignment: dict[str, str] = {}
    for i, lid in enumerate(shuffled):
        if i < n_train:
            assignment[lid] = "train"
        elif i < n_train + n_val:
            assignment[lid] = "val"
        else:
            assignment[lid] = "test"
    # report in original id order for stable serialization
    ordered = {lid: assignment[lid] for lid in ids}
    return SplitAssignment(assignment=ordered, fractions=tuple(fractions), seed=seed)


@dataclass
class ForgePlan:
    """Per-split list of (location, views to emit)."""

    parts: dict[str, list[tuple[Location, tuple[ViewImage, ...]]]]

    def image_count(self, part: str) -> int:
        return sum(len(views) for _, views in self.parts.get(part, []))


def make_plan(index: CityIndex, split: SplitAssignment) -> ForgePlan:
    parts: dict[str, list[tuple[Location, tuple[ViewImage, ...]]]] = {
        "train": [], "val": [], "test": []
    }
    for loc in index.locations:
        part = split.assignment[loc.id]
        parts[part].append((loc, loc.views))
    return ForgePlan(parts=parts)


def downsample(
    plan: ForgePlan,
    view_fraction: float = 1.0,
    location_fraction: float = 1.0,
    seed: int = 0,
) -> ForgePlan:
    """Thin the train part: keep ceil(location_fraction * n) locations and
    ceil(view_fraction * v) views per surviving location. Val and test are
    untouched."""
    if view_fraction <= 0 or view_fraction > 1:
        raise ValueError("view_fraction must be in (0, 1]")
    if location_fraction <= 0 or location_fraction > 1:
        raise ValueError("location_fraction must be in (0, 1]")
    rng = random.Random(seed)
    train = plan.parts.get("train", [])
    keep_n = math.ceil(location_fraction * len(train))
    kept_idx = sorted(rng.sample(range(len(train)), keep_n)) if train else []
    new_train = []
    for i in kept_idx:
        loc, views = train[i]
        keep_v = math.ceil(view_fraction * len(views))
        view_idx = sorted(rng.sample(range(len(views)), keep_v))
        new_train.append((loc, tuple(views[j] for j in view_idx)))
    parts = dict(plan.parts)
    parts["train"] = new_train
    return ForgePlan(parts=parts)


def _image_seed(global_seed: int, city_id: str, loc_id: str, heading: float) -> str:
    digest = hashlib.sha256(
        f"{global_seed}|{city_id}|{loc_id}|{heading}".encode("utf-8")
    ).hexdigest()
    return digest


@dataclass
class ForgedDataset:
    city_ids: list[str]
    samples: dict[str, list[dict]]  # split name -> JSON-ready sample dicts
    manifest: dict
    gazetteers: dict[str, dict]  # city id -> {"streets": [...], "districts": [...]}


def forge_dataset(
    index: CityIndex,
    plan: ForgePlan,
    seed: int = 0,
    profile_by_part: Optional[dict[str, str]] = None,
    bank: QuestionTemplateBank = DEFAULT_BANK,
    image_override: Optional[dict[tuple[str, float], str]] = None,
) -> ForgedDataset:
    """Emit conversations for every (location, view) in the plan.

    Each image gets its own RNG seeded from (seed, city, location, heading)
    so emission order never changes the output; samples are sorted by id.
    image_override maps (location id, heading) to an image path, e.g. for
    grafted stage-1 imagery.
    """
    profile_by_part = profile_by_part or {"train": "train", "val": "train", "test": "test"}
    pools = DistractorPools.from_index(index)
    samples: dict[str, list[dict]] = {}
    counts: dict[str, dict] = {}
    for part, entries in plan.parts.items():
        profile = profile_by_part[part]
        out = []
        n_questions = 0
        n_images = 0
        for loc, views in entries:
            for view in views:
                sid = f"{index.city_id}/{loc.id}/{view.heading:g}"
                rng = random.Random(_image_seed(seed, index.city_id, loc.id, view.heading))
                image = view.path
                if image_override is not None:
                    image = image_override.get((loc.id, view.heading), image)
                sample = build_conversation(sid, [image], profile, loc.address, pools, rng, bank)
                out.append(sample_to_json(sample))
                n_questions += len(sample.turns)
                n_images += 1
        out.sort(key=lambda d: d["id"])
        samples[part] = out
        counts[part] = {
            "locations": len(entries),
            "images": n_images,
            "questions": n_questions,
        }
    manifest = {
        "city_ids": [index.city_id],
        "counts": counts,
        "profiles": profile_by_part,
        "seed": seed,
        "generated_at": _dt.datetime.now(_dt.timezone.utc).isoformat(),
    }
    gaz = {index.city_id: {"streets": list(index.streets), "districts": list(index.districts)}}
    return ForgedDataset(
        city_ids=[index.city_id], samples=samples, manifest=manifest, gazetteers=gaz
    )


def merge_cities(datasets: Sequence[ForgedDataset]) -> ForgedDataset:
    """Concatenate per-city datasets; ids stay city-prefixed, manifests sum,
    gazetteers stay separate per city."""
    all_cities: list[str] = []
    for ds in datasets:
        for cid in ds.city_ids:
            if cid in all_cities:
                raise ValueError(f"city id collision: {cid!r}")
            all_cities.append(cid)
    samples: dict[str, list[dict]] = {}
    seen_ids: set[str] = set()
    counts: dict[str, dict] = {}
    gazetteers: dict[str, dict] = {}
    for ds in datasets:
        gazetteers.update(ds.gazetteers)
        for part, rows in ds.samples.items():
            for row in rows:
                if row["id"] in seen_ids:
                    raise ValueError(f"sample id collision: {row['id']!r}")
                seen_ids.add(row["id"])
            samples.setdefault(part, []).extend(rows)
            part_counts = counts.setdefault(
                part, {"locations": 0, "images": 0, "questions": 0}
            )
            for key in part_counts:
                part_counts[key] += ds.manifest["counts"].get(part, {}).get(key, 0)
    manifest = {
        "city_ids": all_cities,
        "counts": counts,
        "seed": [ds.manifest.get("seed") for ds in datasets],
        "generated_at": _dt.datetime.now(_dt.timezone.utc).isoformat(),
    }
    return ForgedDataset(
        city_ids=all_cities, samples=samples, manifest=manifest, gazetteers=gazetteers
    )


def validate_sample_schema(doc: dict) -> None:
    """Raise ValueError (with the sample id when available) if a sample dict
    does not follow the conversation schema."""
    sid = doc.get("id", "<missing id>")
    if "id" not in doc:
        raise ValueError("sample without id")
    if ("image" in doc) == ("images" in doc):
        raise ValueError(f"sample {sid}: exactly one of image/images required")
    convs = doc.get("conversations")
    if not isinstance(convs, list) or not convs or len(convs) % 2 != 0:
        raise ValueError(f"sample {sid}: conversations must be a nonempty even-length list")
    for i, msg in enumerate(convs):
        expected = "human" if i % 2 == 0 else "assistant"
        if not isinstance(msg, dict) or msg.get("from") != expected or "value" not in msg:
            raise ValueError(f"sample {sid}: bad conversation entry at index {i}")
    n_images = 1 if "image" in doc else len(doc["images"])
    placeholders_first = convs[0]["value"].count(IMAGE_PLACEHOLDER)
    placeholders_rest = sum(m["value"].count(IMAGE_PLACEHOLDER) for m in convs[1:])
    if placeholders_first != n_images or placeholders_rest != 0:
        raise ValueError(f"sample {sid}: image placeholders must all be in turn 1")


def mix_external(
    samples: Sequence[dict],
    external: Sequence[dict],
    ratio: tuple[int, int],
    seed: int = 0,
) -> list[dict]:
    """Interleave task samples with external samples in a fixed a:b pattern
    (a task then b external per window), so every window of a+b respects the
    ratio. The external stream order is shuffled by seed."""
    a, b = ratio
    if a <= 0 or b <= 0:
        raise ValueError("ratio parts must be positive")
    for doc in external:
        validate_sample_schema(doc)
    rng = random.Random(seed)
    ext = list(external)
    rng.shuffle(ext)
    task = list(samples)
    out: list[dict] = []
    ti = ei = 0
    while ti < len(task) and ei < len(ext):
        take_t = min(a, len(task) - ti)
        out.extend(task[ti:ti + take_t])
        ti += take_t
        take_e = min(b, len(ext) - ei)
        out.extend(ext[ei:ei + take_e])
        ei += take_e
    out.extend(task[ti:])
    out.extend(ext[ei:])
    return out


# Documentation artifact: the fine-tuning hyperparameters the forge's output
# is intended to be consumed with. Emitted alongside manifests; nothing in
# this toolkit trains anything.
TRAINING_CONFIG = {
    "batch_size": "4x8",
    "gradient_accumulation": 16,
    "learning_rate": 1e-5,
    "weight_decay": 0,
    "betas": [0.9, 0.999],
    "warmup_ratio": 0.03,
    "lora_rank": 128,
    "lora_dropout": 0.05,
    "model_max_length": 2048 - (336 // 14) ** 2,
}


def write_dataset(ds: ForgedDataset, out_dir: str | Path) -> dict[str, Path]:
    """Write one JSONL per split plus manifest, gazetteer, and the
    training-config documentation artifact. Returns the written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: dict[str, Path] = {}
    for part, rows in ds.samples.items():
        path = out_dir / f"{part}.jsonl"
        with path.open("w", encoding="utf-8") as fh:
            for row in rows:
                fh.write(json.dumps(row, ensure_ascii=False) + "\n")
        written[part] = path
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(ds.manifest, indent=2) + "\n", encoding="utf-8")
    written["manifest"] = manifest_path
    gaz_path = out_dir / "gazetteer.json"
    gaz_path.write_text(json.dumps(ds.gazetteers, indent=2) + "\n", encoding="utf-8")
    written["gazetteer"] = gaz_path
    tc_path = out_dir / "training_config.json"
    tc_path.write_text(json.dumps(TRAINING_CONFIG, indent=2) + "\n", encoding="utf-8")
    written["training_config"] = tc_path
    return written


def read_samples(path: str | Path) -> list[dict]:
    rows = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows
