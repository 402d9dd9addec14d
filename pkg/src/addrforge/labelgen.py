"""Alignment label generation against an OpenAI-style chat endpoint.

Prompts carry the ground-truth address between explicit hint markers so
stripping is mechanical; generated reasoning is only accepted when it
mentions the target street, and the stored stage-1 sample never contains
the hint.
"""

from __future__ import annotations

import base64
import hashlib
import json
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import requests

from .geo_model import AddressLabel, normalize_text
from .qa_forge import IMAGE_PLACEHOLDER

HINT_OPEN = "<hint>"
HINT_CLOSE = "</hint>"
_HINT_RE = re.compile(re.escape(HINT_OPEN) + r".*?" + re.escape(HINT_CLOSE), re.DOTALL)

ALIGNMENT_TASK = (
    "This image shows a satellite map with street names marked and a street-view photo "
    "grafted into its upper right corner. Determine on which street the photo was taken "
    "by matching the street-view scene to the annotated map, state the street and "
    "district, and explain the visual evidence for the match."
)


@dataclass(frozen=True)
class AlignmentPrompt:
    sample_id: str
    image_path: str
    label: AddressLabel
    text: str


@dataclass(frozen=True)
class AlignmentLabel:
    reasoning: str
    target: AddressLabel
    source_id: str


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str
    model: str
    temperature: float = 0.2
    max_tokens: int = 512
    max_in_flight: int = 4
    retry_budget: int = 3
    timeout: float = 60.0
    backoff_base: float = 0.5

    def __post_init__(self):
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        if self.retry_budget < 0:
            raise ValueError("retry_budget must be >= 0")


def build_alignment_prompt(
    sample_id: str, image_path: str | Path, label: AddressLabel
) -> AlignmentPrompt:
    """Deterministic hint-carrying prompt for one grafted sample."""
    image_path = Path(image_path)
    if not image_path.exists():
        raise FileNotFoundError(f"grafted image missing: {image_path}")
    text = (
        f"{IMAGE_PLACEHOLDER}\n{ALIGNMENT_TASK} "
        f"{HINT_OPEN}The photo was taken on {label.street} in {label.district}.{HINT_CLOSE}"
    )
    return AlignmentPrompt(
        sample_id=sample_id, image_path=str(image_path), label=label, text=text
    )


def hint_free_text(prompt_text: str) -> str:
    """Prompt with the hint clause removed; this is what gets stored in the
    stage-1 training sample."""
    return _HINT_RE.sub("", prompt_text).rstrip()


class LabelRequestError(RuntimeError):
    pass


def request_label(
    config: EndpointConfig,
    prompt_text: str,
    image_path: str | Path,
    session: Optional[requests.Session] = None,
    sleep: Callable[[float], None] = time.sleep,
) -> str:
    """One chat-completion call with the image attached inline, retried with
    exponential backoff up to the budget."""
    image_bytes = Path(image_path).read_bytes()
    b64 = base64.b64encode(image_bytes).decode("ascii")
    body = {
        "model": config.model,
        "messages": [
            {
                "role": "user",
                "content": [
                    {"type": "text", "text": prompt_text},
                    {
                        "type": "image_url",
                        "image_url": {"url": f"data:image/jpeg;base64,{b64}"},
                    },
                ],
            }
        ],
        "temperature": config.temperature,
        "max_tokens": config.max_tokens,
    }
    url = config.base_url.rstrip("/") + "/chat/completions"
    http = session or requests
    last_error: Optional[Exception] = None
    for attempt in range(config.retry_budget + 1):
        try:
            resp = http.post(url, json=body, timeout=config.timeout)
            resp.raise_for_status()
            return resp.json()["choices"][0]["message"]["content"]
        except (requests.RequestException, KeyError, ValueError) as exc:
            last_error = exc
            if attempt < config.retry_budget:
                sleep(config.backoff_base * (2 ** attempt))
    raise LabelRequestError(f"request failed after {config.retry_budget} retries: {last_error}")


def validate_and_strip(
    raw: str, label: AddressLabel, prompt: AlignmentPrompt
) -> Optional[AlignmentLabel]:
    """Accept iff the canonical street name survives in the reasoning (under
    normalization) and no hint-marker substring does."""
    if HINT_OPEN in raw or HINT_CLOSE in raw:
        return None
    street_norm = normalize_text(label.street)
    if f" {street_norm} " not in f" {normalize_text(raw)} ":
        return None
    return AlignmentLabel(reasoning=raw, target=label, source_id=prompt.sample_id)


@dataclass
class LabelGenResult:
    accepted: list[dict] = field(default_factory=list)  # stage-1 sample dicts
    rejected: int = 0
    failed: int = 0
    skipped: int = 0  # already present from a previous run


def _stage1_sample(prompt: AlignmentPrompt, accepted: AlignmentLabel) -> dict:
    return {
        "id": prompt.sample_id,
        "image": prompt.image_path,
        "conversations": [
            {"from": "human", "value": hint_free_text(prompt.text)},
            {"from": "assistant", "value": accepted.reasoning},
        ],
        "meta": {
            "stage": "alignment",
            "street": accepted.target.street,
            "district": accepted.target.district,
        },
    }


def _existing_ids(path: Path) -> set[str]:
    ids: set[str] = set()
    if path.exists():
        with path.open("r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    ids.add(json.loads(line)["id"])
    return ids


def run_labelgen(
    config: EndpointConfig,
    prompts: Sequence[AlignmentPrompt],
    out_path: str | Path,
    audit_path: str | Path,
    session_factory: Callable[[], requests.Session] = requests.Session,
) -> LabelGenResult:
    """Generate, validate, and store alignment labels for a batch.

    Rejected samples get one regeneration attempt, then are dropped with a
    count. Reruns skip sample ids already present in the output (resume
    safety). Concurrency is bounded by config.max_in_flight; the audit log
    and output are appended under a lock, output sorted by sample id.
    """
    out_path = Path(out_path)
    audit_path = Path(audit_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    audit_path.parent.mkdir(parents=True, exist_ok=True)
    done = _existing_ids(out_path)
    result = LabelGenResult()
    audit_lock = threading.Lock()

    def audit(sample_id: str, prompt_text: str, response: str, verdict: str) -> None:
        entry = {
            "id": sample_id,
            "request_hash": hashlib.sha256(prompt_text.encode("utf-8")).hexdigest(),
            "response": response,
            "verdict": verdict,
        }
        with audit_lock:
            with audit_path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(entry, ensure_ascii=False) + "\n")

    def work(prompt: AlignmentPrompt) -> tuple[str, Optional[dict]]:
        session = session_factory()
        for attempt in ("first", "regen"):
            try:
                raw = request_label(config, prompt.text, prompt.image_path, session=session)
            except LabelRequestError as exc:
                audit(prompt.sample_id, prompt.text, str(exc), "failed")
                return "failed", None
            accepted = validate_and_strip(raw, prompt.label, prompt)
            if accepted is not None:
                audit(prompt.sample_id, prompt.text, raw, "accepted")
                return "accepted", _stage1_sample(prompt, accepted)
            audit(prompt.sample_id, prompt.text, raw, f"rejected-{attempt}")
        return "rejected", None

    todo = [p for p in prompts if p.sample_id not in done]
    result.skipped = len(prompts) - len(todo)
    new_rows: list[dict] = []
    with ThreadPoolExecutor(max_workers=config.max_in_flight) as pool:
        for verdict, row in pool.map(work, todo):
            if verdict == "accepted":
                new_rows.append(row)
            elif verdict == "rejected":
                result.rejected += 1
            else:
                result.failed += 1
    new_rows.sort(key=lambda d: d["id"])
    with out_path.open("a", encoding="utf-8") as fh:
        for row in new_rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")
    result.accepted = new_rows
    return result
