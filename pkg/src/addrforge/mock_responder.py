"""Deterministic mock answerer with seeded error injection.

Closes the eval loop without a model: given forge test samples it emits a
predictions file where each answer is correct with probability 1 - rate
for its (level, qtype) category, in a varied surface form so the parser
and normalizer are exercised, not just the counter. Also provides a stub
chat-completions HTTP server for label-generation tests.
"""

from __future__ import annotations

import json
import random
import threading
import time
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

from .geo_model import SUFFIX_EXPANSIONS
from .qa_forge import LETTERS

_ABBREVIATIONS = {v: k for k, v in SUFFIX_EXPANSIONS.items()}


@dataclass(frozen=True)
class ErrorModel:
    rates: dict[tuple[str, str], float]  # (level, qtype) -> error rate
    seed: int = 0

    def __post_init__(self):
        for key, rate in self.rates.items():
            if not (0.0 <= rate <= 1.0):
                raise ValueError(f"rate {rate} for {key} outside [0, 1]")

    @classmethod
    def uniform(cls, rate: float, seed: int = 0) -> "ErrorModel":
        rates = {
            (level, qtype): rate
            for level in ("district", "street")
            for qtype in ("generation", "judgment", "multiple_choice")
        }
        rates[("combined", "generation")] = rate
        return cls(rates=rates, seed=seed)

    def rate_for(self, level: str, qtype: str) -> float:
        return self.rates.get((level, qtype), 0.0)


def _abbreviate(name: str) -> str:
    tokens = name.split()
    last = tokens[-1].lower()
    if last in _ABBREVIATIONS:
        return " ".join(tokens[:-1] + [_ABBREVIATIONS[last].capitalize()])
    return name


def _name_surface(name: str, level: str, rng: random.Random) -> str:
    form = rng.randrange(3)
    if form == 0:
        return name
    if form == 1:
        return _abbreviate(name) if level == "street" else name
    if level == "street":
        return f"This photo was taken on {name}."
    return f"This photo was taken in the {name} district."


def respond(
    meta: dict,
    pools: dict[str, Sequence[str]],
    model: ErrorModel,
    sample_id: str,
    turn: int,
) -> str:
    """One answer, fully determined by (model seed, sample id, turn).

    Correct answers come in a random surface form (canonical, abbreviated,
    or sentence-embedded); errors are uniformly wrong answers of the right
    shape.
    """
    level = meta["level"]
    qtype = meta["qtype"]
    truth = meta["truth"]
    rng = random.Random(f"{model.seed}|{sample_id}|{turn}")
    wrong = rng.random() < model.rate_for(level, qtype)
    if level == "combined":
        street, district = truth["street"], truth["district"]
        if wrong:
            mode = rng.randrange(3)
            if mode in (0, 2):
                street = _pick_wrong(pools["street"], street, rng, level="street")
            if mode in (1, 2):
                district = _pick_wrong(pools["district"], district, rng, level="district")
        if rng.randrange(2):
            return f"{street}, {district}"
        return f"The image was taken on {street} in {district}."
    if qtype == "generation":
        name = truth["name"]
        if wrong:
            name = _pick_wrong(pools[level], name, rng, level=level)
        return _name_surface(name, level, rng)
    if qtype == "judgment":
        expected = truth["expected"]
        emitted = expected if not wrong else ("no" if expected == "yes" else "yes")
        return rng.choice(("{0}", "{0}.", "{0}, it is" if emitted == "yes" else "{0}, it is not")).format(
            emitted.capitalize()
        )
    if qtype == "multiple_choice":
        letter = truth["letter"]
        if wrong:
            letter = rng.choice([l for l in LETTERS if l != letter])
        return rng.choice(("{0}", "({0})", "Answer: {0}", "The answer is {0}")).format(letter)
    raise ValueError(f"unknown qtype {qtype!r}")


def _pick_wrong(pool: Sequence[str], right: str, rng: random.Random, level: str) -> str:
    candidates = [p for p in pool if p != right]
    if not candidates:
        raise ValueError(f"no wrong answers available at {level} level")
    return rng.choice(candidates)


def generate_predictions(
    samples: Iterable[dict],
    pools: dict[str, Sequence[str]],
    model: ErrorModel,
) -> list[dict]:
    """Predictions records ({id, turn, answer}) for every turn of every
    forge sample; deterministic under the model seed."""
    out: list[dict] = []
    for doc in samples:
        for turn_idx, meta in enumerate(doc["meta"]["turns"]):
            answer = respond(meta, pools, model, doc["id"], turn_idx)
            out.append({"id": doc["id"], "turn": turn_idx, "answer": answer})
    return out


def write_predictions(records: Sequence[dict], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


class StubChatServer:
    """In-process chat-completions stub for exercising the labelgen client.

    responder maps the parsed request body to the text content of the
    reply. fail_first injects that many transport failures (HTTP 500)
    before the first success, counted per distinct request hash. Tracks the
    peak number of concurrently in-flight requests.
    """

    def __init__(
        self,
        responder: Callable[[dict], str],
        fail_first: int = 0,
        latency: float = 0.0,
    ):
        self.responder = responder
        self.latency = latency
        self._fail_budget: dict[str, int] = {}
        self._fail_first = fail_first
        self._lock = threading.Lock()
        self._active = 0
        self.max_in_flight_seen = 0
        self.request_count = 0

        stub = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):  # noqa: N802 (http.server API)
                length = int(self.headers.get("Content-Length", 0))
                body = json.loads(self.rfile.read(length) or b"{}")
                with stub._lock:
                    stub._active += 1
                    stub.request_count += 1
                    stub.max_in_flight_seen = max(stub.max_in_flight_seen, stub._active)
                # the counted in-flight window covers request processing only;
                # it must close before the response is written, otherwise a
                # client can legitimately start its next request while this
                # handler is still unwinding and the counter overcounts
                try:
                    if stub.latency:
                        time.sleep(stub.latency)
                    key = _request_key(body)
                    with stub._lock:
                        remaining = stub._fail_budget.setdefault(key, stub._fail_first)
                        if remaining > 0:
                            stub._fail_budget[key] = remaining - 1
                            fail = True
                        else:
                            fail = False
                    text = None if fail else stub.responder(body)
                finally:
                    with stub._lock:
                        stub._active -= 1
                if fail:
                    self.send_response(500)
                    self.end_headers()
                    return
                payload = json.dumps(
                    {"choices": [{"message": {"content": text}}]}
                ).encode("utf-8")
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(payload)))
                self.end_headers()
                self.wfile.write(payload)

            def log_message(self, *args):  # silence request logging
                pass

        self._server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    @property
    def base_url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}"

    def __enter__(self) -> "StubChatServer":
        self._thread.start()
        return self

    def __exit__(self, *exc) -> None:
        self._server.shutdown()
        self._server.server_close()


def _request_key(body: dict) -> str:
    try:
        content = body["messages"][0]["content"]
        text = next(c["text"] for c in content if c.get("type") == "text")
    except (KeyError, IndexError, StopIteration, TypeError):
        text = json.dumps(body, sort_keys=True)
    return text


def extract_prompt_text(body: dict) -> str:
    """Text part of a chat-completions request body (stub helper)."""
    return _request_key(body)
