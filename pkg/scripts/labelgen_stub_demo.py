#!/usr/bin/env python3
"""Alignment-label generation demo against an in-process stub endpoint.

Runs the full labelgen loop (hinted prompt, bounded concurrency, validate,
strip, audit, resume-safe output) without a real model: the stub echoes a
caption that mentions the hinted street for most samples and omits it for
a planted fraction, so the accept/reject/regenerate path is exercised.
"""

import argparse
import json
import random
from pathlib import Path

from PIL import Image

from addrforge.geo_model import AddressLabel
from addrforge.labelgen import EndpointConfig, build_alignment_prompt, run_labelgen
from addrforge.mock_responder import StubChatServer, extract_prompt_text


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("out", help="output directory")
    parser.add_argument("--samples", type=int, default=50)
    parser.add_argument("--omit-rate", type=float, default=0.1)
    parser.add_argument("--jobs", type=int, default=4)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    image = out / "grafted_demo.png"
    Image.new("RGB", (336, 336), (52, 86, 40)).save(image)

    rng = random.Random(args.seed)
    prompts = [
        build_alignment_prompt(
            f"demo{i:04d}", image,
            AddressLabel(street=f"Street Number {i}", district="Downtown"),
        )
        for i in range(args.samples)
    ]
    texts = {}
    for p in prompts:
        if rng.random() < args.omit_rate:
            texts[p.text] = "A dense block of rooftops with no readable signage."
        else:
            texts[p.text] = (
                f"The inset street view lines up with {p.label.street}, "
                "running along the top edge of the satellite window."
            )

    with StubChatServer(lambda body: texts[extract_prompt_text(body)]) as stub:
        result = run_labelgen(
            EndpointConfig(
                base_url=stub.base_url, model="stub",
                max_in_flight=args.jobs, backoff_base=0.0, timeout=10.0,
            ),
            prompts,
            out / "alignment.jsonl",
            out / "audit.jsonl",
        )
    print(json.dumps({
        "accepted": len(result.accepted),
        "rejected": result.rejected,
        "failed": result.failed,
        "skipped": result.skipped,
        "output": str(out / "alignment.jsonl"),
        "audit": str(out / "audit.jsonl"),
    }, indent=2))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
