#!/usr/bin/env python3
"""End-to-end desk run on a synthetic city.

Builds the fixture, assembles annotated satellite windows, grafts the
street views, forges the VQA dataset, answers the test split with the
seeded mock responder, and prints the metric table. Everything lands
under one working directory.
"""

import argparse
import time
from pathlib import Path

from addrforge.cli import main as addrforge
from addrforge.synthcity import build_synthetic_city


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("workdir", help="directory for all intermediate outputs")
    parser.add_argument("--locations", type=int, default=20)
    parser.add_argument("--views", type=int, default=4)
    parser.add_argument("--delta", type=float, default=0.5)
    parser.add_argument("--error-rate", type=float, default=0.1)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--jobs", type=int, default=4)
    args = parser.parse_args()

    work = Path(args.workdir)
    started = time.monotonic()
    city = build_synthetic_city(
        work / "city", n_locations=args.locations, n_views=args.views, seed=args.seed
    )
    loc = [
        "--locations", str(city["locations"]),
        "--roads", str(city["roads"]),
        "--city-id", "synthcity",
    ]
    steps = [
        ["tiles", *loc, "--tiles", str(city["tiles"]), "--zoom", str(city["zoom"]),
         "--out", str(work / "sat"), "--jobs", str(args.jobs)],
        ["graft", *loc, "--satellite-dir", str(work / "sat"),
         "--delta", str(args.delta), "--out", str(work / "grafted"),
         "--jobs", str(args.jobs)],
        ["gen-qa", *loc, "--seed", str(args.seed), "--out", str(work / "dataset")],
        ["mock", "--gt", str(work / "dataset" / "test.jsonl"),
         "--error-rate", str(args.error_rate), "--seed", str(args.seed),
         "--out", str(work / "predictions.jsonl")],
        ["eval", "--pred", str(work / "predictions.jsonl"),
         "--gt", str(work / "dataset" / "test.jsonl"),
         "--out", str(work / "report.json")],
    ]
    for step in steps:
        print(f"\n$ addrforge {' '.join(step)}")
        rc = addrforge(step)
        if rc != 0:
            return rc
    print(f"\ndesk run finished in {time.monotonic() - started:.1f}s; "
          f"report at {work / 'report.json'}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
