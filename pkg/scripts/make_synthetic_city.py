#!/usr/bin/env python3
"""Generate a self-contained synthetic city fixture.

Writes locations.jsonl, roads.geojson, street-view PNGs, and a slippy tile
pyramid under the output directory, so the whole pipeline can run without
any real imagery.
"""

import argparse
import json

from addrforge.synthcity import build_synthetic_city


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("out", help="output directory for the fixture tree")
    parser.add_argument("--locations", type=int, default=20)
    parser.add_argument("--views", type=int, default=4)
    parser.add_argument("--streets", type=int, default=6)
    parser.add_argument("--zoom", type=int, default=17)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--city-id", default="synthcity")
    args = parser.parse_args()
    paths = build_synthetic_city(
        args.out,
        n_locations=args.locations,
        n_views=args.views,
        n_streets=args.streets,
        zoom=args.zoom,
        seed=args.seed,
        city_id=args.city_id,
    )
    print(json.dumps({k: str(v) for k, v in paths.items()}, indent=2))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
