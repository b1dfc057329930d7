#!/usr/bin/env python3
"""Latency percentiles for the verification pipeline across token counts.

Times three segments per trace: the eigendecomposition, everything after it
(modal powers through the gate decision), and the full pipeline. The
post-spectral segment is the one a cached-spectrum deployment pays per query.
"""

import argparse
import json
import sys
from pathlib import Path

from sgks.bench import bench_latency

COLUMNS = (
    ("T", "d"),
    ("eig_p50_ms", ".3f"),
    ("eig_p95_ms", ".3f"),
    ("post_p50_ms", ".4f"),
    ("post_p95_ms", ".4f"),
    ("full_p50_ms", ".3f"),
    ("full_p95_ms", ".3f"),
)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument(
        "--grid", default="64,128,256,512",
        help="comma-separated token counts",
    )
    ap.add_argument("--heads", type=int, default=4)
    ap.add_argument("--layers", type=int, default=4)
    ap.add_argument("--repeats", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--json-out", type=Path, default=None)
    args = ap.parse_args(argv)

    try:
        grid = tuple(int(t) for t in args.grid.split(","))
    except ValueError:
        ap.error(f"bad --grid {args.grid!r}")

    rows = bench_latency(
        grid, H=args.heads, n_layers=args.layers, repeats=args.repeats, seed=args.seed
    )
    print("".join(f"{name:>14}" for name, _ in COLUMNS))
    for row in rows:
        print("".join(format(getattr(row, name), fmt).rjust(14) for name, fmt in COLUMNS))

    if args.json_out is not None:
        args.json_out.write_text(
            json.dumps([r.to_dict() for r in rows], indent=2) + "\n", encoding="utf-8"
        )
        print(f"wrote {args.json_out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
