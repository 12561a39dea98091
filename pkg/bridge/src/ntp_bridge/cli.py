"""ntp-bridge command line.

Exit codes: 0 ok, 1 I/O failure, 2 invalid topology/weights/arguments,
4 framework import failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import BridgeError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ntp-bridge",
        description="Profile an XML topology on PyTorch and emit an "
                    "ntp-report/1 JSON")
    parser.add_argument("--topology", required=True)
    parser.add_argument("--weights", required=True,
                        help="NTPW weight container")
    parser.add_argument("--out", required=True, help="report JSON path")
    parser.add_argument("--batch", type=int, default=None)
    parser.add_argument("--reps", type=int, default=3)
    parser.add_argument("--warmup", type=int, default=1)
    parser.add_argument("--seed", type=int, default=0)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        from .profiler import BridgeConfig, bridge_profile
    except ImportError as exc:
        print(f"error: framework import failed: {exc}", file=sys.stderr)
        return 4
    try:
        payload = bridge_profile(BridgeConfig(
            topology=Path(args.topology), weights=Path(args.weights),
            out=Path(args.out), batch=args.batch, reps=args.reps,
            warmup=args.warmup, seed=args.seed))
    except BridgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    timed = sum(1 for rec in payload["layers"] if rec["in_region"])
    print(f"profiled {timed} layers on {payload['meta']['framework']} "
          f"-> {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
