#!/usr/bin/env python3
"""Topology-comparison experiment: grow the recurrent layer and watch
its share of the runtime climb. Writes per-variant reports plus a
combined comparison under ./out."""

import argparse
from pathlib import Path

from ntp import fixture_path
from ntp.cli import main as ntp_main


def run(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--values", default="1024,2048,3072",
                        help="comma-separated bilstm node counts")
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--reps", type=int, default=2)
    parser.add_argument("--out-dir", default="out")
    args = parser.parse_args(argv)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return ntp_main([
        "sweep", str(fixture_path("variant_lstm1024.xml")),
        "--param", "bilstm.nodes", "--values", args.values,
        "--threads", str(args.threads), "--reps", str(args.reps),
        "--warmup", "1", "--out-prefix", str(out_dir / "lstm-sweep"),
    ])


if __name__ == "__main__":
    raise SystemExit(run())
