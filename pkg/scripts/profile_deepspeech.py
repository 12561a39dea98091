#!/usr/bin/env python3
"""Profile the bundled speech topology end to end and print the
per-layer and per-group breakdown (report JSON + CSV land in ./out)."""

import argparse
from pathlib import Path

from ntp import fixture_path
from ntp.cli import main as ntp_main
from ntp.report import parse_report


def run(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--reps", type=int, default=3)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out-dir", default="out")
    args = parser.parse_args(argv)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report_path = out_dir / "deepspeech-report.json"

    code = ntp_main([
        "run", str(fixture_path("deepspeech.xml")),
        "--out", str(report_path), "--csv",
        "--threads", str(args.threads), "--reps", str(args.reps),
        "--warmup", "1", "--seed", str(args.seed),
    ])
    if code != 0:
        return code

    report = parse_report(report_path.read_bytes())
    print("\nper-group summary:")
    for group in report.groups:
        wall_ms = group["wall_ns_median"] / 1e6
        print(f"  {group['name']:<8} wall {wall_ms:8.2f} ms "
              f"({group['percent_wall']:.2f}%)")
    return 0


if __name__ == "__main__":
    raise SystemExit(run())
