#!/usr/bin/env python3
"""Run the full two-group crossover experiment with scripted agents and
produce the analysis report.

Equivalent to:
    echogrid simulate --crossover --participants 16 --seed 0 --out-dir out/
    echogrid stats --logs out/logs --out out/analysis.json
"""

import argparse
import sys

from echogrid.cli import main as cli_main


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--participants", type=int, default=16)
    parser.add_argument("--courses", type=int, default=3)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out-dir", default="crossover_out")
    args = parser.parse_args()

    code = cli_main([
        "simulate", "--crossover",
        "--participants", str(args.participants),
        "--courses", str(args.courses),
        "--seed", str(args.seed),
        "--out-dir", args.out_dir,
    ])
    if code != 0:
        return code
    return cli_main([
        "stats", "--logs", f"{args.out_dir}/logs",
        "--out", f"{args.out_dir}/analysis.json",
    ])


if __name__ == "__main__":
    sys.exit(main())
