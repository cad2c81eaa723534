#!/usr/bin/env python3
"""End-to-end demo: generate the watermark scenario, run the pipeline,
run the untrained-opponent check, and print where the reports landed.

Usage: python scripts/run_watermark_demo.py [workdir] [--seed N] [--n-images N]
"""

import argparse
import json
import sys
from pathlib import Path

from segcompare.cli import main as cli_main


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("workdir", nargs="?", default="watermark_demo")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--n-images", type=int, default=100)
    args = parser.parse_args()

    workdir = Path(args.workdir)
    code = cli_main([
        "scenario", "watermark", "--out", str(workdir),
        "--seed", str(args.seed), "--n-images", str(args.n_images),
    ])
    if code != 0:
        return code

    config = str(workdir / "config.json")
    code = cli_main(["run", "--config", config, "--seed", str(args.seed)])
    if code != 0:
        return code

    code = cli_main([
        "validate", "untrained", "--config", config,
        "--opponent", "builtin-random",
    ])

    summary = json.loads((workdir / "out" / "summary.json").read_text())
    print("\nreports:")
    for name, path in summary["reports"].items():
        print(f"  {name}: {path}")
    print(f"cluster order (imbalance): {summary['cluster_order']}")
    print(f"untrained check exit code: {code}")
    return code


if __name__ == "__main__":
    sys.exit(main())
