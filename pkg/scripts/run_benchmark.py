"""Paired benchmark: baseline vs CCNS-only vs MDNS-only vs both, plus the baseline noise sweep.

Usage: python scripts/run_benchmark.py [--config FILE] [--seed N] [--out DIR]
"""

import argparse
import json
from pathlib import Path

from noisyfss.harness.benchmark import benchmark
from noisyfss.harness.config import load_config


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--config")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out", default="runs/benchmark")
    args = parser.parse_args()
    cfg = load_config(args.config, seed=args.seed)
    summary = benchmark(cfg, Path(args.out))
    print(summary["table"])
    print(json.dumps({k: v for k, v in summary.items() if k != "table"}, indent=2))


if __name__ == "__main__":
    main()
