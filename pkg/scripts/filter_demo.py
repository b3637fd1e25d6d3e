"""MDNS on hand-made support shots: three clean shots of class 1, two noisy ones.

Writes a feature file and descriptor, runs ``noisyfss filter-demo`` on them and
prints which shots survive.

Usage: python scripts/filter_demo.py [--out DIR] [--seed N]
"""

import argparse
import json
from pathlib import Path

import numpy as np

from noisyfss.core import PointCloud, SupportShot
from noisyfss.harness import cli


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="runs/filter_demo")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    d, m = 32, 64
    directions = np.linalg.qr(rng.normal(size=(d, 3)))[0].T
    shots, feats = [], []
    for true in (1, 1, 2, 1, 3):
        cloud = PointCloud(rng.uniform(size=(m, 3)), np.zeros((m, 3)), np.full(m, true))
        shots.append(SupportShot(cloud, np.ones(m, bool), 1, true))
        feats.append(directions[true - 1] + rng.normal(0, 0.05, (m, d)))
    cli.write_feature_file(out / "features.bin", out / "features.json", shots, feats)
    code = cli.main(["filter-demo", "--features", str(out / "features.bin"),
                     "--descriptor", str(out / "features.json"), "--out", str(out / "result.json")])
    result = json.loads((out / "result.json").read_text())
    print(f"true classes {[s.true_class for s in shots]}, retained shots {result['retained']}")
    return code


if __name__ == "__main__":
    raise SystemExit(main())
