"""Run one or all ablation sweeps (R, training noise mix, MDNS scales).

Usage: python scripts/run_ablation.py [--sweep R|noise_mix|scales|all] [--config FILE] [--out DIR]
"""

import argparse
import sys

from noisyfss.harness import cli


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sweep", default="all", choices=["all", *sorted(cli.ABLATIONS)])
    parser.add_argument("--config")
    parser.add_argument("--out", default="runs/ablation")
    args = parser.parse_args()
    extra = ["--config", args.config] if args.config else []
    code = cli.main(["pretrain", "--out", args.out, *extra])
    sweeps = sorted(cli.ABLATIONS) if args.sweep == "all" else [args.sweep]
    for sweep in sweeps:
        if code:
            break
        code = cli.main(["ablate", "--sweep", sweep, "--out", args.out,
                         "--checkpoint", f"{args.out}/pretrained.ckpt", *extra])
    return code


if __name__ == "__main__":
    sys.exit(main())
