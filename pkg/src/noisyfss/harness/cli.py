"""Command line entry point: ``noisyfss <subcommand> [--config FILE] [--seed N] [--out DIR]``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from ..core import PointCloud, ScaleSpec, SupportShot
from ..mdns import mdns_filter
from .config import ConfigError, load_config
from .evaluate import evaluation_episodes, results_table
from .pipeline import (
    checkpoint,
    load_datasets,
    make_datasets,
    paired_difference,
    run_eval,
    run_pretrain,
    run_train,
    write_datasets,
)
from .train import NumericalError

log = logging.getLogger("noisyfss")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3

FEATURE_COLUMNS = 4  # x, y, z, mask before the feature values


def read_feature_file(features_path, descriptor_path):
    """Per-shot blocks of little-endian float32 rows ``x y z mask f_1 .. f_d``."""
    desc = json.loads(Path(descriptor_path).read_text())
    dim = int(desc["dim"])
    raw = np.frombuffer(Path(features_path).read_bytes(), dtype="<f4")
    shots, feats, offset = [], [], 0
    for i, entry in enumerate(desc["shots"]):
        n = int(entry["n_points"])
        size = n * (FEATURE_COLUMNS + dim)
        if offset + size > raw.size:
            raise ConfigError(f"feature file too short for shot {i}")
        block = raw[offset:offset + size].reshape(n, FEATURE_COLUMNS + dim).astype(np.float64)
        offset += size
        mask = block[:, 3] > 0.5
        declared = int(entry.get("declared_class", 1))
        true = int(entry.get("true_class", declared))
        cloud = PointCloud(block[:, :3], np.zeros((n, 3)), np.where(mask, true, 0))
        shots.append(SupportShot(cloud, mask, declared, true))
        feats.append(block[:, FEATURE_COLUMNS:])
    if offset != raw.size:
        raise ConfigError("feature file has trailing data not described by the descriptor")
    scales = [ScaleSpec(*s) for s in desc.get("scales", [[1, 1, 1], [2, 2, 1]])]
    gammas = [float(g) for g in desc.get("gammas", [3.0, 1.0])]
    return shots, feats, scales, gammas, desc.get("graph_scope", "all")


def write_feature_file(features_path, descriptor_path, shots, feats, scales=((1, 1, 1), (2, 2, 1)), gammas=(3.0, 1.0)):
    blocks, entries = [], []
    for shot, f in zip(shots, feats):
        f = np.asarray(f)
        blocks.append(np.column_stack([shot.cloud.coords, shot.mask.astype(float), f]).astype("<f4").tobytes())
        entries.append({"n_points": len(f), "declared_class": shot.declared_class, "true_class": shot.true_class})
    Path(features_path).write_bytes(b"".join(blocks))
    desc = {"dim": int(np.asarray(feats[0]).shape[1]), "shots": entries, "scales": [list(s) for s in scales],
            "gammas": list(gammas)}
    Path(descriptor_path).write_text(json.dumps(desc, indent=2))


def _out(args, cfg) -> Path:
    out = Path(args.out or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_report(report, out: Path, name: str, label: str):
    report.write(out, name)
    table = results_table({label: {f"{int(100 * report.config['noise_ratio'])}%": report.mean_miou}})
    (out / f"{name}.txt").write_text(table + "\n")
    print(table)


def cmd_gen_data(args, cfg):
    out = _out(args, cfg)
    base, novel = make_datasets(cfg)
    write_datasets(out, base, novel)
    print(f"wrote {len(base.clouds)} base and {len(novel.clouds)} novel scenes to {out}")


def cmd_pretrain(args, cfg):
    out = _out(args, cfg)
    base, _ = load_datasets(cfg, args.data)
    _, info = run_pretrain(cfg, base, out)
    print(f"pretrain loss {info['loss'][-1] if info['loss'] else float('nan'):.4f} "
          f"held-out accuracy {info['held_out_accuracy']:.4f}")


def cmd_train(args, cfg):
    out = _out(args, cfg)
    base, _ = load_datasets(cfg, args.data)
    net = checkpoint(args.checkpoint or out / "pretrained.ckpt")
    _, history = run_train(cfg, net, base, out)
    print(f"trained {len(history)} episodes, final loss {history[-1]['loss']:.4f}" if history else "no episodes")


def cmd_eval(args, cfg):
    out = _out(args, cfg)
    _, novel = load_datasets(cfg, args.data)
    net = checkpoint(args.checkpoint or out / "trained.ckpt")
    report = run_eval(cfg, net, novel)
    _write_report(report, out, "metrics", "mdns" if cfg.use_mdns else "no filter")


def cmd_filter_demo(args, cfg):
    shots, feats, scales, gammas, scope = read_feature_file(args.features, args.descriptor)
    result = mdns_filter(shots, feats, scales, gammas, scope).to_json()
    text = json.dumps(result, indent=2)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    print(text)


ABLATIONS = {
    "R": ("R", [1, 2, 4, 8], True),
    "noise_mix": ("training_ratios", [[0.0], [0.0, 0.2], [0.0, 0.2, 0.4], [0.4]], True),
    "scales": ("mdns_scales", [[[1, 1, 1]], [[1, 1, 1], [2, 2, 1]], [[1, 1, 1], [2, 2, 1], [2, 2, 2]]], False),
}


def cmd_ablate(args, cfg):
    out = _out(args, cfg)
    key, values, needs_training = ABLATIONS[args.sweep]
    base, novel = load_datasets(cfg, args.data)
    pre = checkpoint(args.checkpoint) if args.checkpoint else run_pretrain(cfg, base, out)[0]
    rows, summary = {}, []
    for value in values:
        changes = {key: value}
        if key == "mdns_scales":
            changes["mdns_gammas"] = [3.0 if s == [1, 1, 1] else 1.0 for s in value]
        vcfg = cfg.replace(**changes)
        net = run_train(vcfg, pre.copy(), base)[0] if needs_training else pre
        report = run_eval(vcfg, net, novel, episodes=evaluation_episodes(novel, vcfg))
        rows[f"{key}={value}"] = {f"{int(100 * vcfg.noise_ratio)}%": report.mean_miou}
        summary.append({"value": value, "mean_miou": report.mean_miou, "clean_ratio_after": report.clean_ratio_after})
    (out / f"ablate_{args.sweep}.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    table = results_table(rows, title=f"ablation {args.sweep}")
    (out / f"ablate_{args.sweep}.txt").write_text(table + "\n")
    print(table)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="noisyfss", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="YAML key-value config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory (file for filter-demo)")
        p.add_argument("-v", "--verbose", action="store_true")
        p.set_defaults(func=func)
        return p

    add("gen-data", cmd_gen_data, "generate the synthetic base/novel scene pools")
    for name, func, text in (("pretrain", cmd_pretrain, "supervised pretraining on base classes"),
                             ("train", cmd_train, "episodic training with the combined loss"),
                             ("eval", cmd_eval, "meta-test on novel classes")):
        p = add(name, func, text)
        p.add_argument("--data", help="directory written by gen-data (default: regenerate from the seed)")
        p.add_argument("--checkpoint")
    p = add("filter-demo", cmd_filter_demo, "run the noise filter on a feature file")
    p.add_argument("--features", required=True)
    p.add_argument("--descriptor", required=True)
    p = add("ablate", cmd_ablate, "sweep one setting and report mIoU")
    p.add_argument("--sweep", choices=sorted(ABLATIONS), required=True)
    p.add_argument("--data")
    p.add_argument("--checkpoint", help="pretrained checkpoint (default: pretrain first)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        cfg = load_config(args.config, seed=args.seed)
        args.func(args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
