"""Paired end-to-end comparison of the training and filtering components."""

from __future__ import annotations

import json
import time
from pathlib import Path

from .evaluate import evaluation_episodes, results_table
from .pipeline import make_datasets, paired_difference, run_eval, run_pretrain, run_train

VARIANTS = {("baseline", False): "baseline", ("ccns", False): "ccns_only",
            ("baseline", True): "mdns_only", ("ccns", True): "ccns_mdns"}


def benchmark(cfg, out: Path | None = None) -> dict:
    start = time.perf_counter()
    base, novel = make_datasets(cfg)
    pre, info = run_pretrain(cfg, base, out)
    models = {}
    for name, lam in (("baseline", 0.0), ("ccns", cfg.lam)):
        models[name] = run_train(cfg.replace(lam=lam), pre.copy(), base, out, name=f"trained_{name}")[0]

    reports, rows = {}, {}
    for ratio in (0.0, 0.2, 0.4):
        ecfg = cfg.replace(noise_kind="in_episode" if ratio else "none", noise_ratio=ratio)
        episodes = evaluation_episodes(novel, ecfg)
        for model, mdns in VARIANTS:
            key = VARIANTS[(model, mdns)]
            report = run_eval(ecfg, models[model], novel, use_mdns=mdns, episodes=episodes)
            reports[(key, ratio)] = report
            rows.setdefault(key, {})[f"{int(100 * ratio)}%"] = report.mean_miou
            if out is not None:
                report.write(out, f"metrics_{key}_{int(100 * ratio)}")

    at40 = {k: reports[(k, 0.4)] for k in ("baseline", "ccns_only", "mdns_only", "ccns_mdns")}
    summary = {
        "pretrain_held_out_accuracy": info["held_out_accuracy"],
        "miou": {k: v for k, v in rows.items()},
        "paired_vs_baseline_40": {k: paired_difference(at40[k], at40["baseline"]) for k in at40 if k != "baseline"},
        "clean_ratio_40": {k: [r.clean_ratio_before, r.clean_ratio_after] for k, r in at40.items()},
        "wall_time": time.perf_counter() - start,
    }
    table = results_table(rows, "mIoU (%) 2-way 5-shot")
    if out is not None:
        Path(out).mkdir(parents=True, exist_ok=True)
        (Path(out) / "benchmark.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
        (Path(out) / "benchmark.txt").write_text(table + "\n")
    summary["table"] = table
    return summary
