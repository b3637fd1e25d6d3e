"""End-to-end steps shared by the CLI and the experiment scripts."""

from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np

from ..core import read_cloud_dir, write_cloud_dir
from ..embed import EmbeddingNet, load_checkpoint, save_checkpoint
from ..synthdata import DatasetSplit, SceneDataset, generate_dataset
from .config import ExperimentConfig
from .evaluate import MetricsReport, evaluation_episodes, meta_test
from .train import episodic_train, pretrain, pretrain_accuracy

log = logging.getLogger(__name__)

SPLIT = DatasetSplit()


def make_datasets(cfg: ExperimentConfig) -> tuple[SceneDataset, SceneDataset]:
    """Base and novel scene pools; disjoint seeds so no scene is shared."""
    base = generate_dataset(SPLIT.base, cfg.base_scenes, seed=cfg.seed, m=cfg.points)
    novel = generate_dataset(SPLIT.novel, cfg.novel_scenes, seed=cfg.seed + 1, m=cfg.points)
    return base, novel


def write_datasets(out, base: SceneDataset, novel: SceneDataset) -> Path:
    out = Path(out)
    vocab = SPLIT.vocabulary()
    write_cloud_dir(out / "base", base.clouds, vocab, base.seed, {"classes": list(base.classes)})
    write_cloud_dir(out / "novel", novel.clouds, vocab, novel.seed, {"classes": list(novel.classes)})
    split = {"base": list(SPLIT.base), "novel": list(SPLIT.novel), "base_seed": base.seed, "novel_seed": novel.seed,
             "base_scenes": len(base.clouds), "novel_scenes": len(novel.clouds)}
    (out / "split.json").write_text(json.dumps(split, indent=2))
    return out


def read_datasets(data_dir) -> tuple[SceneDataset, SceneDataset]:
    pools = []
    for name in ("base", "novel"):
        clouds, manifest = read_cloud_dir(Path(data_dir) / name)
        pools.append(SceneDataset(clouds, tuple(manifest["classes"]), manifest["seed"]))
    return pools[0], pools[1]


def load_datasets(cfg: ExperimentConfig, data_dir=None):
    return make_datasets(cfg) if data_dir is None else read_datasets(data_dir)


def run_pretrain(cfg: ExperimentConfig, base: SceneDataset, out=None) -> tuple[EmbeddingNet, dict]:
    net = EmbeddingNet(cfg.hidden, cfg.feat_dim, cfg.proj_dim, seed=cfg.seed)
    net, history, clf = pretrain(net, base, cfg.pretrain_epochs, cfg.pretrain_lr, cfg.pretrain_batch, cfg.seed, out)
    info = {"loss": history, "train_accuracy": pretrain_accuracy(net, clf, base),
            "held_out_accuracy": held_out_accuracy(net, clf, cfg)}
    if out is not None:
        Path(out).mkdir(parents=True, exist_ok=True)
        save_checkpoint(Path(out) / "pretrained.ckpt", net, step=cfg.pretrain_epochs)
        (Path(out) / "pretrain.json").write_text(json.dumps(info, indent=2))
    return net, info


def run_train(cfg: ExperimentConfig, net: EmbeddingNet, base: SceneDataset, out=None, name="trained"):
    net, history = episodic_train(net, base, cfg)
    if out is not None:
        Path(out).mkdir(parents=True, exist_ok=True)
        save_checkpoint(Path(out) / f"{name}.ckpt", net, step=len(history))
        (Path(out) / f"{name}_history.json").write_text(json.dumps(history))
    return net, history


def run_eval(cfg: ExperimentConfig, net: EmbeddingNet, novel: SceneDataset, use_mdns=None, episodes=None) -> MetricsReport:
    episodes = evaluation_episodes(novel, cfg) if episodes is None else episodes
    return meta_test(net, episodes, cfg, use_mdns=use_mdns)


def checkpoint(path) -> EmbeddingNet:
    return load_checkpoint(path)[0]


def held_out_accuracy(net: EmbeddingNet, clf: dict, cfg: ExperimentConfig, n_scenes: int = 50) -> float:
    """Pretraining accuracy on fresh base-class scenes from an unused seed."""
    held = generate_dataset(SPLIT.base, n_scenes, seed=cfg.seed + 7919, m=cfg.points)
    return pretrain_accuracy(net, clf, held)


def paired_difference(a: MetricsReport, b: MetricsReport) -> dict:
    """Mean and standard error of per-episode mIoU differences a - b."""
    d = np.array(a.miou) - np.array(b.miou)
    return {"mean": float(d.mean()), "sem": float(d.std(ddof=1) / np.sqrt(len(d))) if len(d) > 1 else 0.0}
