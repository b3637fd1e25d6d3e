"""Supervised pretraining on base classes and episodic training with the combined loss."""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from ..autograd import Tensor, stack
from ..core import Episode
from ..embed import EmbeddingNet, OptimizerState, PROJECTION, adam_step, backward, save_checkpoint
from ..fewshot import prototype_partition, prototype_tensors, soft_prototype_logits
from ..losses import LossConfig, ccns_loss, combined_loss, cross_entropy, shot_components
from ..synthdata import FLOOR, SceneDataset, training_episodes
from .config import ExperimentConfig

log = logging.getLogger(__name__)


class NumericalError(FloatingPointError):
    pass


def embed_clouds(net: EmbeddingNet, clouds) -> tuple[Tensor, Tensor]:
    """Batch-embed clouds of equal size: features B x m x f and projections B x m x d."""
    x = np.stack([c.input_features() for c in clouds])
    return net(x)


def pretrain_labels(labels: np.ndarray, base_classes) -> np.ndarray:
    out = np.zeros(len(labels), dtype=np.int64)
    for i, c in enumerate(base_classes):
        out[labels == c] = i + 1
    out[labels == FLOOR] = 0
    return out


def pretrain(net: EmbeddingNet, dataset: SceneDataset, epochs: int, lr: float = 1e-3, batch: int = 16,
             seed: int = 0, checkpoint_dir=None) -> tuple[EmbeddingNet, list[float], dict]:
    """Per-point cross-entropy over base classes plus background through a temporary classifier.

    The classifier is detached from the net afterwards and returned as plain arrays.
    """
    classes = list(dataset.classes)
    net.add_classifier(len(classes) + 1, np.random.default_rng([seed, 7]))
    x_all = np.stack([c.input_features() for c in dataset.clouds]).astype(net.dtype)
    y_all = np.stack([pretrain_labels(c.labels, classes) for c in dataset.clouds])
    rng = np.random.default_rng([seed, 11])
    state = OptimizerState()
    history = []
    last_good = net.copy()
    for epoch in range(epochs):
        order = rng.permutation(len(x_all))
        total = 0.0
        for start in range(0, len(order), batch):
            idx = order[start:start + batch]
            feats, _ = net(x_all[idx])
            loss = cross_entropy(net.classify(feats), y_all[idx])
            if not np.isfinite(loss.data):
                if checkpoint_dir is not None:
                    save_checkpoint(Path(checkpoint_dir) / "last_finite.ckpt", last_good, state.step)
                raise NumericalError(f"pretraining loss diverged at epoch {epoch}")
            grads = backward(net, loss)
            grads = {k: v for k, v in grads.items() if k not in PROJECTION}
            adam_step(net, grads, state, lr)
            total += loss.item() * len(idx)
        history.append(total / len(order))
        last_good = net.copy()
        log.info("pretrain epoch %d loss %.4f", epoch, history[-1])
    classifier = {k: net.params[k].data.copy() for k in ("wc", "bc")}
    net.drop_classifier()
    return net, history, classifier


def pretrain_accuracy(net: EmbeddingNet, clf: dict, dataset: SceneDataset) -> float:
    """Per-point accuracy of a classifier head (weights in ``clf``) on a scene set."""
    correct = total = 0
    for cloud in dataset.clouds:
        feats, _ = net(cloud)
        pred = np.argmax(feats.data @ clf["wc"] + clf["bc"], axis=1)
        gt = pretrain_labels(cloud.labels, dataset.classes)
        correct += int((pred == gt).sum())
        total += len(gt)
    return correct / total


def episode_loss(net: EmbeddingNet, episode: Episode, loss_cfg: LossConfig, n_proto: int, frozen: dict | None = None):
    """Combined objective on one episode; returns (total, ce, ccns) tensors.

    ``frozen`` caches the FPS partitions: an empty dict is filled, a filled one
    is reused (finite-difference checks need the partition held fixed).
    """
    frozen = {} if frozen is None else frozen
    shots = [s for way in episode.support for s in way]
    feats, proj = embed_clouds(net, [s.cloud for s in shots] + list(episode.queries))
    n_sup = len(shots)

    def rows(t: Tensor, pairs) -> Tensor:
        b = np.concatenate([np.full(len(p), i) for i, p in pairs])
        p = np.concatenate([p for _, p in pairs])
        return t[(b, p)]

    class_protos = []
    bg = rows(feats, [(i, np.flatnonzero(~s.mask)) for i, s in enumerate(shots)])
    for key, class_rows in [("bg", bg)] + [
        (w, rows(feats, [(w * episode.k_shot + k, s.foreground) for k, s in enumerate(way)]))
        for w, way in enumerate(episode.support)
    ]:
        if key not in frozen:
            frozen[key] = prototype_partition(class_rows.data, n_proto)
        class_protos.append(prototype_tensors(class_rows, frozen[key]))
    q = feats[n_sup:].reshape(-1, feats.shape[-1])
    logits = soft_prototype_logits(q, class_protos)
    ce = cross_entropy(logits, np.concatenate(episode.query_labels))

    if loss_cfg.lam == 0:
        return ce, ce, None
    way_losses = []
    for w, way in enumerate(episode.support):
        fg = [proj[w * episode.k_shot + k][s.foreground] for k, s in enumerate(way)]
        key = ("ccns", w)
        if key not in frozen:
            frozen[key] = [shot_components(f.data, loss_cfg.R) for f in fg]
        way_losses.append(ccns_loss(fg, [s.true_class for s in way], loss_cfg.R, loss_cfg.tau, frozen[key]))
    ccns = stack(way_losses).mean()
    return combined_loss(ce, ccns, loss_cfg.lam), ce, ccns


def learning_rates(net: EmbeddingNet, backbone: float, head: float) -> dict:
    return {name: (head if name in PROJECTION else backbone) for name in net.params}


def episodic_train(net: EmbeddingNet, dataset: SceneDataset, cfg: ExperimentConfig, episodes=None,
                   log_every: int = 100) -> tuple[EmbeddingNet, list[dict]]:
    """Fine-tune on noisy base-class episodes with L_CE + lam * L_CCNS."""
    if episodes is None:
        episodes = training_episodes(dataset, cfg.n_way, cfg.k_shot, cfg.n_query, cfg.seed + 1,
                                     cfg.train_iterations, cfg.training_ratios)
    loss_cfg = cfg.loss
    state = OptimizerState()
    rates = learning_rates(net, cfg.lr_backbone, cfg.lr_head)
    history = []
    for i, ep in enumerate(episodes):
        total, ce, ccns = episode_loss(net, ep, loss_cfg, cfg.n_proto)
        if not np.isfinite(total.data):
            raise NumericalError(f"episodic loss is not finite at iteration {i}")
        grads = backward(net, total)
        adam_step(net, grads, state, rates)
        history.append({"loss": total.item(), "ce": ce.item(), "ccns": None if ccns is None else ccns.item(),
                        "noise": ep.noise.ratio})
        if log_every and (i + 1) % log_every == 0:
            recent = history[-log_every:]
            log.info("iter %d loss %.4f", i + 1, np.mean([h["loss"] for h in recent]))
    return net, history
