"""Training objectives: point cross-entropy and the clean-noise separation contrastive losses."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import Tensor, as_tensor, concat, segment_mean
from .core import assign_to_seeds, farthest_point_sampling


@dataclass(frozen=True)
class LossConfig:
    tau: float = 0.1
    lam: float = 0.1
    R: int = 4

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("temperature must be positive")
        if self.lam < 0:
            raise ValueError("CCNS weight must be non-negative")
        if self.R < 1:
            raise ValueError("R must be at least 1")


def cross_entropy(logits, labels) -> Tensor:
    """Mean negative log-softmax of the labelled class over every point."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    n_cls = logits.shape[-1]
    if labels.shape != logits.shape[:-1]:
        raise ValueError("labels must match the leading logit dimensions")
    if labels.min() < 0 or labels.max() >= n_cls:
        raise ValueError(f"label out of range [0, {n_cls})")
    onehot = np.eye(n_cls, dtype=logits.data.dtype)[labels]
    picked = (logits * onehot).sum(axis=-1)
    return (logits.logsumexp(axis=-1) - picked).mean()


def supcon(z: Tensor, labels, tau: float) -> Tensor:
    """Supervised contrastive loss averaged over every anchor row of ``z``.

    Positives of an anchor are the other rows sharing its label; the
    denominator runs over every row except the anchor. Anchors without
    positives contribute zero but still count in the average.
    """
    labels = np.asarray(labels)
    n = z.shape[0]
    if n < 2:
        raise ValueError("contrast undefined for fewer than two samples")
    sim = (z @ z.T) * (1.0 / tau)
    self_mask = np.eye(n, dtype=bool)
    lse = (sim + np.where(self_mask, -np.inf, 0.0).astype(sim.data.dtype)).logsumexp(axis=1, keepdims=True)
    log_prob = sim - lse
    pos = (labels[:, None] == labels[None, :]) & ~self_mask
    n_pos = pos.sum(axis=1)
    weights = np.where(n_pos[:, None] > 0, pos / np.maximum(n_pos, 1)[:, None], 0.0).astype(sim.data.dtype)
    return -(log_prob * weights).sum() * (1.0 / n)


def cns_loss(shot_projections, true_classes, tau: float = 0.1) -> Tensor:
    """Shot-level loss on K unit vectors, one per support shot of a way."""
    z = as_tensor(shot_projections)
    if z.shape[0] < 2:
        raise ValueError("contrast undefined for K < 2")
    return supcon(z, true_classes, tau)


def shot_components(rows: np.ndarray, R: int) -> np.ndarray:
    """Component id per row from FPS seeding plus nearest-seed assignment (R' = min(R, rows))."""
    rows = np.asarray(rows, dtype=np.float64)
    seeds = farthest_point_sampling(rows, min(R, len(rows)))
    # duplicate seeds lose their rows to the lower tie-break; drop the empty ids
    return np.unique(assign_to_seeds(rows, seeds), return_inverse=True)[1].astype(np.int64)


def component_vectors(shot_rows: Tensor, components: np.ndarray) -> Tensor:
    """Unit-norm mean of each component; the partition is a constant for the gradient."""
    return segment_mean(shot_rows, components, int(components.max()) + 1).normalize()


def ccns_loss(per_shot_projections, true_classes, R: int = 4, tau: float = 0.1, components=None) -> Tensor:
    """Component-level loss over the foreground projection rows of every shot.

    ``components`` optionally fixes the per-shot partition (as returned by
    :func:`shot_components`); otherwise it is recomputed from the rows.
    """
    shots = [as_tensor(s) for s in per_shot_projections]
    if len(shots) < 2:
        raise ValueError("contrast undefined for a single shot")
    if any(s.shape[0] == 0 for s in shots):
        raise ValueError("every shot needs at least one foreground row")
    if components is None:
        components = [shot_components(s.data, R) for s in shots]
    comps, labels = [], []
    for rows, part, y in zip(shots, components, true_classes):
        vecs = component_vectors(rows, part)
        comps.append(vecs)
        labels.extend([y] * vecs.shape[0])
    return supcon(concat(comps, axis=0), labels, tau)


def combined_loss(ce, ccns, lam: float):
    return ce + lam * ccns
