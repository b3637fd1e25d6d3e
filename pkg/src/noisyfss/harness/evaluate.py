"""Meta-testing and metrics: mIoU, clean ratio and prototype purity."""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..core import Episode
from ..embed import EmbeddingNet
from ..fewshot import Prototype, global_prototype, multi_prototype_generation, propagate_labels, protonet_predict
from ..mdns import mdns_filter
from ..synthdata import SceneDataset, episode_rng, sample_episode
from .config import ExperimentConfig

PURITY_BINS = 10


def compute_miou(pred, gt, classes) -> float:
    """Mean over ``classes`` of TP / (TP + FP + FN), pooled over all points; absent classes are skipped."""
    pred = np.concatenate([np.ravel(p) for p in pred]) if isinstance(pred, (list, tuple)) else np.ravel(pred)
    gt = np.concatenate([np.ravel(g) for g in gt]) if isinstance(gt, (list, tuple)) else np.ravel(gt)
    if pred.shape != gt.shape:
        raise ValueError("prediction and ground truth shapes differ")
    ious = []
    for c in classes:
        tp = np.sum((pred == c) & (gt == c))
        fp = np.sum((pred == c) & (gt != c))
        fn = np.sum((pred != c) & (gt == c))
        if tp + fp + fn:
            ious.append(tp / (tp + fp + fn))
    return float(np.mean(ious)) if ious else float("nan")


def way_clean_fraction(way, retained=None) -> float:
    shots = way if retained is None else [way[i] for i in retained]
    return float(np.mean([s.is_clean for s in shots]))


def clean_ratio(episodes_ways) -> tuple[float, float]:
    """Mean over episodes of the way-averaged clean fraction, before and after filtering.

    ``episodes_ways`` yields, per episode, a list of ``(way_shots, retained_indices)``.
    """
    before, after = [], []
    for ways in episodes_ways:
        before.append(np.mean([way_clean_fraction(w) for w, _ in ways]))
        after.append(np.mean([way_clean_fraction(w, r) for w, r in ways]))
    return float(np.mean(before)), float(np.mean(after))


def purity_histogram(prototypes) -> tuple[list[int], float]:
    """Counts over [0,0.1), ..., [0.9,1] and the fraction of mass in [0.1, 0.9)."""
    purity = np.array([p.purity if isinstance(p, Prototype) else p for p in prototypes], dtype=np.float64)
    if purity.size == 0:
        return [0] * PURITY_BINS, 0.0
    bins = np.minimum(np.floor(purity * PURITY_BINS + 1e-9).astype(int), PURITY_BINS - 1)
    hist = np.bincount(bins, minlength=PURITY_BINS)
    mid = float(np.mean((purity >= 0.1 - 1e-12) & (purity < 0.9 - 1e-12)))
    return hist.tolist(), mid


@dataclass
class MetricsReport:
    miou: list[float]
    mean_miou: float
    clean_ratio_before: float
    clean_ratio_after: float
    purity_histogram: list[int]
    mid_range_mass: float
    episodes: int
    config: dict
    wall_time: float = 0.0
    fallbacks: int = 0
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        assert all(0.0 <= v <= 1.0 for v in self.miou if not np.isnan(v))
        assert 0.0 <= self.clean_ratio_before <= 1.0 and 0.0 <= self.clean_ratio_after <= 1.0

    def to_json(self, include_time: bool = True) -> str:
        d = asdict(self)
        if not include_time:
            d.pop("wall_time")
        return json.dumps(d, indent=2, sort_keys=True)

    def write(self, out_dir, name: str = "metrics") -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{name}.json").write_text(self.to_json())
        with open(out / f"{name}_episodes.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["episode", "miou", "clean_before", "clean_after"])
            for i, row in enumerate(zip(self.miou, self.extras.get("clean_before", []), self.extras.get("clean_after", []))):
                writer.writerow([i, *(f"{v:.6f}" for v in row)])
        return out / f"{name}.json"


def evaluation_episodes(dataset: SceneDataset, cfg: ExperimentConfig, count: int | None = None, seed: int | None = None):
    """The seeded evaluation episode list; identical across method variants for paired comparison."""
    seed = cfg.seed + 1000 if seed is None else seed
    count = cfg.test_episodes if count is None else count
    return [sample_episode(dataset, cfg.n_way, cfg.k_shot, cfg.n_query, cfg.noise, episode_rng(seed, i))
            for i in range(count)]


def embed_episode(net: EmbeddingNet, episode: Episode):
    shots = [s for way in episode.support for s in way]
    x = np.stack([c.input_features() for c in [s.cloud for s in shots] + list(episode.queries)])
    feats, proj = net(x)
    k = episode.k_shot
    n = len(shots)
    sup_f = [[feats.data[w * k + i].astype(np.float64) for i in range(k)] for w in range(episode.n_way)]
    sup_p = [[proj.data[w * k + i].astype(np.float64) for i in range(k)] for w in range(episode.n_way)]
    return sup_f, sup_p, feats.data[n:].astype(np.float64)


def segment_episode(episode: Episode, sup_f, sup_p, query_f, cfg: ExperimentConfig, use_mdns: bool):
    """Predict query labels for one episode; returns (labels per query, filter results, prototypes)."""
    retained, results = [], []
    for w, way in enumerate(episode.support):
        if use_mdns:
            res = mdns_filter(way, sup_p[w], cfg.scales, cfg.mdns_gammas, cfg.mdns_graph_scope)
            retained.append(res.retained)
            results.append(res)
        else:
            retained.append(np.arange(len(way)))
    protos, fg_protos = [], []
    bg_rows, bg_clean = [], []
    for w, way in enumerate(episode.support):
        rows = [sup_f[w][i][way[i].mask] for i in retained[w]]
        clean = [way[i].cloud.labels[way[i].mask] == way[i].declared_class for i in retained[w]]
        for i in retained[w]:
            bg_rows.append(sup_f[w][i][~way[i].mask])
            bg_clean.append(~np.isin(way[i].cloud.labels[~way[i].mask], episode.classes))
        rows, clean = np.concatenate(rows), np.concatenate(clean)
        if cfg.head == "protonet":
            made = [global_prototype(rows, w + 1, clean)]
        else:
            made = multi_prototype_generation(rows, w + 1, clean, cfg.n_proto)
        fg_protos.extend(made)
        protos.extend(made)
    bg_rows, bg_clean = np.concatenate(bg_rows), np.concatenate(bg_clean)
    if cfg.head == "protonet":
        protos.append(global_prototype(bg_rows, 0, bg_clean))
    else:
        protos.extend(multi_prototype_generation(bg_rows, 0, bg_clean, cfg.n_proto))

    q = query_f.reshape(-1, query_f.shape[-1])
    if cfg.head == "protonet":
        pred = protonet_predict(protos, q)
    else:
        pred = propagate_labels(protos, q, episode.n_way + 1, cfg.propagation)
    pred = pred.reshape(len(episode.queries), -1)
    return list(pred), retained, results, fg_protos


def meta_test(net: EmbeddingNet, episodes, cfg: ExperimentConfig, use_mdns: bool | None = None) -> MetricsReport:
    use_mdns = cfg.use_mdns if use_mdns is None else use_mdns
    start = time.perf_counter()
    mious, ways_record, purities = [], [], []
    fallbacks = 0
    for ep in episodes:
        sup_f, sup_p, query_f = embed_episode(net, ep)
        pred, retained, results, fg_protos = segment_episode(ep, sup_f, sup_p, query_f, cfg, use_mdns)
        mious.append(compute_miou(pred, ep.query_labels, range(1, ep.n_way + 1)))
        ways_record.append(list(zip(ep.support, retained)))
        purities.extend(p.purity for p in fg_protos)
        fallbacks += sum(r.fallback for r in results)
    per_before = [np.mean([way_clean_fraction(w) for w, _ in ways]) for ways in ways_record]
    per_after = [np.mean([way_clean_fraction(w, r) for w, r in ways]) for ways in ways_record]
    before, after = clean_ratio(ways_record)
    hist, mid = purity_histogram(purities)
    return MetricsReport(
        miou=[float(v) for v in mious],
        mean_miou=float(np.mean(mious)),
        clean_ratio_before=before,
        clean_ratio_after=after,
        purity_histogram=hist,
        mid_range_mass=mid,
        episodes=len(mious),
        config={**cfg.to_dict(), "use_mdns": bool(use_mdns)},
        wall_time=time.perf_counter() - start,
        fallbacks=int(fallbacks),
        extras={"clean_before": [float(v) for v in per_before], "clean_after": [float(v) for v in per_after]},
    )


def results_table(rows: dict[str, dict[str, float]], title: str = "mIoU (%)") -> str:
    """Aligned text table: one row per method, one column per noise setting."""
    columns = list(dict.fromkeys(c for r in rows.values() for c in r))
    width = max([len(title)] + [len(k) for k in rows]) + 2
    lines = [title.ljust(width) + "".join(c.rjust(14) for c in columns)]
    lines.append("-" * len(lines[0]))
    for name, vals in rows.items():
        lines.append(name.ljust(width) + "".join(
            (f"{100 * vals[c]:.2f}" if c in vals else "-").rjust(14) for c in columns))
    return "\n".join(lines)
