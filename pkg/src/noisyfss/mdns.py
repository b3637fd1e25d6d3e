"""Multi-scale degree-based noise suppression over the shots of one way."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import ScaleSpec, SupportShot, foreground_cells, l2_normalize

DEFAULT_SCALES = (ScaleSpec(1, 1, 1), ScaleSpec(2, 2, 1))
DEFAULT_GAMMAS = (3.0, 1.0)


@dataclass
class SimilarityGraph:
    W: np.ndarray
    gamma: float


@dataclass
class FilterResult:
    subshot_indicators: list[list[np.ndarray]]  # [scale][shot] -> 0/1 per sub-shot
    shot_indicators: np.ndarray  # scales x K
    final: np.ndarray  # K
    retained: np.ndarray  # shot indices
    coarse_degrees: np.ndarray  # K, single-scale (1,1,1) degrees
    fallback: bool = False
    scales: list[tuple[int, int, int]] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "scales": [list(s) for s in self.scales],
            "subshot_indicators": [[ind.astype(int).tolist() for ind in per_scale] for per_scale in self.subshot_indicators],
            "shot_indicators": self.shot_indicators.astype(int).tolist(),
            "final": self.final.astype(int).tolist(),
            "retained": self.retained.astype(int).tolist(),
            "coarse_degrees": [float(d) for d in self.coarse_degrees],
            "fallback": bool(self.fallback),
        }


def build_similarity_graph(node_features, gamma: float) -> SimilarityGraph:
    """W_ij = max(x_i . x_j, 0) ** gamma on L2-normalised nodes, zero diagonal."""
    x = np.asarray(node_features, dtype=np.float64)
    if x.ndim != 2 or len(x) < 1:
        raise ValueError("need a K x d node feature matrix with K >= 1")
    if not np.isfinite(x).all():
        raise ValueError("non-finite node features")
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    x = l2_normalize(x)
    W = np.maximum(x @ x.T, 0.0) ** gamma
    W = np.minimum((W + W.T) / 2, 1.0)
    np.fill_diagonal(W, 0.0)
    return SimilarityGraph(W, gamma)


def degrees(graph: SimilarityGraph) -> np.ndarray:
    return graph.W.sum(axis=1)


def clean_indicator(deg) -> np.ndarray:
    """1 where the degree is strictly above the mean degree."""
    deg = np.asarray(deg, dtype=np.float64)
    if deg.size == 0:
        raise ValueError("no degrees given")
    thr = deg.mean()
    # the mean of equal values can round below them; treat relative 1e-12 as equal
    return ((deg > thr) & ~np.isclose(deg, thr, rtol=1e-12, atol=0.0)).astype(np.int64)


def majority(votes) -> int:
    """Majority of 0/1 votes; a tie counts as clean."""
    votes = np.asarray(votes)
    return int(2 * votes.sum() >= votes.size)


def _subshot_nodes(shot: SupportShot, feats: np.ndarray, scale: ScaleSpec):
    fg, flat = foreground_cells(shot, scale)
    cells = np.unique(flat)
    nodes = l2_normalize(np.stack([feats[fg[flat == c]].mean(axis=0) for c in cells]))
    return nodes, cells


def _coarse_gamma(scales, gammas) -> float:
    for scale, gamma in zip(scales, gammas):
        if scale.cells == 1:
            return gamma
    return DEFAULT_GAMMAS[0]


def mdns_filter(
    shots,
    features,
    scales=DEFAULT_SCALES,
    gammas=DEFAULT_GAMMAS,
    graph_scope: str = "all",
) -> FilterResult:
    """Filter the K shots of one way.

    ``features`` holds one m x d array per shot (projection space). With
    ``graph_scope="all"`` a scale builds one graph over every sub-shot node of
    every shot; ``"cell"`` builds one graph per grid cell position instead.
    """
    shots = list(shots)
    if not shots:
        raise ValueError("empty support way")
    if len(features) != len(shots):
        raise ValueError("need one feature matrix per shot")
    scales = [s if isinstance(s, ScaleSpec) else ScaleSpec(*s) for s in scales]
    if not scales or len(gammas) != len(scales):
        raise ValueError("need a gamma for every scale")
    K = len(shots)

    coarse = np.stack([l2_normalize(np.asarray(f)[s.mask].mean(axis=0)) for s, f in zip(shots, features)])
    coarse_deg = degrees(build_similarity_graph(coarse, _coarse_gamma(scales, gammas)))

    sub_ind, shot_ind = [], np.zeros((len(scales), K), dtype=np.int64)
    for si, (scale, gamma) in enumerate(zip(scales, gammas)):
        per_shot = [_subshot_nodes(s, np.asarray(f), scale) for s, f in zip(shots, features)]
        owners = np.concatenate([np.full(len(n), k) for k, (n, _) in enumerate(per_shot)])
        nodes = np.concatenate([n for n, _ in per_shot])
        if graph_scope == "all":
            ind = clean_indicator(degrees(build_similarity_graph(nodes, gamma)))
        elif graph_scope == "cell":
            pos = np.concatenate([cells for _, cells in per_shot])
            ind = np.zeros(len(nodes), dtype=np.int64)
            for key in np.unique(pos):
                sel = pos == key
                ind[sel] = clean_indicator(degrees(build_similarity_graph(nodes[sel], gamma)))
        else:
            raise ValueError(f"unknown graph scope {graph_scope!r}")
        sub_ind.append([ind[owners == k] for k in range(K)])
        shot_ind[si] = [majority(ind[owners == k]) for k in range(K)]

    final = np.array([majority(shot_ind[:, k]) for k in range(K)], dtype=np.int64)
    retained = np.flatnonzero(final)
    fallback = retained.size == 0
    if fallback:
        retained = np.flatnonzero(coarse_deg == coarse_deg.max())
    return FilterResult(sub_ind, shot_ind, final, retained, coarse_deg, fallback, [s.cuts for s in scales])
