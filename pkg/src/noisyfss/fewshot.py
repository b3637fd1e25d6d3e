"""Prototype generation, transductive label propagation and the ProtoNet head."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .autograd import Tensor, concat, segment_mean
from .core import assign_to_seeds, farthest_point_sampling


@dataclass
class Prototype:
    vector: np.ndarray
    class_id: int
    members: np.ndarray
    purity: float


@dataclass(frozen=True)
class PropagationConfig:
    alpha: float = 0.99
    k_nn: int = 10
    n_proto: int = 10

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.k_nn < 1 or self.n_proto < 1:
            raise ValueError("k_nn and n_proto must be positive")


def multi_prototype_generation(features, class_id: int, clean, n_proto: int) -> list[Prototype]:
    """FPS seeds in feature space, nearest-seed clustering, one mean prototype per cluster.

    ``clean`` flags the points whose hidden true class is ``class_id``.
    """
    x = np.asarray(features, dtype=np.float64)
    if len(x) == 0:
        warnings.warn(f"class {class_id} has no support points; skipped", stacklevel=2)
        return []
    clean = np.asarray(clean, dtype=bool)
    seeds = farthest_point_sampling(x, min(n_proto, len(x)))
    comp = assign_to_seeds(x, seeds)
    protos = []
    for c in np.unique(comp):
        members = np.flatnonzero(comp == c)
        protos.append(Prototype(x[members].mean(axis=0), class_id, members, float(clean[members].mean())))
    return protos


def global_prototype(features, class_id: int, clean) -> Prototype:
    x = np.asarray(features, dtype=np.float64)
    clean = np.asarray(clean, dtype=bool)
    return Prototype(x.mean(axis=0), class_id, np.arange(len(x)), float(clean.mean()))


def build_knn_graph(nodes, k_nn: int, sigma2: float | None = None) -> np.ndarray:
    """Symmetric Gaussian affinity over the union of each node's k nearest neighbours.

    ``sigma2`` defaults to the mean squared distance to the k-th neighbour.
    """
    x = np.asarray(nodes, dtype=np.float64)
    n = len(x)
    if n < 2:
        raise ValueError("need at least two nodes")
    sq = (x * x).sum(axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * x @ x.T, 0.0)
    np.fill_diagonal(d2, np.inf)
    k = min(k_nn, n - 1)
    nbrs = np.argsort(d2, axis=1, kind="stable")[:, :k]
    if sigma2 is None:
        sigma2 = float(np.take_along_axis(d2, nbrs[:, -1:], axis=1).mean())
    if sigma2 <= 0:
        sigma2 = 1.0
    rows = np.repeat(np.arange(n), k)
    cols = nbrs.ravel()
    A = np.zeros((n, n))
    A[rows, cols] = np.exp(-d2[rows, cols] / (2.0 * sigma2))
    return np.maximum(A, A.T)


def normalized_affinity(A) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    d = A.sum(axis=1)
    inv = np.where(d > 0, 1.0 / np.sqrt(np.where(d > 0, d, 1.0)), 0.0)
    return inv[:, None] * A * inv[None, :]


def label_propagate(A, Y, alpha: float = 0.99, method: str = "direct", tol: float = 1e-12, max_iter: int = 100_000):
    """Scores F = (I - alpha S)^-1 Y over the symmetrically normalised graph S."""
    if not 0.0 <= alpha < 1.0:
        raise ValueError("alpha must lie in [0, 1) for a non-singular system")
    A = np.asarray(A, dtype=np.float64)
    if A.shape[0] != A.shape[1] or not np.allclose(A, A.T) or (A < 0).any():
        raise ValueError("affinity must be square, symmetric and non-negative")
    Y = np.asarray(Y, dtype=np.float64)
    S = normalized_affinity(A)
    n = len(A)
    if method == "direct":
        if n <= 1500:
            return np.linalg.solve(np.eye(n) - alpha * S, Y)
        system = (sp.identity(n, format="csc") - alpha * sp.csc_matrix(S)).tocsc()
        return np.column_stack([spla.spsolve(system, Y[:, j]) for j in range(Y.shape[1])])
    if method == "iterative":
        S = sp.csr_matrix(S)
        F = Y.copy()
        for _ in range(max_iter):
            nxt = alpha * (S @ F) + Y
            if np.abs(nxt - F).max() < tol:
                return nxt
            F = nxt
        raise RuntimeError("label propagation did not converge")
    raise ValueError(f"unknown method {method!r}")


def predict_query(F) -> np.ndarray:
    """Argmax over class columns (column 0 is background); any tie goes to background."""
    F = np.asarray(F, dtype=np.float64)
    best = F.max(axis=1, keepdims=True)
    pred = np.argmax(F, axis=1)
    pred[(F == best).sum(axis=1) > 1] = 0
    return pred


def protonet_predict(prototypes: list[Prototype], query_features) -> np.ndarray:
    """Label of the nearest prototype; equidistant prototypes resolve to the lower class id."""
    q = np.asarray(query_features, dtype=np.float64)
    protos = sorted(prototypes, key=lambda p: p.class_id)
    centers = np.stack([p.vector for p in protos])
    ids = np.array([p.class_id for p in protos])
    d2 = ((q[:, None, :] - centers[None, :, :]) ** 2).sum(-1)
    return ids[np.argmin(d2, axis=1)]


def propagate_labels(prototypes: list[Prototype], query_features, n_classes: int, config: PropagationConfig):
    """Full transductive head: kNN graph over prototypes and query points, then propagation."""
    q = np.asarray(query_features, dtype=np.float64)
    nodes = np.concatenate([np.stack([p.vector for p in prototypes]), q])
    Y = np.zeros((len(nodes), n_classes))
    Y[np.arange(len(prototypes)), [p.class_id for p in prototypes]] = 1.0
    A = build_knn_graph(nodes, config.k_nn)
    F = label_propagate(A, Y, config.alpha)
    return predict_query(F[len(prototypes):])


# training-time head ---------------------------------------------------------


def prototype_partition(rows: np.ndarray, n_proto: int) -> np.ndarray:
    """Compact FPS component id per row, as used for multi-prototypes."""
    comp = assign_to_seeds(rows, farthest_point_sampling(rows, min(n_proto, len(rows))))
    return np.unique(comp, return_inverse=True)[1].astype(np.int64)


def prototype_tensors(class_rows: Tensor, partition: np.ndarray) -> Tensor:
    """Differentiable component means; the partition is held constant."""
    return segment_mean(class_rows, partition, int(partition.max()) + 1)


def soft_prototype_logits(query: Tensor, class_prototypes: list[Tensor], temperature: float = 1.0) -> Tensor:
    """Per class, a log-sum-exp smoothed nearest-prototype score over negative squared distances."""
    q2 = (query * query).sum(axis=-1, keepdims=True)
    logits = []
    for protos in class_prototypes:
        p2 = (protos * protos).sum(axis=-1)
        d2 = q2 - 2.0 * (query @ protos.T) + p2
        logits.append((d2 * (-1.0 / temperature)).logsumexp(axis=-1, keepdims=True))
    return concat(logits, axis=-1)
