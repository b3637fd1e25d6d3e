"""Shared domain types, farthest point sampling and foreground geometry."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

MIN_FOREGROUND = 100
INPUT_DIM = 9

# x, y, z, r, g, b as float32 followed by the label as uint32, little-endian
RECORD_DTYPE = np.dtype(
    [("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("r", "<f4"), ("g", "<f4"), ("b", "<f4"), ("label", "<u4")]
)


@dataclass
class PointCloud:
    coords: np.ndarray
    colors: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        self.colors = np.asarray(self.colors, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        m = len(self.coords)
        if m == 0:
            raise ValueError("point cloud must contain at least one point")
        if self.coords.shape != (m, 3) or self.colors.shape != (m, 3) or self.labels.shape != (m,):
            raise ValueError("coords, colors and labels must have matching lengths")
        if not (np.isfinite(self.coords).all() and np.isfinite(self.colors).all()):
            raise ValueError("point cloud contains non-finite values")
        if self.colors.min() < 0.0 or self.colors.max() > 1.0:
            raise ValueError("colors must lie in [0, 1]")

    def __len__(self):
        return len(self.coords)

    def input_features(self) -> np.ndarray:
        """Per-point input features: xyz, rgb and xyz rescaled to the unit box of this cloud."""
        lo = self.coords.min(axis=0)
        extent = self.coords.max(axis=0) - lo
        extent[extent <= 0] = 1.0
        return np.concatenate([self.coords, self.colors, (self.coords - lo) / extent], axis=1)

    def check_vocabulary(self, vocabulary) -> None:
        if not np.isin(self.labels, np.asarray(list(vocabulary))).all():
            raise ValueError("point cloud contains labels outside the class vocabulary")


@dataclass
class SupportShot:
    cloud: PointCloud
    mask: np.ndarray
    declared_class: int
    true_class: int

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.shape != (len(self.cloud),):
            raise ValueError("mask length must equal the number of points")

    @property
    def is_clean(self) -> bool:
        return self.true_class == self.declared_class

    @property
    def foreground(self) -> np.ndarray:
        return np.flatnonzero(self.mask)


class NoiseKind(str, Enum):
    NONE = "none"
    IN_EPISODE = "in_episode"
    OUT_EPISODE = "out_episode"
    TRAINING = "training"  # noise drawn from any other training class


@dataclass(frozen=True)
class NoiseConfig:
    kind: NoiseKind = NoiseKind.NONE
    ratio: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", NoiseKind(self.kind))
        if not 0.0 <= self.ratio < 1.0:
            raise ValueError(f"noise ratio must lie in [0, 1), got {self.ratio}")
        if self.kind is NoiseKind.NONE and self.ratio != 0.0:
            raise ValueError("noise kind 'none' requires ratio 0")
        if self.kind in (NoiseKind.IN_EPISODE, NoiseKind.TRAINING) and self.ratio > 0.4 + 1e-12:
            raise ValueError("in-episode noise ratio must not exceed 0.4")
        if self.kind is NoiseKind.OUT_EPISODE and self.ratio > 0.6 + 1e-12:
            raise ValueError("out-episode noise ratio must not exceed 0.6")

    def noisy_count(self, k_shot: int) -> int:
        return int(round(self.ratio * k_shot))


@dataclass
class Episode:
    n_way: int
    k_shot: int
    support: list[list[SupportShot]]
    queries: list[PointCloud]
    query_labels: list[np.ndarray]
    classes: list[int]
    noise: NoiseConfig = field(default_factory=NoiseConfig)

    def __post_init__(self):
        if len(set(self.classes)) != self.n_way or len(self.classes) != self.n_way:
            raise ValueError("episode classes must be N distinct ids")
        if len(self.support) != self.n_way or any(len(way) != self.k_shot for way in self.support):
            raise ValueError("support set must be N x K shots")
        for cls, way in zip(self.classes, self.support):
            if any(shot.declared_class != cls for shot in way):
                raise ValueError("every shot of a way must declare the way's class")
            if not clean_majority([shot.true_class for shot in way], cls):
                raise ValueError(f"clean shots do not outnumber every noisy class for class {cls}")


def clean_majority(true_classes, declared: int) -> bool:
    """True when the clean count strictly exceeds the count of every single noisy class."""
    values, counts = np.unique(np.asarray(true_classes), return_counts=True)
    clean = counts[values == declared].sum()
    noisy = counts[values != declared]
    return noisy.size == 0 or clean > noisy.max()


@dataclass(frozen=True)
class ScaleSpec:
    n_x: int = 1
    n_y: int = 1
    n_z: int = 1

    def __post_init__(self):
        if min(self.n_x, self.n_y, self.n_z) < 1:
            raise ValueError("cut counts must be positive")

    @property
    def cells(self) -> int:
        return self.n_x * self.n_y * self.n_z

    @property
    def cuts(self) -> tuple[int, int, int]:
        return (self.n_x, self.n_y, self.n_z)


def _first_max(v: np.ndarray) -> int:
    # exact ties can round apart; values within relative 1e-12 of the max count as tied
    top = v.max()
    return int(np.flatnonzero(v >= top - 1e-12 * abs(top))[0])


def farthest_point_sampling(vectors, count: int, rng: np.random.Generator | None = None) -> np.ndarray:
    """Greedy maximin selection of ``count`` row indices.

    The first index is the row farthest from the centroid unless ``rng`` is
    given, in which case it is drawn uniformly. Ties go to the lowest index.
    """
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    n = len(x)
    if count < 1:
        raise ValueError("FPS needs count >= 1")
    if count > n:
        raise ValueError(f"insufficient points: requested {count} seeds from {n}")
    if not np.isfinite(x).all():
        raise ValueError("FPS input contains non-finite values")
    if rng is None:
        first = _first_max(((x - x.mean(axis=0)) ** 2).sum(axis=1))
    else:
        first = int(rng.integers(n))
    selected = [first]
    min_dist = ((x - x[first]) ** 2).sum(axis=1)
    min_dist[first] = -1.0
    for _ in range(count - 1):
        nxt = _first_max(min_dist)
        selected.append(nxt)
        min_dist = np.minimum(min_dist, ((x - x[nxt]) ** 2).sum(axis=1))
        min_dist[selected] = -1.0
    return np.asarray(selected, dtype=np.int64)


def assign_to_seeds(vectors, seeds) -> np.ndarray:
    """Component id (position in ``seeds``) of the nearest seed for every row."""
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    seeds = np.asarray(seeds, dtype=np.int64)
    if seeds.size == 0:
        raise ValueError("assign_to_seeds needs at least one seed")
    d2 = np.stack([((x - x[s]) ** 2).sum(axis=1) for s in seeds], axis=1)
    return np.argmin(d2, axis=1).astype(np.int64)


def foreground_cells(shot: SupportShot, scale: ScaleSpec) -> tuple[np.ndarray, np.ndarray]:
    """Foreground indices and the flat grid-cell id of each, over the foreground bounding box.

    Points on an interior cut go to the higher cell; the maximum goes to the last cell.
    """
    fg = shot.foreground
    if fg.size == 0:
        raise ValueError("shot has an empty foreground")
    pts = shot.cloud.coords[fg]
    lo = pts.min(axis=0)
    span = pts.max(axis=0) - lo
    cuts = np.asarray(scale.cuts)
    cell = np.zeros_like(pts, dtype=np.int64)
    for axis in range(3):
        if span[axis] > 0:
            cell[:, axis] = np.floor((pts[:, axis] - lo[axis]) / span[axis] * cuts[axis]).astype(np.int64)
    cell = np.minimum(cell, cuts - 1)
    return fg, (cell[:, 0] * cuts[1] + cell[:, 1]) * cuts[2] + cell[:, 2]


def split_foreground(shot: SupportShot, scale: ScaleSpec) -> list[np.ndarray]:
    """Partition the foreground into the non-empty cells of an even grid over its bounding box."""
    fg, flat = foreground_cells(shot, scale)
    return [fg[flat == c] for c in np.unique(flat)]


def mean_foreground_feature(features, mask) -> np.ndarray:
    features = np.asarray(features)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("mean of an empty foreground is undefined")
    return features[mask].mean(axis=0)


def l2_normalize(x, eps: float = 1e-12) -> np.ndarray:
    """Row-wise L2 normalisation; near-zero rows map to the first basis vector."""
    x = np.asarray(x, dtype=np.float64)
    norm = np.linalg.norm(x, axis=-1, keepdims=True)
    out = x / np.where(norm < eps, 1.0, norm)
    small = norm[..., 0] < eps
    if small.any():
        out[small] = 0.0
        out[small, 0] = 1.0
    return out


def write_cloud(path, cloud: PointCloud) -> None:
    rec = np.empty(len(cloud), dtype=RECORD_DTYPE)
    for i, name in enumerate("xyz"):
        rec[name] = cloud.coords[:, i]
    for i, name in enumerate("rgb"):
        rec[name] = cloud.colors[:, i]
    rec["label"] = cloud.labels
    Path(path).write_bytes(rec.tobytes())


def read_cloud(path) -> PointCloud:
    rec = np.frombuffer(Path(path).read_bytes(), dtype=RECORD_DTYPE)
    coords = np.stack([rec[n] for n in "xyz"], axis=1).astype(np.float64)
    colors = np.clip(np.stack([rec[n] for n in "rgb"], axis=1).astype(np.float64), 0.0, 1.0)
    return PointCloud(coords, colors, rec["label"].astype(np.int64))


def write_cloud_dir(directory, clouds, vocabulary, seed: int, extra: dict | None = None) -> Path:
    """Write clouds as ``cloud_XXXXX.bin`` plus ``manifest.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = []
    for i, cloud in enumerate(clouds):
        name = f"cloud_{i:05d}.bin"
        write_cloud(directory / name, cloud)
        names.append(name)
    manifest = {
        "point_count": int(len(clouds[0])) if clouds else 0,
        "class_vocabulary": {str(k): v for k, v in dict(vocabulary).items()},
        "seed": int(seed),
        "clouds": names,
    }
    manifest.update(extra or {})
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return directory


def read_cloud_dir(directory) -> tuple[list[PointCloud], dict]:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    clouds = [read_cloud(directory / name) for name in manifest["clouds"]]
    vocab = {int(k) for k in manifest["class_vocabulary"]}
    for cloud in clouds:
        if len(cloud) != manifest["point_count"]:
            raise ValueError("cloud point count disagrees with manifest")
        cloud.check_vocabulary(vocab)
    return clouds, manifest
