"""Synthetic labelled scenes, base/novel split, episode sampling and support-noise injection."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import MIN_FOREGROUND, Episode, NoiseConfig, NoiseKind, PointCloud, SupportShot, clean_majority

FLOOR = 0
TRAINING_RATIOS = (0.0, 0.2, 0.4)


@dataclass(frozen=True)
class ClassShape:
    class_id: int
    name: str
    kind: str  # plane | box | sphere | cylinder
    size: tuple[float, float]  # footprint half-extent range in metres
    color: tuple[float, float, float]
    color_spread: float = 0.06
    jitter: float = 0.004


# Kinds repeat across the split so novel classes reuse geometry seen during training.
DEFAULT_SHAPES = (
    ClassShape(1, "crate", "box", (0.08, 0.12), (0.80, 0.25, 0.20)),
    ClassShape(2, "ball", "sphere", (0.08, 0.12), (0.20, 0.70, 0.25)),
    ClassShape(3, "bin", "cylinder", (0.06, 0.10), (0.20, 0.30, 0.80)),
    ClassShape(4, "table", "plane", (0.10, 0.15), (0.75, 0.65, 0.25)),
    ClassShape(5, "cabinet", "box", (0.09, 0.13), (0.55, 0.30, 0.70)),
    ClassShape(6, "globe", "sphere", (0.10, 0.14), (0.25, 0.70, 0.70)),
    ClassShape(7, "pillar", "cylinder", (0.05, 0.09), (0.85, 0.55, 0.20)),
    ClassShape(8, "shelf", "plane", (0.10, 0.14), (0.35, 0.55, 0.35)),
    ClassShape(9, "box", "box", (0.07, 0.11), (0.30, 0.45, 0.85)),
    ClassShape(10, "dome", "sphere", (0.09, 0.13), (0.85, 0.35, 0.55)),
    ClassShape(11, "drum", "cylinder", (0.07, 0.11), (0.50, 0.75, 0.25)),
    ClassShape(12, "board", "plane", (0.10, 0.14), (0.70, 0.70, 0.70)),
)
FLOOR_COLOR = (0.45, 0.40, 0.35)


@dataclass(frozen=True)
class DatasetSplit:
    base: tuple[int, ...] = (1, 2, 3, 4, 5, 6)
    novel: tuple[int, ...] = (7, 8, 9, 10, 11, 12)

    def __post_init__(self):
        if set(self.base) & set(self.novel):
            raise ValueError("base and novel classes must be disjoint")

    def noise_pool(self, episode_classes) -> list[int]:
        """Novel classes outside the episode, the source of out-episode noise."""
        return [c for c in self.novel if c not in set(episode_classes)]

    def vocabulary(self, shapes=DEFAULT_SHAPES) -> dict[int, str]:
        names = {s.class_id: s.name for s in shapes}
        return {FLOOR: "floor", **{c: names[c] for c in sorted(self.base + self.novel)}}


# geometry --------------------------------------------------------------------


def _sample_box(rng, n, half):
    hx, hy, h = half
    areas = np.array([4 * hx * hy, 4 * hx * h, 4 * hx * h, 4 * hy * h, 4 * hy * h])  # top, +-y, +-x
    face = rng.choice(5, size=n, p=areas / areas.sum())
    u, v = rng.uniform(-1, 1, n), rng.uniform(0, 1, n)
    pts = np.empty((n, 3))
    top = face == 0
    pts[top] = np.column_stack([u[top] * hx, rng.uniform(-1, 1, top.sum()) * hy, np.full(top.sum(), h)])
    for f, (axis, sign) in zip(range(1, 5), [(1, 1), (1, -1), (0, 1), (0, -1)]):
        sel = face == f
        k = sel.sum()
        if axis == 1:
            pts[sel] = np.column_stack([u[sel] * hx, np.full(k, sign * hy), v[sel] * h])
        else:
            pts[sel] = np.column_stack([np.full(k, sign * hx), u[sel] * hy, v[sel] * h])
    return pts


def _sample_sphere(rng, n, r):
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return d * r + np.array([0.0, 0.0, r])


def _sample_cylinder(rng, n, r, h):
    side = rng.uniform(size=n) < (2 * np.pi * r * h) / (2 * np.pi * r * h + np.pi * r * r)
    theta = rng.uniform(0, 2 * np.pi, n)
    rad = np.where(side, r, r * np.sqrt(rng.uniform(size=n)))
    z = np.where(side, rng.uniform(0, h, n), h)
    return np.column_stack([rad * np.cos(theta), rad * np.sin(theta), z])


def _sample_plane(rng, n, hx, hy, height):
    return np.column_stack([rng.uniform(-hx, hx, n), rng.uniform(-hy, hy, n), np.full(n, height)])


def sample_object(shape: ClassShape, rng, n: int):
    """Points on one instance centred at the origin, plus its footprint radius."""
    s = rng.uniform(*shape.size)
    if shape.kind == "box":
        half = (s, s * rng.uniform(0.7, 1.0), s * rng.uniform(1.2, 2.0))
        pts, radius = _sample_box(rng, n, half), np.hypot(half[0], half[1])
    elif shape.kind == "sphere":
        pts, radius = _sample_sphere(rng, n, s), s
    elif shape.kind == "cylinder":
        pts, radius = _sample_cylinder(rng, n, s, s * rng.uniform(3.0, 4.0)), s
    elif shape.kind == "plane":
        hy = s * rng.uniform(0.6, 0.9)
        pts, radius = _sample_plane(rng, n, s, hy, rng.uniform(0.35, 0.5)), np.hypot(s, hy)
    else:
        raise ValueError(f"unknown primitive kind {shape.kind!r}")
    pts = pts + rng.normal(0.0, shape.jitter, size=pts.shape)
    colors = np.clip(np.asarray(shape.color) + rng.normal(0.0, shape.color_spread, size=(n, 3)), 0.0, 1.0)
    return pts, colors, radius


def generate_scene(shapes, rng, m: int = 512, n_objects: int | None = None, floor_fraction: float = 0.2,
                   max_retries: int = 100) -> PointCloud:
    """A 1m x 1m block with a floor and non-overlapping objects of distinct classes."""
    shapes = list(shapes)
    if n_objects is None:
        n_objects = int(rng.integers(2, 5))
    n_objects = min(n_objects, len(shapes))
    n_floor = int(round(floor_fraction * m)) if n_objects else m
    counts = np.full(n_objects, (m - n_floor) // max(n_objects, 1))
    counts[: (m - n_floor) - counts.sum()] += 1
    chosen = rng.choice(len(shapes), size=n_objects, replace=False)

    coords = [np.column_stack([rng.uniform(0, 1, n_floor), rng.uniform(0, 1, n_floor), rng.normal(0, 0.003, n_floor)])]
    colors = [np.clip(np.asarray(FLOOR_COLOR) + rng.normal(0, 0.05, (n_floor, 3)), 0, 1)]
    labels = [np.full(n_floor, FLOOR)]
    objects = [(shapes[idx], *sample_object(shapes[idx], rng, int(n))) for idx, n in zip(chosen, counts)]
    placed = []
    for shape, pts, cols, radius in sorted(objects, key=lambda o: -o[3]):
        for _ in range(max_retries):
            center = rng.uniform(radius, 1 - radius, size=2)
            if all(np.hypot(*(center - c)) > radius + r + 0.02 for c, r in placed):
                break
        else:
            raise RuntimeError("object placement failed after retries")
        placed.append((center, radius))
        coords.append(pts + np.array([center[0], center[1], 0.0]))
        colors.append(cols)
        labels.append(np.full(len(pts), shape.class_id))
    return PointCloud(np.concatenate(coords), np.concatenate(colors), np.concatenate(labels))


@dataclass
class SceneDataset:
    clouds: list[PointCloud]
    classes: tuple[int, ...]
    seed: int = 0
    index: dict[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not self.index:
            for c in self.classes:
                counts = np.array([(cl.labels == c).sum() for cl in self.clouds])
                self.index[c] = np.flatnonzero(counts >= MIN_FOREGROUND)


def generate_dataset(classes, n_scenes: int, seed: int, m: int = 512, shapes=DEFAULT_SHAPES) -> SceneDataset:
    by_id = {s.class_id: s for s in shapes}
    pool = [by_id[c] for c in classes]
    rng = np.random.default_rng(seed)
    clouds = [generate_scene(pool, rng, m=m) for _ in range(n_scenes)]
    return SceneDataset(clouds, tuple(classes), seed)


# episodes --------------------------------------------------------------------


def _pick_cloud(dataset: SceneDataset, rng, cls: int, used: set, avoid: int | None = None) -> int:
    cand = [i for i in dataset.index[cls] if i not in used]
    if avoid is not None:
        cand = [i for i in cand if not (dataset.clouds[i].labels == avoid).any()]
    if not cand:
        raise RuntimeError(f"not enough clouds for class {cls}")
    return int(cand[rng.integers(len(cand))])


def noisy_class_multiset(declared: int, n_noisy: int, k_shot: int, candidates, rng, max_tries: int = 100):
    """Draw noisy classes uniformly from ``candidates`` until the clean shots stay the strict majority."""
    candidates = [c for c in candidates if c != declared]
    if n_noisy == 0:
        return []
    n_clean = k_shot - n_noisy
    if not candidates or n_clean < 1 or n_noisy > (n_clean - 1) * len(candidates):
        raise ValueError("clean-majority constraint unsatisfiable for this noise setting")
    for _ in range(max_tries):
        draw = [int(c) for c in rng.choice(candidates, size=n_noisy)]
        if clean_majority([declared] * n_clean + draw, declared):
            return draw
    raise ValueError("could not satisfy the clean-majority constraint")


def make_shot(dataset: SceneDataset, rng, declared: int, true_class: int, used: set) -> SupportShot:
    avoid = declared if true_class != declared else None
    idx = _pick_cloud(dataset, rng, true_class, used, avoid=avoid)
    used.add(idx)
    cloud = dataset.clouds[idx]
    return SupportShot(cloud, cloud.labels == true_class, declared, true_class)


def sample_episode(dataset: SceneDataset, n_way: int, k_shot: int, n_query: int, noise: NoiseConfig, rng,
                   noise_pool=None, classes=None) -> Episode:
    """One N-way K-shot episode with round(ratio K) noisy shots per way.

    In-episode noise marks objects of the other episode classes; out-episode
    noise draws from ``noise_pool`` (defaults to the dataset classes outside
    the episode); training noise draws from every other dataset class.
    """
    if classes is None:
        classes = [int(c) for c in rng.choice(dataset.classes, size=n_way, replace=False)]
    if noise.kind is NoiseKind.IN_EPISODE:
        candidates = classes
    elif noise.kind is NoiseKind.OUT_EPISODE:
        candidates = list(noise_pool) if noise_pool is not None else [c for c in dataset.classes if c not in classes]
    else:
        candidates = list(dataset.classes)
    n_noisy = noise.noisy_count(k_shot)
    used: set[int] = set()
    support = []
    for cls in classes:
        truths = [cls] * (k_shot - n_noisy) + noisy_class_multiset(cls, n_noisy, k_shot, candidates, rng)
        truths = [truths[i] for i in rng.permutation(k_shot)]
        support.append([make_shot(dataset, rng, cls, t, used) for t in truths])

    queries, labels = [], []
    for _ in range(n_query):
        cls = classes[int(rng.integers(n_way))]
        idx = _pick_cloud(dataset, rng, cls, used)
        used.add(idx)
        cloud = dataset.clouds[idx]
        queries.append(cloud)
        labels.append(episode_labels(cloud.labels, classes))
    return Episode(n_way, k_shot, support, queries, labels, list(classes), noise)


def episode_labels(labels, classes) -> np.ndarray:
    """Map dataset labels to 0 (background) and 1..N for the episode classes."""
    out = np.zeros(len(labels), dtype=np.int64)
    for i, c in enumerate(classes):
        out[labels == c] = i + 1
    return out


def episode_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, index])


def inject_training_noise(episodes, dataset: SceneDataset, rng, ratios=TRAINING_RATIOS):
    """Replace round(ratio K) shots per way of every episode, ratio drawn uniformly from ``ratios``.

    Replacement shots mark an object of another dataset class, declared as the way's class.
    """
    for ep in episodes:
        ratio = float(ratios[int(rng.integers(len(ratios)))])
        n_noisy = int(round(ratio * ep.k_shot))
        if n_noisy == 0:
            yield ep
            continue
        used = {id(s.cloud) for way in ep.support for s in way} | {id(q) for q in ep.queries}
        taken = {i for i, c in enumerate(dataset.clouds) if id(c) in used}
        support = []
        for cls, way in zip(ep.classes, ep.support):
            draw = noisy_class_multiset(cls, n_noisy, ep.k_shot, dataset.classes, rng)
            slots = rng.choice(ep.k_shot, size=n_noisy, replace=False)
            way = list(way)
            for slot, true_class in zip(slots, draw):
                way[slot] = make_shot(dataset, rng, cls, true_class, taken)
            support.append(way)
        yield Episode(ep.n_way, ep.k_shot, support, ep.queries, ep.query_labels, ep.classes,
                      NoiseConfig(NoiseKind.TRAINING, ratio))


def training_episodes(dataset: SceneDataset, n_way: int, k_shot: int, n_query: int, seed: int, count: int,
                      ratios=TRAINING_RATIOS):
    """Deterministic stream of noisy training episodes over the dataset classes."""
    clean = (sample_episode(dataset, n_way, k_shot, n_query, NoiseConfig(), episode_rng(seed, i)) for i in range(count))
    return inject_training_noise(clean, dataset, np.random.default_rng([seed, 10**6]), ratios)
