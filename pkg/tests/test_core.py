import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from noisyfss.core import (
    Episode,
    NoiseConfig,
    PointCloud,
    ScaleSpec,
    SupportShot,
    assign_to_seeds,
    clean_majority,
    farthest_point_sampling,
    mean_foreground_feature,
    read_cloud,
    read_cloud_dir,
    split_foreground,
    write_cloud,
    write_cloud_dir,
)


def make_shot(coords, mask=None, declared=1, true=1):
    coords = np.asarray(coords, dtype=float)
    m = len(coords)
    cloud = PointCloud(coords, np.full((m, 3), 0.5), np.full(m, true))
    return SupportShot(cloud, np.ones(m, bool) if mask is None else mask, declared, true)


def brute_min_dist(x, idx, prefix):
    return min(np.linalg.norm(x[idx] - x[j]) for j in prefix)


def test_fps_hand_case():
    assert farthest_point_sampling([0.0, 1.0, 10.0], 2).tolist() == [2, 0]


def test_fps_exhaustion_is_permutation():
    x = np.random.default_rng(0).normal(size=(7, 3))
    assert sorted(farthest_point_sampling(x, 7).tolist()) == list(range(7))


def test_fps_identical_points_tie_to_lowest_index():
    assert farthest_point_sampling(np.ones((5, 2)), 2).tolist() == [0, 1]


def test_fps_rounded_tie_goes_to_lowest_index():
    # two points are always equidistant from their centroid, however the sum rounds
    rng = np.random.default_rng(0)
    for _ in range(200):
        assert farthest_point_sampling(rng.normal(size=(2, 3)), 1).tolist() == [0]


def test_fps_errors():
    with pytest.raises(ValueError, match="insufficient points"):
        farthest_point_sampling(np.zeros((3, 2)), 4)
    with pytest.raises(ValueError):
        farthest_point_sampling(np.zeros((3, 2)), 0)


def test_fps_random_start_is_seeded():
    x = np.random.default_rng(1).normal(size=(20, 2))
    a = farthest_point_sampling(x, 5, rng=np.random.default_rng(3))
    b = farthest_point_sampling(x, 5, rng=np.random.default_rng(3))
    assert a.tolist() == b.tolist()


@settings(deadline=None, max_examples=60)
@given(st.integers(2, 40), st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_fps_maximin_property(n, d, seed):
    x = np.random.default_rng(seed).normal(size=(n, d))
    count = max(2, n // 2)
    sel = farthest_point_sampling(x, count).tolist()
    for t in range(1, count):
        prefix = sel[:t]
        chosen = brute_min_dist(x, sel[t], prefix)
        rest = [j for j in range(n) if j not in sel[: t + 1]]
        assert all(chosen >= brute_min_dist(x, j, prefix) - 1e-12 for j in rest)


def test_assign_hand_case():
    assert assign_to_seeds([0.0, 1.0, 10.0], [2, 0]).tolist() == [1, 1, 0]


def test_assign_identity_and_degenerate():
    x = np.random.default_rng(0).normal(size=(6, 2))
    assert assign_to_seeds(x, np.arange(6)).tolist() == list(range(6))
    assert assign_to_seeds(np.zeros((4, 3)), [0, 1]).tolist() == [0, 0, 0, 0]
    with pytest.raises(ValueError):
        assign_to_seeds(x, [])


@settings(deadline=None, max_examples=40)
@given(arrays(float, (12, 3), elements=st.floats(-5, 5)), st.integers(0, 2**31 - 1))
def test_assign_row_order_invariant(x, seed):
    seeds = [0, 5, 9]
    comp = assign_to_seeds(x, seeds)
    perm = np.random.default_rng(seed).permutation(12)
    inv = np.argsort(perm)
    comp_perm = assign_to_seeds(x[perm], inv[seeds])
    assert comp_perm.tolist() == comp[perm].tolist()
    assert assign_to_seeds(x, seeds).tolist() == comp.tolist()


def test_split_unit_cube_2x2x1():
    g = np.linspace(0.0, 1.0, 5)
    cube = np.array(np.meshgrid(g, g, g)).reshape(3, -1).T
    coords = np.vstack([cube, [[0.25, 0.25, 0.5], [0.75, 0.75, 0.5]]])
    shot = make_shot(coords)
    cells = split_foreground(shot, ScaleSpec(2, 2, 1))
    assert len(cells) == 4
    first, last = len(coords) - 2, len(coords) - 1
    assert first in cells[0] and last in cells[3]


def test_split_identity_and_degenerate():
    coords = np.random.default_rng(0).uniform(size=(30, 3))
    shot = make_shot(coords)
    (only,) = split_foreground(shot, ScaleSpec(1, 1, 1))
    assert only.tolist() == list(range(30))
    assert len(split_foreground(make_shot(np.ones((10, 3))), ScaleSpec(2, 2, 1))) == 1


def test_split_boundary_goes_to_higher_cell():
    shot = make_shot([[0.0, 0, 0], [0.5, 0, 0], [1.0, 0, 0]])
    cells = split_foreground(shot, ScaleSpec(2, 1, 1))
    assert [c.tolist() for c in cells] == [[0], [1, 2]]


def test_split_empty_foreground_errors():
    shot = make_shot(np.zeros((3, 3)), mask=np.zeros(3, bool))
    with pytest.raises(ValueError):
        split_foreground(shot, ScaleSpec())


@settings(deadline=None, max_examples=50)
@given(st.integers(0, 2**31 - 1), st.integers(1, 3), st.integers(1, 3), st.integers(1, 3))
def test_split_partitions_foreground(seed, nx, ny, nz):
    rng = np.random.default_rng(seed)
    coords = rng.uniform(size=(40, 3))
    mask = rng.uniform(size=40) < 0.6
    mask[0] = True
    shot = make_shot(coords, mask)
    cells = split_foreground(shot, ScaleSpec(nx, ny, nz))
    joined = np.concatenate(cells)
    assert len(cells) <= nx * ny * nz
    assert sorted(joined.tolist()) == np.flatnonzero(mask).tolist()
    assert len(set(joined.tolist())) == len(joined)


def test_mean_foreground_feature():
    assert mean_foreground_feature([[1, 0], [0, 1]], [1, 1]).tolist() == [0.5, 0.5]
    assert mean_foreground_feature([[3, 4]], [1]).tolist() == [3, 4]
    assert mean_foreground_feature([[2, 0], [0, 2], [2, 2]], [1, 1, 0]).tolist() == [1, 1]
    with pytest.raises(ValueError):
        mean_foreground_feature([[1, 2]], [0])


def test_noise_config_limits():
    assert NoiseConfig("in_episode", 0.4).noisy_count(5) == 2
    assert NoiseConfig("out_episode", 0.6).noisy_count(5) == 3
    with pytest.raises(ValueError):
        NoiseConfig("in_episode", 0.6)
    with pytest.raises(ValueError):
        NoiseConfig("none", 0.2)


def test_clean_majority():
    assert clean_majority([1, 1, 1, 2, 2], 1)
    assert not clean_majority([1, 1, 2, 2, 2], 1)
    assert clean_majority([1, 1, 2, 3, 4], 1)
    assert not clean_majority([1, 2, 2, 3, 4], 1)


def test_episode_rejects_noisy_majority():
    clean = make_shot(np.zeros((3, 3)), declared=1, true=1)
    noisy = make_shot(np.zeros((3, 3)), declared=1, true=2)
    with pytest.raises(ValueError, match="outnumber"):
        Episode(1, 3, [[clean, noisy, noisy]], [], [], [1])
    with pytest.raises(ValueError, match="distinct"):
        Episode(2, 1, [[clean], [clean]], [], [], [1, 1])


def test_pointcloud_validation():
    with pytest.raises(ValueError):
        PointCloud(np.full((2, 3), np.nan), np.zeros((2, 3)), [0, 0])
    with pytest.raises(ValueError):
        PointCloud(np.zeros((2, 3)), np.full((2, 3), 1.5), [0, 0])
    cloud = PointCloud(np.random.default_rng(0).uniform(size=(5, 3)), np.zeros((5, 3)), np.zeros(5))
    feats = cloud.input_features()
    assert feats.shape == (5, 9)
    assert feats[:, 6:].min() == 0.0 and feats[:, 6:].max() == 1.0


def test_cloud_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    cloud = PointCloud(rng.uniform(size=(50, 3)), rng.uniform(size=(50, 3)), rng.integers(0, 4, 50))
    write_cloud(tmp_path / "c.bin", cloud)
    raw = (tmp_path / "c.bin").read_bytes()
    assert len(raw) == 50 * 28
    back = read_cloud(tmp_path / "c.bin")
    np.testing.assert_allclose(back.coords, cloud.coords, atol=1e-6)
    assert back.labels.tolist() == cloud.labels.tolist()
    first = np.frombuffer(raw[:24], dtype="<f4")
    np.testing.assert_allclose(first[:3], cloud.coords[0], atol=1e-6)
    assert int.from_bytes(raw[24:28], "little") == cloud.labels[0]

    write_cloud_dir(tmp_path / "d", [cloud, cloud], {0: "floor", 1: "a", 2: "b", 3: "c"}, seed=7)
    clouds, manifest = read_cloud_dir(tmp_path / "d")
    assert manifest["point_count"] == 50 and manifest["seed"] == 7 and len(clouds) == 2
