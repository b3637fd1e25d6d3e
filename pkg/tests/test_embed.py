import json

import numpy as np
import pytest

from noisyfss.autograd import Tensor, concat, segment_mean, stack
from noisyfss.core import PointCloud
from noisyfss.embed import (
    EmbeddingNet,
    OptimizerState,
    adam_step,
    backward,
    forward,
    load_checkpoint,
    save_checkpoint,
)

from gradcheck import max_relative_error


def random_cloud(m=32, seed=0):
    rng = np.random.default_rng(seed)
    return PointCloud(rng.uniform(size=(m, 3)), rng.uniform(size=(m, 3)), rng.integers(0, 3, m))


def small_net(seed=0):
    return EmbeddingNet(hidden=6, feat_dim=5, proj_dim=4, seed=seed, dtype=np.float64)


def numeric_op_grad(f, x, h=1e-6):
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        up, down = x.copy(), x.copy()
        up[i] += h
        down[i] -= h
        g[i] = (f(up) - f(down)) / (2 * h)
    return g


@pytest.mark.parametrize(
    "op",
    [
        lambda t: (t @ np.arange(12.0).reshape(4, 3) * 0.1).sum(),
        lambda t: t.max(axis=0).sum(),
        lambda t: t.logsumexp(axis=1).sum(),
        lambda t: (t.normalize() * np.arange(4.0)).sum(),
        lambda t: (segment_mean(t, np.array([0, 1, 0, 1, 2]), 3) * np.arange(4.0)).sum(),
        lambda t: (t[(np.array([0, 0, 3]), np.array([1, 1, 2]))] * np.array([1.0, 2.0, 3.0])).sum(),
        lambda t: (concat([t, t * 2.0], axis=1) * np.arange(8.0)).sum(),
        lambda t: (t.expand(0, 3) * np.arange(3.0)[:, None, None]).sum(),
        lambda t: (stack([t[0], t[1]]) * t[2]).sum(),
        lambda t: ((t * t).exp().log() - t.reciprocal() * 0.1).sum(),
        lambda t: (t.relu().mean(axis=0) * np.arange(4.0)).sum(),
    ],
)
def test_autograd_ops_match_finite_differences(op):
    rng = np.random.default_rng(0)
    x = rng.uniform(0.5, 1.5, size=(5, 4)) * rng.choice([-1, 1], size=(5, 4))
    x[np.abs(x) < 0.6] = 0.8
    t = Tensor(x.copy(), requires_grad=True)
    op(t).backward()
    numeric = numeric_op_grad(lambda a: op(Tensor(a)).item(), x)
    np.testing.assert_allclose(t.grad, numeric, rtol=1e-6, atol=1e-8)


def test_linear_layer_gradients():
    # d/dW sum(Wx + b) = 1 x^T, d/db = 1
    x = np.array([1.0, -2.0, 3.0])
    W = Tensor(np.random.default_rng(0).normal(size=(2, 3)), requires_grad=True)
    b = Tensor(np.zeros(2), requires_grad=True)
    (W @ x + b).sum().backward()
    np.testing.assert_array_equal(b.grad, np.ones(2))
    np.testing.assert_array_equal(W.grad, np.outer(np.ones(2), x))


def test_unused_parameter_gets_exact_zero():
    net = small_net()
    feats, _ = net(random_cloud())
    grads = backward(net, feats.sum())
    assert np.all(grads["wp"] == 0) and np.all(grads["bp"] == 0)


def test_nonfinite_loss_rejected():
    with pytest.raises(FloatingPointError):
        backward(small_net(), Tensor(np.array(np.nan)))


def test_projection_rows_unit_norm():
    _, proj = forward(EmbeddingNet(seed=1), random_cloud(64))
    np.testing.assert_allclose(np.linalg.norm(proj, axis=1), 1.0, atol=1e-6)
    assert proj.shape == (64, 128)


def test_zero_projection_layer_maps_to_first_basis_vector():
    net = EmbeddingNet(seed=0)
    net.params["wp"].data[:] = 0
    net.params["bp"].data[:] = 0
    _, proj = forward(net, random_cloud())
    expected = np.zeros(128)
    expected[0] = 1
    np.testing.assert_array_equal(proj, np.tile(expected, (32, 1)))


def test_permutation_equivariance():
    net = EmbeddingNet(seed=2, dtype=np.float64)
    cloud = random_cloud(40)
    perm = np.random.default_rng(1).permutation(40)
    permuted = PointCloud(cloud.coords[perm], cloud.colors[perm], cloud.labels[perm])
    f, p = forward(net, cloud)
    fp, pp = forward(net, permuted)
    np.testing.assert_allclose(fp, f[perm], atol=1e-12)
    np.testing.assert_allclose(pp, p[perm], atol=1e-12)


def test_duplicating_points_keeps_global_descriptor():
    net = EmbeddingNet(seed=3, dtype=np.float64)
    cloud = random_cloud(20)
    doubled = PointCloud(np.vstack([cloud.coords] * 2), np.vstack([cloud.colors] * 2), np.tile(cloud.labels, 2))
    x = Tensor(cloud.input_features())
    x2 = Tensor(doubled.input_features())

    def pooled(t):
        p = net.params
        h = (t @ p["w1"] + p["b1"]).relu()
        return (h @ p["w2"] + p["b2"]).relu().max(axis=-2).data

    np.testing.assert_array_equal(pooled(x), pooled(x2))
    f, _ = forward(net, cloud)
    f2, _ = forward(net, doubled)
    np.testing.assert_allclose(f2[:20], f, atol=1e-12)


def test_forward_is_deterministic():
    a = forward(EmbeddingNet(seed=5), random_cloud())
    b = forward(EmbeddingNet(seed=5), random_cloud())
    assert a[0].tobytes() == b[0].tobytes() and a[1].tobytes() == b[1].tobytes()


def test_forward_rejects_nonfinite_input():
    x = random_cloud().input_features()
    x[0, 0] = np.inf
    with pytest.raises(ValueError):
        EmbeddingNet()(x)


def test_network_gradient_matches_finite_differences():
    net = small_net(seed=4)
    x = random_cloud(24, seed=3).input_features()
    weights = np.random.default_rng(9).normal(size=(24, 4))

    def loss(n):
        feats, proj = n(x)
        return (proj * weights).sum() + (feats * feats).mean()

    assert max_relative_error(net, loss) < 1e-4


def test_adam_first_step_moves_by_lr():
    net = EmbeddingNet(hidden=2, feat_dim=2, proj_dim=2, dtype=np.float64)
    before = net.params["b1"].data.copy()
    grads = {"b1": np.ones_like(before)}
    adam_step(net, grads, OptimizerState(), 0.001)
    np.testing.assert_allclose(before - net.params["b1"].data, 0.001, rtol=1e-6)


def test_adam_zero_gradient_and_sign():
    net = EmbeddingNet(hidden=2, feat_dim=2, proj_dim=2, dtype=np.float64)
    state = OptimizerState()
    w = net.params["w1"].data.copy()
    adam_step(net, {"w1": np.zeros_like(w)}, state, 0.01)
    np.testing.assert_array_equal(net.params["w1"].data, w)
    g = np.where(np.arange(w.size).reshape(w.shape) % 2, 1.0, -1.0)
    adam_step(net, {"w1": g}, state, 0.01)
    mid = net.params["w1"].data.copy()
    adam_step(net, {"w1": g}, state, 0.01)
    assert np.all(np.sign(mid - w) == -np.sign(g))
    assert np.all(np.sign(net.params["w1"].data - mid) == -np.sign(g))


def test_adam_per_parameter_rates():
    net = EmbeddingNet(hidden=2, feat_dim=2, proj_dim=2, dtype=np.float64)
    b1, bp = net.params["b1"].data.copy(), net.params["bp"].data.copy()
    adam_step(net, {"b1": np.ones(2), "bp": np.ones(2)}, OptimizerState(), {"b1": 1e-4, "bp": 1e-3})
    np.testing.assert_allclose(b1 - net.params["b1"].data, 1e-4, rtol=1e-6)
    np.testing.assert_allclose(bp - net.params["bp"].data, 1e-3, rtol=1e-6)


def test_checkpoint_roundtrip(tmp_path):
    net = EmbeddingNet(hidden=8, feat_dim=6, proj_dim=5, seed=11)
    save_checkpoint(tmp_path / "net.ckpt", net, step=42)
    raw = (tmp_path / "net.ckpt").read_bytes()
    header = json.loads(raw[: raw.index(b"\n")])
    assert header["step"] == 42 and header["seed"] == 11
    assert [l["name"] for l in header["layers"]] == list(net.params)
    back, _ = load_checkpoint(tmp_path / "net.ckpt")
    for name, p in net.params.items():
        np.testing.assert_array_equal(back.params[name].data, p.data)
    assert len(raw) - raw.index(b"\n") - 1 == 4 * net.n_parameters
