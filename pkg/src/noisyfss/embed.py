"""Point embedding network, Adam optimiser and checkpoint I/O."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autograd import Tensor, concat
from .core import INPUT_DIM, PointCloud

TRUNK = ("w1", "b1", "w2", "b2", "w3", "b3")
PROJECTION = ("wp", "bp")
CLASSIFIER = ("wc", "bc")


class EmbeddingNet:
    """Pointwise MLP with a max-pooled global descriptor.

    trunk: 9 -> hidden -> hidden (ReLU); the pooled trunk output is appended to
    every point and mapped to ``feat_dim`` (ReLU). The projection head is a
    single affine layer to ``proj_dim`` followed by L2 normalisation.
    """

    def __init__(self, hidden=64, feat_dim=64, proj_dim=128, n_classes=None, seed=0, dtype=np.float32):
        self.hidden, self.feat_dim, self.proj_dim = hidden, feat_dim, proj_dim
        self.seed = seed
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        shapes = {
            "w1": (INPUT_DIM, hidden), "b1": (hidden,),
            "w2": (hidden, hidden), "b2": (hidden,),
            "w3": (2 * hidden, feat_dim), "b3": (feat_dim,),
            "wp": (feat_dim, proj_dim), "bp": (proj_dim,),
        }
        self.params: dict[str, Tensor] = {}
        for name, shape in shapes.items():
            self.params[name] = self._init(rng, shape)
        if n_classes is not None:
            self.add_classifier(n_classes, rng)

    def _init(self, rng, shape):
        if len(shape) == 1:
            value = np.zeros(shape)
        else:
            value = rng.normal(0.0, np.sqrt(2.0 / shape[0]), size=shape)
        return Tensor(value.astype(self.dtype), requires_grad=True)

    def add_classifier(self, n_classes: int, rng=None):
        rng = rng if rng is not None else np.random.default_rng(self.seed + 1)
        self.params["wc"] = self._init(rng, (self.feat_dim, n_classes))
        self.params["bc"] = self._init(rng, (n_classes,))

    def drop_classifier(self):
        for name in CLASSIFIER:
            self.params.pop(name, None)

    @property
    def n_parameters(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def astype(self, dtype) -> "EmbeddingNet":
        clone = self.copy()
        clone.dtype = np.dtype(dtype)
        for name, p in clone.params.items():
            clone.params[name] = Tensor(p.data.astype(dtype), requires_grad=True)
        return clone

    def copy(self) -> "EmbeddingNet":
        clone = object.__new__(EmbeddingNet)
        clone.__dict__.update(self.__dict__)
        clone.params = {k: Tensor(v.data.copy(), requires_grad=True) for k, v in self.params.items()}
        return clone

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        return {k: (np.zeros_like(p.data) if p.grad is None else p.grad) for k, p in self.params.items()}

    # forward ------------------------------------------------------------------
    def trunk(self, x: Tensor) -> Tensor:
        p = self.params
        h = (x @ p["w1"] + p["b1"]).relu()
        h = (h @ p["w2"] + p["b2"]).relu()
        pooled = h.max(axis=-2)
        h = concat([h, pooled.expand(-2, h.shape[-2])], axis=-1)
        return (h @ p["w3"] + p["b3"]).relu()

    def project(self, feats: Tensor) -> Tensor:
        return (feats @ self.params["wp"] + self.params["bp"]).normalize()

    def classify(self, feats: Tensor) -> Tensor:
        return feats @ self.params["wc"] + self.params["bc"]

    def __call__(self, inputs) -> tuple[Tensor, Tensor]:
        """Embed a cloud, an m x 9 array or a batch B x m x 9; returns (features, projections)."""
        x = inputs.input_features() if isinstance(inputs, PointCloud) else np.asarray(inputs)
        if not np.isfinite(x).all():
            raise ValueError("non-finite network input")
        feats = self.trunk(Tensor(x.astype(self.dtype)))
        return feats, self.project(feats)


def forward(net: EmbeddingNet, cloud) -> tuple[np.ndarray, np.ndarray]:
    """Plain-array forward pass: (m x feat_dim features, m x proj_dim unit projections)."""
    feats, proj = net(cloud)
    return feats.data, proj.data


def backward(net: EmbeddingNet, loss: Tensor) -> dict[str, np.ndarray]:
    net.zero_grad()
    if not np.isfinite(loss.data).all():
        raise FloatingPointError("loss is not finite")
    loss.backward()
    return net.grads()


@dataclass
class OptimizerState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(net: EmbeddingNet, grads: dict, state: OptimizerState, lr) -> EmbeddingNet:
    """In-place Adam update with bias correction. ``lr`` is a float or a per-parameter dict."""
    state.step += 1
    t = state.step
    for name, p in net.params.items():
        g = grads.get(name)
        if g is None:
            continue
        if not np.isfinite(g).all():
            raise FloatingPointError(f"non-finite gradient for {name}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        state.m[name] = state.beta1 * state.m[name] + (1 - state.beta1) * g
        state.v[name] = state.beta2 * state.v[name] + (1 - state.beta2) * g * g
        m_hat = state.m[name] / (1 - state.beta1**t)
        v_hat = state.v[name] / (1 - state.beta2**t)
        rate = lr[name] if isinstance(lr, dict) else lr
        p.data = (p.data - rate * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.data.dtype)
    return net


def save_checkpoint(path, net: EmbeddingNet, step: int = 0) -> None:
    """JSON header line followed by little-endian float32 parameter blocks in header order."""
    header = {
        "layers": [{"name": k, "shape": list(v.shape)} for k, v in net.params.items()],
        "step": int(step),
        "seed": int(net.seed),
        "hidden": net.hidden,
        "feat_dim": net.feat_dim,
        "proj_dim": net.proj_dim,
    }
    body = b"".join(v.data.astype("<f4").tobytes() for v in net.params.values())
    Path(path).write_bytes(json.dumps(header).encode() + b"\n" + body)


def load_checkpoint(path) -> tuple[EmbeddingNet, dict]:
    raw = Path(path).read_bytes()
    split = raw.index(b"\n")
    header = json.loads(raw[:split])
    net = EmbeddingNet(header["hidden"], header["feat_dim"], header["proj_dim"], seed=header["seed"])
    net.params = {}
    offset = split + 1
    for layer in header["layers"]:
        n = int(np.prod(layer["shape"]))
        value = np.frombuffer(raw, dtype="<f4", count=n, offset=offset).reshape(layer["shape"])
        net.params[layer["name"]] = Tensor(value.astype(np.float32), requires_grad=True)
        offset += 4 * n
    if offset != len(raw):
        raise ValueError("checkpoint size does not match its header")
    return net, header
