"""Experiment configuration: a flat dataclass loaded from a key-value YAML file."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from ..core import NoiseConfig, ScaleSpec
from ..fewshot import PropagationConfig
from ..losses import LossConfig


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    seed: int = 0
    # episodes
    n_way: int = 2
    k_shot: int = 5
    n_query: int = 2
    points: int = 512
    noise_kind: str = "in_episode"
    noise_ratio: float = 0.4
    # data
    base_scenes: int = 300
    novel_scenes: int = 300
    # network
    hidden: int = 64
    feat_dim: int = 64
    proj_dim: int = 128
    # objectives
    tau: float = 0.1
    lam: float = 0.1
    R: int = 4
    # inference
    alpha: float = 0.99
    k_nn: int = 10
    n_proto: int = 10
    head: str = "propagation"
    use_mdns: bool = True
    mdns_scales: list = field(default_factory=lambda: [[1, 1, 1], [2, 2, 1]])
    mdns_gammas: list = field(default_factory=lambda: [3.0, 1.0])
    mdns_graph_scope: str = "all"
    # optimisation
    pretrain_epochs: int = 100
    pretrain_lr: float = 1e-3
    pretrain_batch: int = 16
    train_iterations: int = 2000
    lr_backbone: float = 1e-4
    lr_head: float = 1e-3
    training_ratios: list = field(default_factory=lambda: [0.0, 0.2, 0.4])
    test_episodes: int = 100
    out: str = "runs/default"

    def __post_init__(self):
        try:
            self.noise
            self.loss
            self.propagation
            self.scales
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from exc
        if self.head not in ("propagation", "protonet"):
            raise ConfigError(f"unknown head {self.head!r}")
        if self.mdns_graph_scope not in ("all", "cell"):
            raise ConfigError(f"unknown MDNS graph scope {self.mdns_graph_scope!r}")
        if len(self.mdns_gammas) != len(self.mdns_scales):
            raise ConfigError("need one gamma per MDNS scale")
        if min(self.n_way, self.k_shot, self.n_query, self.points) < 1:
            raise ConfigError("n_way, k_shot, n_query and points must be positive")
        if any(not 0.0 <= r <= 0.6 for r in self.training_ratios):
            raise ConfigError("training noise ratios must lie in [0, 0.6]")

    @property
    def noise(self) -> NoiseConfig:
        return NoiseConfig(self.noise_kind, self.noise_ratio)

    @property
    def loss(self) -> LossConfig:
        return LossConfig(self.tau, self.lam, self.R)

    @property
    def propagation(self) -> PropagationConfig:
        return PropagationConfig(self.alpha, self.k_nn, self.n_proto)

    @property
    def scales(self) -> list[ScaleSpec]:
        return [ScaleSpec(*s) for s in self.mdns_scales]

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def load_config(path=None, **overrides) -> ExperimentConfig:
    values = {}
    if path is not None:
        try:
            values = yaml.safe_load(Path(path).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(values, dict):
            raise ConfigError("config file must be a key-value mapping")
    values.update({k: v for k, v in overrides.items() if v is not None})
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    try:
        return ExperimentConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
