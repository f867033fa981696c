"""Experiment configuration shared by the training loop and the CLI."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields

from .gnn_engine.policy import BackwardPolicy


@dataclass
class TrainConfig:
    model: str = "gcn"
    layers: int = 2
    hidden: int = 64
    epochs: int = 200
    lr: float = 0.01
    seed: int = 0
    mode: str = "exact"
    budget_C: float = 0.1
    alpha: float = 0.02
    alloc_interval: int = 10
    cache_interval: int = 10
    switch_fraction: float = 0.8
    track_stability: bool = True
    stability_lag: int = 10
    # on-disk dataset; all four paths or none
    edges: str | None = None
    features: str | None = None
    labels: str | None = None
    masks: str | None = None
    # synthetic fallback
    sbm_nodes: int = 2000
    sbm_classes: int = 4
    sbm_p_in: float = 0.01
    sbm_p_out: float = 0.001
    sbm_feat_dim: int = 16
    sbm_noise: float = 1.0
    sbm_seed: int | None = None

    def __post_init__(self):
        if self.model not in ("gcn", "sage"):
            raise ValueError("model must be 'gcn' or 'sage'")
        if self.layers < 1 or self.hidden < 1 or self.epochs < 1:
            raise ValueError("layers, hidden and epochs must be positive")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        paths = [self.edges, self.features, self.labels, self.masks]
        if any(paths) and not all(paths):
            raise ValueError("edges, features, labels and masks must be given together")
        self.policy()  # validates mode/budget/intervals

    def policy(self) -> BackwardPolicy:
        return BackwardPolicy(
            mode=self.mode,
            budget_C=self.budget_C,
            alloc_interval=self.alloc_interval,
            cache_interval=self.cache_interval,
            switch_fraction=self.switch_fraction,
            alpha=self.alpha,
        )

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def from_json(cls, path, **overrides) -> "TrainConfig":
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        unknown = set(data) - set(cls.field_names())
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        data.update(overrides)
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)
