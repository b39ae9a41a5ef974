"""Hyperparameters shared by the training routines."""
from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigError


@dataclass
class Hyper:
    lr: float = 0.0005
    epochs: int = 250  # source pre-training
    finetune_epochs: int = 250
    batch_size: int = 32
    # siamese objective: "verification" (sigmoid unit, BCE) or "distance"
    objective: str = "verification"
    distance: str = "euclidean"  # or "sqeuclidean"
    kappa: float = 1.0
    margin: float = 5.0  # clamp on the different-class distance; inf gives the unclamped sum
    distance_weight: float = 1.0  # weight of the pair term in the joint objective
    head_hidden: int = 8
    iterations: int = 25
    epochs_per_iter: int = 10
    lam: float = 0.1
    pairs_per_epoch: int = 0  # 0: one pair per training sample
    max_retries: int = 50
    source_aspf: bool = False  # run the adaptive loop during source pre-training too

    def __post_init__(self):
        if self.objective not in ("verification", "distance"):
            raise ConfigError(f"unknown objective {self.objective!r}")
        if self.distance not in ("euclidean", "sqeuclidean"):
            raise ConfigError(f"unknown distance {self.distance!r}")
        if self.lr <= 0 or self.batch_size < 1:
            raise ConfigError("lr and batch_size must be positive")
        if min(self.epochs, self.finetune_epochs, self.iterations, self.epochs_per_iter) < 0:
            raise ConfigError("epoch and iteration counts must be non-negative")
        if self.kappa < 0 or self.lam < 0 or self.margin <= 0:
            raise ConfigError("kappa and lam must be >= 0, margin > 0")
