"""Experiment configuration: a fixed JSON schema where unknown keys are errors.

Example::

    {
      "task": "regression",
      "dataset": {"format": "csv", "path": "data/boston.csv"},
      "architecture": {"hidden_widths": [50], "activation": "relu",
                       "dropout_rate": 0.05, "input_dropout": true},
      "objective": {"alpha": 0.5, "K": 10, "tau": 1.0, "weight_decay": 1.0,
                    "include_likelihood_constant": true},
      "optimiser": {"kind": "adam", "learning_rate": 0.001, "batch_size": 32,
                    "epochs": 100, "momentum": 0.9},
      "split": {"n_splits": 20, "test_fraction": 0.1, "seed": 0},
      "K_test": 100,
      "tau_grid": [0.1, 0.5, 1, 2, 5, 10],
      "seed": 0,
      "output_dir": "out"
    }

``weight_decay`` is the coefficient on the summed (not averaged) energy:
layer ``i`` gets ``keep_prob_i * weight_decay * ||M_i||^2``. In the
lengthscale reading of the Gaussian prior this is ``l^2 / 2``.
``input_dropout`` puts a dropout layer in front of the first weight layer
too, so that every weight matrix gets one.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path


class ConfigError(ValueError):
    pass


def _from_dict(cls, d, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(d) - set(names))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    for k, v in d.items():
        sub = _NESTED.get((cls, k))
        kwargs[k] = _from_dict(sub, v, f"{where}.{k}") if sub is not None else v
    try:
        return cls(**kwargs)
    except TypeError as e:
        raise ConfigError(f"{where}: {e}") from None


@dataclass
class DatasetConfig:
    format: str = "csv"
    path: str | None = None
    train_images: str | None = None
    train_labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None
    max_train: int | None = None

    def validate(self, check_files: bool = True):
        if self.format not in ("csv", "idx"):
            raise ConfigError(f"dataset.format must be 'csv' or 'idx', got {self.format!r}")
        files = [self.path] if self.format == "csv" else [
            self.train_images, self.train_labels, self.test_images, self.test_labels]
        if any(f is None for f in files):
            raise ConfigError(f"dataset: missing file path(s) for format {self.format!r}")
        if check_files:
            for f in files:
                if not Path(f).exists():
                    raise ConfigError(f"dataset: file not found: {f}")


@dataclass
class ArchitectureConfig:
    hidden_widths: list = field(default_factory=lambda: [50])
    activation: str = "relu"
    dropout_rate: float = 0.05
    input_dropout: bool = True


@dataclass
class ObjectiveConfig:
    alpha: float = 0.5
    K: int = 10
    tau: float = 1.0
    weight_decay: float = 1.0
    include_likelihood_constant: bool = True


@dataclass
class OptimiserConfig:
    kind: str = "adam"
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 100
    momentum: float = 0.9


@dataclass
class SplitConfig:
    n_splits: int = 1
    test_fraction: float = 0.1
    seed: int = 0


@dataclass
class ExperimentConfig:
    task: str = "regression"
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    architecture: ArchitectureConfig = field(default_factory=ArchitectureConfig)
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)
    optimiser: OptimiserConfig = field(default_factory=OptimiserConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    K_test: int = 100
    tau_grid: list | None = None
    seed: int = 0
    output_dir: str = "out"

    def validate(self, check_files: bool = True) -> "ExperimentConfig":
        if self.task not in ("regression", "classification"):
            raise ConfigError(f"task must be 'regression' or 'classification', got {self.task!r}")
        self.dataset.validate(check_files)
        if self.task == "classification" and self.dataset.format != "idx":
            raise ConfigError("classification expects IDX image/label files")
        if self.optimiser.kind not in ("adam", "sgd_momentum"):
            raise ConfigError("optimiser.kind must be 'adam' or 'sgd_momentum'")
        if self.optimiser.epochs < 0:
            raise ConfigError("optimiser.epochs must be >= 0")
        if self.optimiser.batch_size < 1:
            raise ConfigError("optimiser.batch_size must be >= 1")
        if not 0.0 < self.split.test_fraction < 1.0:
            raise ConfigError("split.test_fraction must lie in (0, 1)")
        if self.split.n_splits < 1:
            raise ConfigError("split.n_splits must be >= 1")
        if self.objective.K < 1 or self.K_test < 1:
            raise ConfigError("K and K_test must be >= 1")
        if not self.objective.tau > 0:
            raise ConfigError("objective.tau must be positive")
        if self.objective.weight_decay < 0:
            raise ConfigError("objective.weight_decay must be non-negative")
        if not 0.0 <= self.architecture.dropout_rate < 1.0:
            raise ConfigError("architecture.dropout_rate must lie in [0, 1)")
        if self.architecture.activation not in ("relu", "identity"):
            raise ConfigError("architecture.activation must be 'relu' or 'identity'")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        return _from_dict(cls, d, "config")

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"invalid JSON: {e}") from None
        return cls.from_dict(d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_json(Path(path).read_text())


_NESTED = {
    (ExperimentConfig, "dataset"): DatasetConfig,
    (ExperimentConfig, "architecture"): ArchitectureConfig,
    (ExperimentConfig, "objective"): ObjectiveConfig,
    (ExperimentConfig, "optimiser"): OptimiserConfig,
    (ExperimentConfig, "split"): SplitConfig,
}
