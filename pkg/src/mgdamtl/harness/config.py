"""Experiment configuration.

Configs are JSON objects (see ``configs/`` for examples)::

    {
      "schema_version": 1,
      "method": "mgda_ub",
      "dataset": {"kind": "regression", "n_tasks": 3, ...},
      "model": {"encoder": "mlp", "d_repr": 8, "hidden": 32},
      "solver": {"max_iterations": 250, ...},
      "learning_rate": 0.1, "epochs": 5, "batch_size": 64, "seed": 0, ...
    }

Missing keys take the dataclass defaults, unknown keys are rejected. The
config hash is the first 12 hex digits of the SHA-256 of the canonical JSON
(sorted keys, ``output_dir`` excluded), so moving the output never changes it.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

from ..minnorm import SolverConfig

SCHEMA_VERSION = 1
METHODS = ("mgda", "mgda_ub", "uniform", "single_task", "grid")
DATASET_KINDS = ("regression", "competing", "multimnist")


class ConfigError(ValueError):
    pass


@dataclass
class DatasetConfig:
    kind: str = "regression"
    # regression
    n_tasks: int = 2
    d_in: int = 16
    d_repr: int = 4
    hidden: int = 0
    noise: float = 0.1
    n_samples: int = 1000
    # competing
    angle_deg: float = 60.0
    # multimnist; an empty mnist_dir selects the bundled 8x8 digits stand-in
    mnist_dir: str = ""
    n_train: int = 10_000
    n_test: int = 2_000
    shift: int = 8
    combine: str = "max"
    val_fraction: float = 0.1
    test_fraction: float = 0.1


@dataclass
class ModelConfig:
    encoder: str = "linear"
    d_repr: int = 4
    hidden: int = 0
    activation: str = "tanh"


@dataclass
class ExperimentConfig:
    schema_version: int = SCHEMA_VERSION
    method: str = "mgda_ub"
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    learning_rate: float = 0.1
    # halve the rate every this many epochs; 0 keeps it constant
    halve_every: int = 0
    epochs: int = 1
    # 0 means full batch
    batch_size: int = 64
    # 0 means no cap
    max_steps: int = 0
    seed: int = 0
    normalize: str = "none"
    # single_task: which task to train, -1 trains one dedicated model per task
    task: int = -1
    # grid: spacing of the static weight lattice
    grid_step: float = 0.05
    # grid selection metric: "auto", "mean_val_acc" or "neg_mean_val_loss"
    select: str = "auto"
    output_dir: str = "runs"

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {self.schema_version} (expected {SCHEMA_VERSION})")
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; choose from {', '.join(METHODS)}")
        if self.dataset.kind not in DATASET_KINDS:
            raise ConfigError(f"unknown dataset kind {self.dataset.kind!r}")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 0 or self.max_steps < 0 or self.halve_every < 0:
            raise ConfigError("batch_size, max_steps and halve_every must be >= 0")
        if self.normalize not in ("none", "l2", "loss"):
            raise ConfigError(f"unknown normalize {self.normalize!r}")
        if self.select not in ("auto", "mean_val_acc", "neg_mean_val_loss"):
            raise ConfigError(f"unknown select {self.select!r}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def config_hash(self) -> str:
        d = self.to_dict()
        d.pop("output_dir")
        canon = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:12]

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        d = dict(d)
        nested = {"dataset": DatasetConfig, "model": ModelConfig, "solver": SolverConfig}
        kwargs = {}
        for key, sub in nested.items():
            if key in d:
                kwargs[key] = _build(sub, d.pop(key), key)
        try:
            kwargs.update(_check_keys(cls, d, "config"))
            return cls(**kwargs)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"malformed config: {exc}") from exc

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed config JSON: {exc}") from exc
        return cls.from_dict(d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())


def _check_keys(cls, d: dict, where: str) -> dict:
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(d) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    return d


def _build(cls, d, where: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be a JSON object")
    try:
        return cls(**_check_keys(cls, d, where))
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"malformed {where}: {exc}") from exc
