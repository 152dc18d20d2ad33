"""Experiment configuration: nested dataclasses <-> YAML."""

from __future__ import annotations

import dataclasses
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import yaml

from .errors import ConfigError
from .gcn import INITS, GcnArchitecture
from .regularizers import KINDS, RegularizerSpec
from .training import TrainConfig

DESK_EPOCHS = 600
FULL_EPOCHS = 2700


@dataclass(frozen=True)
class DatasetConfig:
    kind: str = "synthetic"  # or "file"
    path: str | None = None
    n_classes: int = 8
    samples_per_class: int = 72
    joints: int = 15
    frames: int = 20
    noise: float = 0.15
    seed: int = 0
    target_frames: int = 8

    def __post_init__(self):
        if self.kind not in ("synthetic", "file"):
            raise ConfigError(f"dataset.kind must be 'synthetic' or 'file', got {self.kind!r}")
        if self.kind == "file" and not self.path:
            raise ConfigError("dataset.kind='file' needs dataset.path")
        if self.target_frames < 1:
            raise ConfigError("dataset.target_frames must be >= 1")


@dataclass(frozen=True)
class ArchConfig:
    heads: int = 1
    conv_filters: int = 32
    activation: str = "relu"
    fan_in_gain: bool = True
    init: str = "phase_uniform"

    def __post_init__(self):
        if self.init not in INITS:
            raise ConfigError(f"arch.init must be one of {INITS}")

    def resolve(self, n_nodes: int, in_channels: int, n_classes: int) -> GcnArchitecture:
        return GcnArchitecture(n_nodes, in_channels, self.heads, self.conv_filters, n_classes,
                               self.activation, self.fan_in_gain)


def _default_lambdas() -> dict:
    return {"l0": 10.0, "l1": 10.0, "l2cost": 10.0, "entropy": 10.0}


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    arch: ArchConfig = field(default_factory=ArchConfig)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=DESK_EPOCHS))
    reg: RegularizerSpec = field(default_factory=RegularizerSpec)
    sweep: tuple[float, ...] = ()
    ablation: tuple[str, ...] = ()
    ablation_tpr: float = 0.95
    seeds: tuple[int, ...] = (0, 1, 2)
    finetune_epochs: int = 300
    # give variational rows the same masked fine-tuning budget as magnitude pruning
    finetune_variational: bool = False
    reg_lambdas: dict = field(default_factory=_default_lambdas)
    # fixed weight of the balanced PFM term in the WR+reg+PFM rows
    joint_pfm_lambda: float = 10.0
    calibrate_lambda: bool = False
    lambda_trials: int = 6
    output_dir: str = "results"

    def __post_init__(self):
        for t in self.sweep:
            if not 0.0 < t < 1.0:
                raise ConfigError(f"sweep tpr {t} outside (0, 1)")
        if not 0.0 < self.ablation_tpr < 1.0:
            raise ConfigError("ablation_tpr must lie in (0, 1)")
        for k in self.ablation:
            if k not in KINDS or k in ("pfm", "none"):
                raise ConfigError(f"ablation entries must be among l0, l1, l2cost, entropy; got {k!r}")
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if self.finetune_epochs < 0:
            raise ConfigError("finetune_epochs must be >= 0")
        for k, v in self.reg_lambdas.items():
            if k not in KINDS or v < 0:
                raise ConfigError(f"bad reg_lambdas entry {k}: {v}")
        if self.joint_pfm_lambda < 0:
            raise ConfigError("joint_pfm_lambda must be >= 0")
        if self.lambda_trials < 1:
            raise ConfigError("lambda_trials must be >= 1")

    def full_scale(self) -> ExperimentConfig:
        return replace(self, train=replace(self.train, epochs=FULL_EPOCHS))

    def with_seed(self, seed: int) -> ExperimentConfig:
        return replace(self, seeds=(seed,), train=replace(self.train, seed=seed))


_NESTED = {"dataset": DatasetConfig, "arch": ArchConfig, "train": TrainConfig, "reg": RegularizerSpec}


def _build(cls, raw, where: str):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected a mapping")
    if cls is RegularizerSpec and "lambda" in raw:
        raw = {("lam" if k == "lambda" else k): v for k, v in raw.items()}
    known = {f.name: f for f in fields(cls)}
    unknown = set(raw) - set(known)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for key, value in raw.items():
        if cls is TrainConfig and key == "reg":
            value = _build(RegularizerSpec, value, f"{where}.reg")
        elif cls is ExperimentConfig and key in _NESTED:
            value = _build(_NESTED[key], value, key)
        elif cls is ExperimentConfig and key in ("sweep", "ablation", "seeds"):
            value = tuple(value or ())
        kwargs[key] = value
    if cls is ExperimentConfig and "train" not in kwargs:
        kwargs["train"] = TrainConfig(epochs=DESK_EPOCHS)
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def config_from_dict(raw: dict) -> ExperimentConfig:
    cfg = _build(ExperimentConfig, raw, "config")
    # the training objective always uses the top-level regularizer
    return replace(cfg, train=replace(cfg.train, reg=cfg.reg,
                                      target_frames=cfg.dataset.target_frames))


def config_to_dict(cfg: ExperimentConfig) -> dict:
    def plain(v):
        if dataclasses.is_dataclass(v):
            return {k: plain(x) for k, x in asdict(v).items()}
        if isinstance(v, (tuple, list)):
            return [plain(x) for x in v]
        if isinstance(v, dict):
            return {k: plain(x) for k, x in v.items()}
        return v

    out = plain(cfg)
    out["train"].pop("reg", None)
    out["train"].pop("target_frames", None)
    out["reg"] = {("lambda" if k == "lam" else k): v for k, v in out["reg"].items()}
    return out


def load_config(path: str | Path | None) -> ExperimentConfig:
    if path is None:
        return config_from_dict({})
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return config_from_dict(raw or {})


def dump_config(cfg: ExperimentConfig, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(config_to_dict(cfg), sort_keys=False))
