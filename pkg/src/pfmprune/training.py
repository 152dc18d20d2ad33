"""Joint objective (cross-entropy + lambda * regularizer), Adam, and the training loop."""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .data import SkeletonDataset
from .errors import ConfigError, NonFiniteError
from .gcn import GcnModel, forward, predict
from .phasefield import psi, ultra_local
from .pruning import (PruneReport, apply_masks, binarization_fraction, binarize_masks,
                      connectivity_report, kept_count, observed_pruning_rate)
from .regularizers import RegularizerSpec, assemble_regularizer
from .tensor import Tensor

log = logging.getLogger(__name__)

LR_FACTOR = 0.99
METRIC_COLUMNS = ("epoch", "ce", "ep", "lr", "observed_rate", "binarization_fraction")


class TrainingDiverged(NonFiniteError):
    """The objective became non-finite; the message names the offending term."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 2700
    batch_size: int = 200
    base_lr: float = 1e-2
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    reg: RegularizerSpec = field(default_factory=RegularizerSpec)
    seed: int = 0
    checkpoint_interval: int = 100
    adaptive_lr: bool = True
    target_frames: int = 8

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.base_lr <= 0:
            raise ConfigError("base_lr must be positive")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ConfigError("Adam betas must lie in (0, 1)")
        if self.adam_eps <= 0:
            raise ConfigError("adam_eps must be positive")
        if self.checkpoint_interval < 1:
            raise ConfigError("checkpoint_interval must be >= 1")


@dataclass
class OptimizerState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    current_lr: float
    step: int = 0
    previous_loss: float | None = None
    previous_speed: float | None = None

    @classmethod
    def fresh(cls, latents: Sequence[Tensor], lr: float) -> OptimizerState:
        return cls([np.zeros(t.shape) for t in latents], [np.zeros(t.shape) for t in latents], lr)


@dataclass
class Arrays:
    """Node signals and labels for both splits."""

    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    n_classes: int

    @classmethod
    def from_dataset(cls, ds: SkeletonDataset, target_frames: int) -> Arrays:
        return cls(ds.signals(ds.train_idx, target_frames), ds.labels(ds.train_idx),
                   ds.signals(ds.test_idx, target_frames), ds.labels(ds.test_idx), ds.n_classes)


def _masks(model: GcnModel) -> list[Tensor]:
    return [psi(t) for t in model.latents()]


def loss_terms(model: GcnModel, batch, labels, reg: RegularizerSpec) -> tuple[Tensor, Tensor]:
    ce = T.softmax_cross_entropy(forward(model, batch), labels)
    return ce, assemble_regularizer(reg, _masks(model))


def total_loss(model: GcnModel, batch, labels, cfg: TrainConfig | RegularizerSpec) -> Tensor:
    reg = cfg.reg if isinstance(cfg, TrainConfig) else cfg
    ce, penalty = loss_terms(model, batch, labels, reg)
    return T.add(ce, penalty)


def adam_step(state: OptimizerState, latents: Sequence[Tensor], grads: Sequence[np.ndarray | None],
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Bias-corrected Adam update of ``latents`` in place at ``state.current_lr``."""
    state.step += 1
    b1t = 1.0 - beta1**state.step
    b2t = 1.0 - beta2**state.step
    for i, (t, g) in enumerate(zip(latents, grads)):
        if g is None:
            g = np.zeros(t.shape)
        if g.shape != t.shape:
            raise ValueError(f"gradient shape {g.shape} does not match latent shape {t.shape}")
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g
        t.data = t.data - state.current_lr * (state.m[i] / b1t) / (np.sqrt(state.v[i] / b2t) + eps)


def lr_schedule_update(state: OptimizerState, current_loss: float) -> float:
    """Shrink the rate by 0.99 when the loss speeds up, grow it by 1/0.99 otherwise."""
    if state.previous_loss is None:
        state.previous_loss = current_loss
        return state.current_lr
    speed = abs(current_loss - state.previous_loss)
    state.previous_loss = current_loss
    if state.previous_speed is not None:
        if speed > state.previous_speed:
            state.current_lr *= LR_FACTOR
        else:
            state.current_lr /= LR_FACTOR
    state.previous_speed = speed
    return state.current_lr


def evaluate(model: GcnModel, x, y, hard_masks=None, n_classes: int | None = None) -> float:
    """Mean per-class accuracy; classes absent from ``y`` are skipped with a warning."""
    if hard_masks is not None:
        model = apply_masks(model, hard_masks)
    y = np.asarray(y)
    pred = predict(model, x)
    n_classes = n_classes or model.arch.n_classes
    scores = []
    for k in range(n_classes):
        sel = y == k
        if not sel.any():
            warnings.warn(f"class {k} has no samples; excluded from the average", stacklevel=2)
            continue
        scores.append(float(np.mean(pred[sel] == k)))
    return float(np.mean(scores))


def energy_value(model: GcnModel, reg: RegularizerSpec) -> float:
    params = reg.pfm_params()
    return float(sum(ultra_local(m, params).sum() for m in model.soft_masks()))


def _diagnose(model, batch, labels, reg) -> str:
    try:
        T.softmax_cross_entropy(forward(model, batch), labels)
    except NonFiniteError:
        return "cross-entropy term (CE)"
    try:
        assemble_regularizer(reg, _masks(model))
    except NonFiniteError:
        return f"regularizer term ({reg.kind}, E_P)"
    return "sum of terms"


def make_report(model: GcnModel, data: Arrays, z: float, epoch: int = -1,
                hard_masks=None) -> PruneReport:
    """Hard-prune at ``z`` (or with explicit masks) and measure on the test split."""
    masks = binarize_masks(model, z) if hard_masks is None else hard_masks
    total = sum(m.size for m in masks)
    kept = kept_count(masks)
    conn = connectivity_report(model, masks)
    acc = evaluate(model, data.x_test, data.y_test, hard_masks=masks, n_classes=data.n_classes)
    rate = observed_pruning_rate(model, z) if hard_masks is None else 1.0 - kept / total
    return PruneReport(observed_rate=rate, kept_params=kept, total_params=total,
                       binarization_fraction=binarization_fraction(model),
                       dead_output_units=conn.dead_output_units, accuracy=acc,
                       dead_nodes=conn.dead_nodes, threshold=z, epoch=epoch)


@dataclass
class TrainResult:
    model: GcnModel
    reports: list[PruneReport]
    metrics: list[dict]
    state: OptimizerState

    @property
    def final(self) -> PruneReport:
        return self.reports[-1]


def train(model: GcnModel, data: Arrays | SkeletonDataset, cfg: TrainConfig,
          epochs: int | None = None, report_masks=None) -> TrainResult:
    """Minibatch Adam on the joint objective; ``model`` is updated in place.

    If ``model.masks`` is set the masks stay frozen (fine-tuning). Reports are
    emitted every ``cfg.checkpoint_interval`` epochs and after the last one.
    """
    if isinstance(data, SkeletonDataset):
        data = Arrays.from_dataset(data, cfg.target_frames)
    if len(data.y_train) == 0:
        raise ConfigError("empty training split")
    epochs = cfg.epochs if epochs is None else epochs
    rng = np.random.default_rng(cfg.seed)
    latents = model.latents()
    state = OptimizerState.fresh(latents, cfg.base_lr)
    z = cfg.reg.threshold()
    n = len(data.y_train)
    reports, metrics = [], []
    for epoch in range(1, epochs + 1):
        order = rng.permutation(n)
        ce_sum = reg_sum = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb, yb = data.x_train[idx], data.y_train[idx]
            model.zero_grad()
            try:
                ce, penalty = loss_terms(model, xb, yb, cfg.reg)
                loss = T.add(ce, penalty)
            except NonFiniteError as exc:
                raise TrainingDiverged(f"epoch {epoch}: non-finite loss in the "
                                       f"{_diagnose(model, xb, yb, cfg.reg)}: {exc}") from exc
            T.backward(loss)
            adam_step(state, latents, [t.grad for t in latents],
                      cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
            w = len(idx) / n
            ce_sum += w * ce.item()
            reg_sum += w * penalty.item()
        epoch_loss = ce_sum + reg_sum
        if not np.isfinite(epoch_loss):
            raise TrainingDiverged(f"epoch {epoch}: non-finite epoch loss")
        if cfg.adaptive_lr:
            lr_schedule_update(state, epoch_loss)
        metrics.append({"epoch": epoch, "ce": ce_sum, "ep": energy_value(model, cfg.reg),
                        "lr": state.current_lr, "observed_rate": observed_pruning_rate(model, z),
                        "binarization_fraction": binarization_fraction(model)})
        if epoch % cfg.checkpoint_interval == 0 or epoch == epochs:
            hard = report_masks if report_masks is not None else model.masks
            reports.append(make_report(model, data, z, epoch, hard_masks=hard))
            log.debug("epoch %d ce=%.4f rate=%.4f acc=%.4f", epoch, ce_sum,
                      reports[-1].observed_rate, reports[-1].accuracy)
    return TrainResult(model, reports, metrics, state)


def write_metrics(metrics: Sequence[dict], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS)
        writer.writeheader()
        for row in metrics:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
