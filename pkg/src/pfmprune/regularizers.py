"""Sparsity regularizers on soft masks, pluggable next to (or instead of) PFM."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from . import tensor as T
from .errors import ConfigError, DomainError
from .phasefield import DEFAULT_BETA, PhaseFieldParams, phase_field_energy
from .tensor import Tensor

KINDS = ("pfm", "l0", "l1", "l2cost", "entropy", "none")
DEFAULT_TAU = 0.1


@dataclass(frozen=True)
class RegularizerSpec:
    kind: str = "pfm"
    lam: float = 100.0
    pfm_joint: bool = False
    target_tpr: float = 0.5
    beta: float = DEFAULT_BETA
    tau: float = DEFAULT_TAU
    # divide sum-type penalties by the total number of mask entries
    normalize: bool = True
    # weight of the joint balanced PFM term; None means lam
    pfm_lam: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown regularizer kind {self.kind!r}; expected one of {KINDS}")
        if self.lam < 0:
            raise ConfigError(f"lambda must be non-negative, got {self.lam}")
        if not 0.0 < self.target_tpr < 1.0:
            raise ConfigError(f"target_tpr must lie in (0, 1), got {self.target_tpr}")
        if self.kind == "pfm" and self.pfm_joint:
            raise ConfigError("kind='pfm' cannot also set pfm_joint")
        if self.tau <= 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if self.beta <= 0:
            raise ConfigError(f"beta must be positive, got {self.beta}")
        if self.pfm_lam is not None and self.pfm_lam < 0:
            raise ConfigError(f"pfm_lam must be non-negative, got {self.pfm_lam}")

    @property
    def label(self) -> str:
        names = {"pfm": "WR+PFM", "l0": "WR+L0", "l1": "WR+L1", "l2cost": "WR+L2cost",
                 "entropy": "WR+Entropy", "none": "WR"}
        name = names[self.kind]
        return name + "+PFM0" if self.pfm_joint else name

    def pfm_params(self) -> PhaseFieldParams:
        """Phase-field parameters: tpr-driven for kind='pfm', balanced (alpha=0) otherwise."""
        if self.kind == "pfm":
            return PhaseFieldParams.for_tpr(self.target_tpr, self.beta)
        return PhaseFieldParams(0.0, self.beta)

    def threshold(self) -> float:
        return self.pfm_params().threshold


def _count(masks: Sequence[Tensor]) -> int:
    return sum(m.size for m in masks)


def l1_reg(masks: Sequence[Tensor]) -> Tensor:
    return T.total([T.sum_(T.abs_(m)) for m in masks])


def entropy_reg(masks: Sequence[Tensor]) -> Tensor:
    terms = []
    for m in masks:
        one_minus = T.shift(T.scale(m, -1.0), 1.0)
        h = T.add(T.mul(m, T.log_guarded(m)), T.mul(one_minus, T.log_guarded(one_minus)))
        terms.append(T.scale(T.sum_(h), -1.0))
    return T.total(terms)


def l2_cost_reg(masks: Sequence[Tensor], target_tpr: float) -> Tensor:
    """Squared gap between the mean mask value and the keep budget ``1 - tpr``."""
    if not 0.0 < target_tpr < 1.0:
        raise DomainError(f"target_tpr must lie in (0, 1), got {target_tpr}")
    keep = T.scale(l1_reg(masks), 1.0 / _count(masks))
    return T.square(T.shift(keep, -(1.0 - target_tpr)))


def l0_reg(masks: Sequence[Tensor], tau: float = DEFAULT_TAU) -> Tensor:
    """Smooth non-zero count: sum of ``1 - exp(-(m / tau)^2)``."""
    if tau <= 0:
        raise DomainError(f"tau must be positive, got {tau}")
    terms = []
    for m in masks:
        bump = T.exp(T.scale(T.square(m), -1.0 / tau**2))
        terms.append(T.shift(T.scale(T.sum_(bump), -1.0), float(m.size)))
    return T.total(terms)


def assemble_regularizer(spec: RegularizerSpec, masks: Sequence[Tensor],
                         pfm_params: PhaseFieldParams | None = None) -> Tensor:
    """``lam * reg`` (+ ``pfm_lam * E_P`` at alpha=0 when ``pfm_joint``).

    ``pfm_lam`` defaults to ``lam``. With ``spec.normalize`` the sum-type
    penalties are divided by the number of mask entries; the l2 cost term is
    already a mean and is left alone.
    """
    if spec.kind == "pfm" and spec.pfm_joint:
        raise ConfigError("kind='pfm' cannot also set pfm_joint")
    per_entry = 1.0 / _count(masks) if spec.normalize else 1.0
    if spec.kind == "pfm":
        params = pfm_params if pfm_params is not None else spec.pfm_params()
        reg = T.scale(phase_field_energy(masks, params), per_entry)
    elif spec.kind == "l1":
        reg = T.scale(l1_reg(masks), per_entry)
    elif spec.kind == "l0":
        reg = T.scale(l0_reg(masks, spec.tau), per_entry)
    elif spec.kind == "entropy":
        reg = T.scale(entropy_reg(masks), per_entry)
    elif spec.kind == "l2cost":
        reg = l2_cost_reg(masks, spec.target_tpr)
    else:
        reg = Tensor(0.0)
    reg = T.scale(reg, spec.lam)
    if spec.pfm_joint:
        balanced = PhaseFieldParams(0.0, spec.beta)
        weight = spec.lam if spec.pfm_lam is None else spec.pfm_lam
        reg = T.add(reg, T.scale(phase_field_energy(masks, balanced), weight * per_entry))
    return reg
