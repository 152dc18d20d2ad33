"""Double-well phase-field energy on soft masks and the magnitude gate psi.

The ultra-local term, written in ``s = 2t - 1``::

    V(t) = beta * (s**4 / 4 - s**2 / 2) + alpha * (s - s**3 / 3)

has minima at t = 0 and t = 1 whenever ``beta > |alpha|`` and a single interior
maximum at ``z = (beta + alpha) / (2 beta)``. Entries whose mask exceeds ``z``
are kept, so ``z`` is also the targeted pruning rate.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import ContractError, DomainError
from .tensor import Tensor

DEFAULT_BETA = 3.0


@dataclass(frozen=True)
class PhaseFieldParams:
    alpha: float = 0.0
    beta: float = DEFAULT_BETA

    def __post_init__(self):
        if not (self.beta > 0 and self.beta > abs(self.alpha)):
            raise DomainError(f"need beta > |alpha| and beta > 0, got alpha={self.alpha}, beta={self.beta}")

    @classmethod
    def for_tpr(cls, tpr: float, beta: float = DEFAULT_BETA) -> PhaseFieldParams:
        return cls(alpha_for_tpr(tpr, beta), beta)

    @property
    def threshold(self) -> float:
        return threshold_for(self)


@dataclass(frozen=True)
class ThresholdRegion:
    """Coordinates (flat indices) whose mask value lies strictly above ``z``."""

    z: float
    kept_indices: frozenset

    @classmethod
    def from_masks(cls, masks: np.ndarray, z: float) -> ThresholdRegion:
        flat = np.asarray(masks, dtype=np.float64).reshape(-1)
        return cls(z, frozenset(np.flatnonzero(flat > z).tolist()))


def ultra_local(t, p: PhaseFieldParams):
    s = 2.0 * np.asarray(t, dtype=np.float64) - 1.0
    s2 = s * s
    out = p.beta * (s2 * s2 / 4.0 - s2 / 2.0) + p.alpha * (s - s2 * s / 3.0)
    return float(out) if np.ndim(out) == 0 else out


def ultra_local_grad(t, p: PhaseFieldParams):
    """dV/dt = 2 (s^2 - 1)(beta s - alpha), s = 2t - 1."""
    s = 2.0 * np.asarray(t, dtype=np.float64) - 1.0
    out = 2.0 * (s * s - 1.0) * (p.beta * s - p.alpha)
    return float(out) if np.ndim(out) == 0 else out


def ultra_local_second(t, p: PhaseFieldParams):
    """d2V/dt2 = 4 (3 beta s^2 - 2 alpha s - beta)."""
    s = 2.0 * np.asarray(t, dtype=np.float64) - 1.0
    out = 4.0 * (3.0 * p.beta * s * s - 2.0 * p.alpha * s - p.beta)
    return float(out) if np.ndim(out) == 0 else out


def alpha_for_tpr(tpr: float, beta: float = DEFAULT_BETA) -> float:
    if not 0.0 < tpr < 1.0:
        raise DomainError(f"targeted pruning rate must lie in (0, 1), got {tpr}")
    if beta <= 0:
        raise DomainError(f"beta must be positive, got {beta}")
    return 2.0 * beta * tpr - beta


def threshold_for(p: PhaseFieldParams) -> float:
    return (p.beta + p.alpha) / (2.0 * p.beta)


def psi(w: Tensor) -> Tensor:
    """Soft magnitude gate ``2 sigmoid(w^2) - 1`` with values in [0, 1)."""
    return T.shift(T.scale(T.sigmoid(T.square(w)), 2.0), -1.0)


def psi_np(w) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    return 2.0 * T._sigmoid(w * w) - 1.0


def psi_grad_np(w) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    s = T._sigmoid(w * w)
    return 4.0 * w * s * (1.0 - s)


def reparametrize(latent: Tensor) -> Tensor:
    """Effective weight ``latent * psi(latent)``."""
    return T.mul(latent, psi(latent))


def _ultra_local_tensor(m: Tensor, p: PhaseFieldParams) -> Tensor:
    s = T.shift(T.scale(m, 2.0), -1.0)
    s2 = T.square(s)
    s3 = T.mul(s2, s)
    s4 = T.square(s2)
    well = T.sub(T.scale(s4, 0.25), T.scale(s2, 0.5))
    tilt = T.sub(s, T.scale(s3, 1.0 / 3.0))
    return T.add(T.scale(well, p.beta), T.scale(tilt, p.alpha))


def phase_field_energy(masks: Sequence[Tensor], p: PhaseFieldParams) -> Tensor:
    """Sum of the ultra-local term over every entry of every mask."""
    if not masks:
        raise ContractError("phase_field_energy needs at least one mask tensor")
    terms = []
    for m in masks:
        if np.any(m.data < 0.0) or np.any(m.data > 1.0):
            raise ContractError("mask entries must lie in [0, 1]")
        terms.append(T.sum_(_ultra_local_tensor(m, p)))
    return T.total(terms)
