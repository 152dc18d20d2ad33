"""Hard masks from soft gates, magnitude pruning, and connectivity diagnostics."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ShapeError
from .gcn import GcnModel

BINARY_TOL = 0.1


@dataclass(frozen=True)
class PruneReport:
    observed_rate: float
    kept_params: int
    total_params: int
    binarization_fraction: float
    dead_output_units: int
    accuracy: float
    dead_nodes: int = 0
    threshold: float = 0.5
    epoch: int = -1

    def as_dict(self) -> dict:
        return asdict(self)


def binarize_masks(model: GcnModel, z: float) -> list[np.ndarray]:
    """1 where psi(latent) > z (strict), else 0."""
    return [(m > z).astype(np.float64) for m in model.soft_masks()]


def observed_pruning_rate(model: GcnModel, z: float) -> float:
    masks = model.soft_masks()
    pruned = sum(int(np.count_nonzero(m <= z)) for m in masks)
    return pruned / sum(m.size for m in masks)


def mask_rate(masks) -> float:
    """Fraction of zero entries in a list of 0/1 masks."""
    return sum(int(np.count_nonzero(m == 0)) for m in masks) / sum(m.size for m in masks)


def magnitude_prune(model: GcnModel, tpr: float) -> list[np.ndarray]:
    """Zero the floor(tpr * N) smallest effective weights (global ranking).

    Ties at the cut are broken by ascending flat index.
    """
    if not 0.0 <= tpr < 1.0:
        raise ValueError(f"tpr must lie in [0, 1), got {tpr}")
    eff = model.effective_weights()
    flat = np.concatenate([np.abs(w).reshape(-1) for w in eff])
    n_prune = int(np.floor(tpr * flat.size))
    keep = np.ones(flat.size)
    order = np.lexsort((np.arange(flat.size), flat))
    keep[order[:n_prune]] = 0.0
    masks, start = [], 0
    for w in eff:
        masks.append(keep[start:start + w.size].reshape(w.shape))
        start += w.size
    return masks


def binarization_fraction(model_or_masks, tol: float = BINARY_TOL) -> float:
    """Share of soft-mask entries within ``tol`` of 0 or 1."""
    if not 0.0 < tol < 0.5:
        raise ValueError(f"tol must lie in (0, 0.5), got {tol}")
    masks = model_or_masks.soft_masks() if isinstance(model_or_masks, GcnModel) else model_or_masks
    near = sum(int(np.count_nonzero(np.minimum(m, 1.0 - m) <= tol)) for m in masks)
    return near / sum(np.size(m) for m in masks)


@dataclass(frozen=True)
class ConnectivityReport:
    dead_filters: int
    dead_classes: int
    dead_nodes: int
    dead_hidden_units: int

    @property
    def dead_output_units(self) -> int:
        return self.dead_filters + self.dead_classes


def connectivity_report(model: GcnModel, masks) -> ConnectivityReport:
    """Units no input signal can reach through kept connections.

    Hidden unit (u, c) is live iff some head k has a kept adjacency entry in
    row u and a kept filter entry in column c. A filter or node is dead when
    none of its hidden units is live; a class logit is dead when no kept dense
    weight connects it to a live hidden unit.
    """
    k, n, c = model.arch.heads, model.arch.n_nodes, model.arch.conv_filters
    masks = [np.asarray(m) != 0 for m in masks]
    if len(masks) != 2 * k + 1:
        raise ShapeError(f"expected {2 * k + 1} masks, got {len(masks)}")
    live = np.zeros((n, c), dtype=bool)
    for a, w in zip(masks[:k], masks[k:2 * k]):
        live |= np.outer(a.any(axis=1), w.any(axis=0))
    fc = masks[2 * k]
    class_live = (fc & live.reshape(-1)[:, None]).any(axis=0)
    return ConnectivityReport(
        dead_filters=int((~live.any(axis=0)).sum()),
        dead_classes=int((~class_live).sum()),
        dead_nodes=int((~live.any(axis=1)).sum()),
        dead_hidden_units=int((~live).sum()),
    )


def apply_masks(model: GcnModel, masks) -> GcnModel:
    """Copy of ``model`` whose forward multiplies effective weights by ``masks``."""
    latents = model.latents()
    if len(masks) != len(latents):
        raise ShapeError(f"{len(masks)} masks for {len(latents)} latent tensors")
    for m, t in zip(masks, latents):
        if np.shape(m) != t.shape:
            raise ShapeError(f"mask shape {np.shape(m)} does not match latent shape {t.shape}")
    pruned = model.copy()
    pruned.masks = [np.asarray(m, dtype=np.float64).copy() for m in masks]
    return pruned


def kept_count(masks) -> int:
    return sum(int(np.count_nonzero(m)) for m in masks)
