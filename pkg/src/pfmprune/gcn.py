"""Single-block multi-head GCN with reparametrized (prunable) weights.

Per sample, with node signal U (s x n)::

    H = f(sum_k A_k U^T W_k)          # n x C
    logits = vec(H) @ W_fc            # n_classes

Every weight the forward pass uses is ``latent * psi(latent)``, including the
learned adjacency matrices and the dense head. Biases are omitted.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import ConfigError, DataError, ShapeError
from .phasefield import psi_np, reparametrize
from .tensor import Tensor

ACTIVATIONS = ("relu", "identity")
INITS = ("phase_uniform", "glorot")
CHECKPOINT_MAGIC = b"PFMGCN"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class GcnArchitecture:
    n_nodes: int
    in_channels: int
    heads: int = 1
    conv_filters: int = 32
    n_classes: int = 8
    activation: str = "relu"
    # multiply each layer's effective weights by 1/sqrt(fan_in); no parameters involved
    fan_in_gain: bool = True

    def __post_init__(self):
        for name in ("n_nodes", "in_channels", "heads", "conv_filters"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.n_classes < 2:
            raise ConfigError(f"n_classes must be >= 2, got {self.n_classes}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"activation must be one of {ACTIVATIONS}")

    @property
    def param_count(self) -> int:
        n, s, k, c = self.n_nodes, self.in_channels, self.heads, self.conv_filters
        return k * n * n + k * s * c + n * c * self.n_classes

    def gains(self) -> tuple[float, float, float]:
        if not self.fan_in_gain:
            return 1.0, 1.0, 1.0
        return (1.0 / np.sqrt(self.n_nodes), 1.0 / np.sqrt(self.in_channels),
                1.0 / np.sqrt(self.n_nodes * self.conv_filters))


@dataclass
class GcnModel:
    arch: GcnArchitecture
    adjacency_latents: list[Tensor]
    conv_latents: list[Tensor]
    fc_latent: Tensor
    # optional hard 0/1 masks aligned with latents(); set by apply_masks
    masks: list[np.ndarray] | None = field(default=None)

    def latents(self) -> list[Tensor]:
        return [*self.adjacency_latents, *self.conv_latents, self.fc_latent]

    def layer_names(self) -> list[str]:
        k = self.arch.heads
        return [f"adjacency{i}" for i in range(k)] + [f"conv{i}" for i in range(k)] + ["fc"]

    def soft_masks(self) -> list[np.ndarray]:
        return [psi_np(t.data) for t in self.latents()]

    def effective_weights(self) -> list[np.ndarray]:
        return [t.data * psi_np(t.data) for t in self.latents()]

    def zero_grad(self) -> None:
        for t in self.latents():
            t.grad = None

    def copy(self) -> GcnModel:
        def clone(t):
            return Tensor(t.data.copy(), requires_grad=t.requires_grad)

        masks = None if self.masks is None else [m.copy() for m in self.masks]
        return GcnModel(self.arch, [clone(t) for t in self.adjacency_latents],
                        [clone(t) for t in self.conv_latents], clone(self.fc_latent), masks)


def gcn_block_forward(U: Tensor, adjacencies: Sequence[Tensor], filters: Sequence[Tensor],
                      activation: str = "relu") -> Tensor:
    """``f(sum_k A_k U^T W_k)`` for one sample; U is s x n."""
    if len(adjacencies) != len(filters) or not adjacencies:
        raise ConfigError(f"{len(adjacencies)} adjacency matrices for {len(filters)} filter banks")
    ut = T.transpose(U)
    heads = [T.matmul(T.matmul(a, ut), w) for a, w in zip(adjacencies, filters)]
    out = T.total(heads)
    return T.relu(out) if activation == "relu" else out


def anatomical_prior(arch: GcnArchitecture, adjacency: np.ndarray | None) -> np.ndarray:
    if adjacency is None:
        return np.eye(arch.n_nodes)
    adjacency = np.asarray(adjacency, dtype=np.float64)
    if adjacency.shape != (arch.n_nodes, arch.n_nodes):
        raise ShapeError(f"adjacency prior has shape {adjacency.shape}, expected {(arch.n_nodes,) * 2}")
    return adjacency


def _phase_uniform(rng: np.random.Generator, shape, prefer=None) -> np.ndarray:
    """Latents whose soft masks are a stratified uniform sample of [0, 1).

    psi(w) = tanh(w^2 / 2), so a mask value u maps to |w| = sqrt(2 artanh(u)).
    With ``prefer`` (a boolean array), the largest masks go to the preferred
    entries and those latents are positive.
    """
    size = int(np.prod(shape))
    u = (rng.permutation(size) + rng.random(size)) / size
    if prefer is not None:
        prefer = np.asarray(prefer, dtype=bool).reshape(-1)
        order = np.sort(u)
        slots = np.empty(size)
        idx_pref = rng.permutation(np.flatnonzero(prefer))
        idx_rest = rng.permutation(np.flatnonzero(~prefer))
        slots[idx_pref] = order[size - idx_pref.size:]
        slots[idx_rest] = order[: size - idx_pref.size]
        u = slots
    magnitude = np.sqrt(2.0 * np.arctanh(np.minimum(u, 1.0 - 1e-12)))
    sign = rng.choice([-1.0, 1.0], size=size)
    if prefer is not None:
        sign[prefer] = 1.0
    return (sign * magnitude).reshape(shape)


def _glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape)


def build_model(arch: GcnArchitecture, seed: int = 0, adjacency: np.ndarray | None = None,
                init: str = "phase_uniform") -> GcnModel:
    """Fresh latents for ``arch``; deterministic per seed.

    ``adjacency`` is the anatomical prior (defaults to the identity).
    ``init='glorot'`` draws uniform Glorot latents and sets adjacency latents to
    the prior plus N(0, 0.01^2) noise; ``'phase_uniform'`` draws latents whose
    soft masks are uniform on [0, 1), ranking prior edges on top.
    """
    if init not in INITS:
        raise ConfigError(f"init must be one of {INITS}, got {init!r}")
    rng = np.random.default_rng(seed)
    n, s, k, c = arch.n_nodes, arch.in_channels, arch.heads, arch.conv_filters
    prior = anatomical_prior(arch, adjacency)
    adj, conv = [], []
    if init == "glorot":
        for _ in range(k):
            adj.append(prior + rng.normal(0.0, 0.01, size=(n, n)))
            conv.append(_glorot(rng, (s, c), s, c))
        fc = _glorot(rng, (n * c, arch.n_classes), n * c, arch.n_classes)
    else:
        for _ in range(k):
            adj.append(_phase_uniform(rng, (n, n), prefer=prior != 0))
            conv.append(_phase_uniform(rng, (s, c)))
        fc = _phase_uniform(rng, (n * c, arch.n_classes))
    return GcnModel(arch,
                    [Tensor(a, requires_grad=True) for a in adj],
                    [Tensor(w, requires_grad=True) for w in conv],
                    Tensor(fc, requires_grad=True))


def param_count(model: GcnModel) -> int:
    return sum(t.size for t in model.latents())


def _effective(model: GcnModel) -> list[Tensor]:
    eff = [reparametrize(t) for t in model.latents()]
    if model.masks is not None:
        eff = [T.mul(e, Tensor(m)) for e, m in zip(eff, model.masks)]
    return eff


def forward(model: GcnModel, batch) -> Tensor:
    """Logits (B x n_classes) for a batch of node signals (B x s x n)."""
    arch = model.arch
    x = batch.data if isinstance(batch, Tensor) else np.asarray(batch, dtype=np.float64)
    if x.ndim != 3 or x.shape[1:] != (arch.in_channels, arch.n_nodes):
        raise ShapeError(f"batch shape {x.shape} does not match (B, {arch.in_channels}, {arch.n_nodes})")
    b, s, n = x.shape
    c, k = arch.conv_filters, arch.heads
    g_adj, g_conv, g_fc = arch.gains()
    eff = _effective(model)
    adjs, convs, fc = eff[:k], eff[k:2 * k], eff[2 * k]
    # rows indexed by (sample, node), columns by channel
    xt = Tensor(np.ascontiguousarray(x.transpose(0, 2, 1)).reshape(b * n, s))
    heads = []
    for a, w in zip(adjs, convs):
        y = T.matmul(xt, T.scale(w, g_conv))                      # (B n) x C
        y = T.reshape(T.permute(T.reshape(y, (b, n, c)), (1, 0, 2)), (n, b * c))
        heads.append(T.matmul(T.scale(a, g_adj), y))              # n x (B C)
    h = T.total(heads)
    if arch.activation == "relu":
        h = T.relu(h)
    h = T.reshape(T.permute(T.reshape(h, (n, b, c)), (1, 0, 2)), (b, n * c))
    return T.matmul(h, T.scale(fc, g_fc))


def predict(model: GcnModel, batch) -> np.ndarray:
    return forward(model, batch).data.argmax(axis=1)


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(model: GcnModel, path: str | Path) -> None:
    """Header line, JSON architecture line, then each tensor as shape + float64 LE."""
    tensors = [t.data for t in model.latents()]
    if model.masks is not None:
        tensors += list(model.masks)
    meta = {"arch": asdict(model.arch), "n_latents": len(model.latents()),
            "has_masks": model.masks is not None}
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC + f" v{CHECKPOINT_VERSION}\n".encode())
        fh.write(json.dumps(meta, sort_keys=True).encode() + b"\n")
        for arr in tensors:
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> GcnModel:
    with open(path, "rb") as fh:
        header = fh.readline()
        if not header.startswith(CHECKPOINT_MAGIC):
            raise DataError(f"{path}: not a GCN checkpoint")
        version = int(header.split(b"v")[-1])
        if version != CHECKPOINT_VERSION:
            raise DataError(f"{path}: unsupported checkpoint version {version}")
        meta = json.loads(fh.readline())
        arch = GcnArchitecture(**meta["arch"])
        count = meta["n_latents"] * (2 if meta["has_masks"] else 1)
        arrays = []
        for _ in range(count):
            (ndim,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            nbytes = 8 * int(np.prod(shape))
            buf = fh.read(nbytes)
            if len(buf) != nbytes:
                raise DataError(f"{path}: truncated tensor data")
            arrays.append(np.frombuffer(buf, dtype="<f8").reshape(shape).astype(np.float64))
    k = arch.heads
    latents = arrays[: meta["n_latents"]]
    if len(latents) != 2 * k + 1 or sum(a.size for a in latents) != arch.param_count:
        raise DataError(f"{path}: tensor sizes disagree with the architecture parameter count")
    masks = arrays[meta["n_latents"]:] if meta["has_masks"] else None
    return GcnModel(arch,
                    [Tensor(a, requires_grad=True) for a in latents[:k]],
                    [Tensor(a, requires_grad=True) for a in latents[k:2 * k]],
                    Tensor(latents[2 * k], requires_grad=True), masks)
