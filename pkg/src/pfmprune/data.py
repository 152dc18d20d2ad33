"""Skeleton sequences: synthetic generator, JSONL loader/writer, graph signals.

File layout (one JSON object per line)::

    {"header": {"n_classes": 8, "joints": 15, "topology": [[0, 1], ...],
                "split": {"train": [...], "test": [...]}}}        # optional split
    {"label": 3, "joints": 15, "coords": [[[x, y, z], ...T_raw], ...J]}
    ...
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError

TRAIN_FRACTION = 0.7


@dataclass(frozen=True)
class SkeletonSequence:
    coords: np.ndarray  # J x T_raw x 3
    label: int

    def __post_init__(self):
        c = np.asarray(self.coords, dtype=np.float64)
        if c.ndim != 3 or c.shape[2] != 3:
            raise DataError(f"coords must be J x T x 3, got shape {c.shape}")
        if c.shape[0] < 1:
            raise DataError("a sequence needs at least one joint")
        if not np.all(np.isfinite(c)):
            raise DataError("coords contain NaN or Inf")
        object.__setattr__(self, "coords", c)

    @property
    def joints(self) -> int:
        return self.coords.shape[0]

    @property
    def frames(self) -> int:
        return self.coords.shape[1]


@dataclass(frozen=True)
class SkeletonDataset:
    sequences: tuple[SkeletonSequence, ...]
    n_classes: int
    topology: tuple[tuple[int, int], ...]
    train_idx: tuple[int, ...]
    test_idx: tuple[int, ...]
    normalized: bool = field(default=False, compare=False)

    def __post_init__(self):
        if not self.sequences:
            raise DataError("dataset has no sequences")
        joints = self.sequences[0].joints
        for i, seq in enumerate(self.sequences):
            if seq.joints != joints:
                raise DataError(f"sequence {i} has {seq.joints} joints, expected {joints}")
            if not 0 <= seq.label < self.n_classes:
                raise DataError(f"sequence {i} label {seq.label} outside [0, {self.n_classes})")
        for a, b in self.topology:
            if not (0 <= a < joints and 0 <= b < joints):
                raise DataError(f"edge ({a}, {b}) references a joint outside [0, {joints})")
        train, test = set(self.train_idx), set(self.test_idx)
        if train & test:
            raise DataError("train and test splits overlap")
        if any(not 0 <= i < len(self.sequences) for i in train | test):
            raise DataError("split index out of range")

    @property
    def joints(self) -> int:
        return self.sequences[0].joints

    def labels(self, idx: Sequence[int]) -> np.ndarray:
        return np.array([self.sequences[i].label for i in idx], dtype=np.int64)

    def signals(self, idx: Sequence[int], target_frames: int) -> np.ndarray:
        """B x (3 T) x J array of node signals."""
        return np.stack([to_node_signal(self.sequences[i], target_frames) for i in idx])

    def __eq__(self, other):
        if not isinstance(other, SkeletonDataset):
            return NotImplemented
        return (self.n_classes == other.n_classes and self.topology == other.topology
                and self.train_idx == other.train_idx and self.test_idx == other.test_idx
                and len(self.sequences) == len(other.sequences)
                and all(a.label == b.label and np.array_equal(a.coords, b.coords)
                        for a, b in zip(self.sequences, other.sequences)))


def chain_topology(joints: int) -> tuple[tuple[int, int], ...]:
    return tuple((j, j + 1) for j in range(joints - 1))


def stratified_split(labels: Sequence[int], seed: int, train_fraction: float = TRAIN_FRACTION):
    rng = np.random.default_rng(seed)
    labels = np.asarray(labels)
    train, test = [], []
    for k in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == k))
        cut = int(round(train_fraction * idx.size))
        train.extend(idx[:cut].tolist())
        test.extend(idx[cut:].tolist())
    return tuple(sorted(train)), tuple(sorted(test))


def generate_synthetic(n_classes: int = 8, samples_per_class: int = 72, joints: int = 15,
                       frames: int = 20, seed: int = 0, noise: float = 0.15) -> SkeletonDataset:
    """Chain skeletons whose joints oscillate with class-specific frequency and phase.

    Joint j of a class-k sequence follows a damped sinusoid along a fixed
    per-joint direction, with frequency, phase lag along the chain and
    amplitude profile depending on k; every sample adds random timing jitter
    and Gaussian coordinate noise.
    """
    if min(n_classes, samples_per_class, joints, frames) < 1:
        raise DataError("all counts must be >= 1")
    rng = np.random.default_rng(seed)
    rest = np.stack([np.zeros(joints), -np.arange(joints, dtype=float), np.zeros(joints)], axis=1)
    directions = rng.normal(size=(joints, 3))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    freqs = 0.5 + np.arange(n_classes) * (2.5 / max(n_classes, 1))
    lags = rng.uniform(0.0, np.pi, size=n_classes)
    profiles = rng.uniform(0.3, 1.0, size=(n_classes, joints))
    t = np.linspace(0.0, 1.0, frames)
    seqs, labels = [], []
    for k in range(n_classes):
        for _ in range(samples_per_class):
            jitter = rng.normal(0.0, 0.05)
            offset = rng.uniform(0.0, 2.0 * np.pi * 0.1)
            phase = (2.0 * np.pi * freqs[k] * (1.0 + jitter) * t[None, :]
                     + lags[k] * np.arange(joints)[:, None] / joints + offset)
            amp = profiles[k][:, None] * np.sin(phase)                 # J x T
            coords = rest[:, None, :] + amp[:, :, None] * directions[:, None, :]
            coords = coords + rng.normal(0.0, noise, size=coords.shape)
            seqs.append(SkeletonSequence(coords, k))
            labels.append(k)
    train, test = stratified_split(labels, seed)
    return SkeletonDataset(tuple(seqs), n_classes, chain_topology(joints), train, test)


def to_node_signal(seq: SkeletonSequence, target_frames: int) -> np.ndarray:
    """(3 T) x J signal: column u is joint u's (x, y, z) concatenated over T resampled frames."""
    if target_frames < 1:
        raise DataError("target_frames must be >= 1")
    if seq.frames < 1:
        raise DataError("sequence has no frames")
    coords = seq.coords
    if seq.frames != target_frames:
        if seq.frames == 1:
            coords = np.repeat(coords, target_frames, axis=1)
        else:
            src = np.linspace(0.0, 1.0, seq.frames)
            dst = np.linspace(0.0, 1.0, target_frames)
            coords = np.stack([[np.interp(dst, src, coords[j, :, d]) for d in range(3)]
                               for j in range(seq.joints)]).transpose(0, 2, 1)
    return coords.reshape(seq.joints, -1).T.copy()


def skeleton_adjacency(topology, joints: int) -> np.ndarray:
    """Symmetric 0/1 adjacency with self-loops."""
    a = np.eye(joints)
    for u, v in topology:
        if not (0 <= u < joints and 0 <= v < joints):
            raise DataError(f"edge ({u}, {v}) references a joint outside [0, {joints})")
        a[u, v] = a[v, u] = 1.0
    return a


def normalize(ds: SkeletonDataset) -> SkeletonDataset:
    """Per-joint zero mean / unit scale, statistics from the training split only."""
    train = np.stack([ds.sequences[i].coords for i in ds.train_idx])    # N x J x T x 3
    mu = train.mean(axis=(0, 2))                                        # J x 3
    sd = train.std(axis=(0, 2, 3))                                      # J
    sd = np.where(sd > 0, sd, 1.0)
    seqs = tuple(replace(s, coords=(s.coords - mu[:, None, :]) / sd[:, None, None]) for s in ds.sequences)
    return replace(ds, sequences=seqs, normalized=True)


def write_skeleton_jsonl(ds: SkeletonDataset, path: str | Path) -> None:
    header = {"n_classes": ds.n_classes, "joints": ds.joints,
              "topology": [list(e) for e in ds.topology],
              "split": {"train": list(ds.train_idx), "test": list(ds.test_idx)}}
    with open(path, "w") as fh:
        fh.write(json.dumps({"header": header}) + "\n")
        for s in ds.sequences:
            fh.write(json.dumps({"label": s.label, "joints": s.joints, "coords": s.coords.tolist()}) + "\n")


def load_skeleton_jsonl(path: str | Path, normalize_coords: bool = True, seed: int = 0) -> SkeletonDataset:
    lines = Path(path).read_text().splitlines()
    if not any(line.strip() for line in lines):
        raise DataError(f"{path}: empty file")
    header = None
    seqs = []
    joints = None
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
        if "header" in obj:
            if header is not None or seqs:
                raise DataError(f"{path}:{lineno}: header must be the first line")
            header = obj["header"]
            continue
        try:
            coords = np.asarray(obj["coords"], dtype=np.float64)
            label = int(obj["label"])
            declared = int(obj.get("joints", coords.shape[0]))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}:{lineno}: bad record ({exc})") from None
        if coords.ndim != 3 or coords.shape[0] != declared:
            raise DataError(f"{path}:{lineno}: coords shape {coords.shape} inconsistent with joints={declared}")
        if joints is None:
            joints = declared
        elif declared != joints:
            raise DataError(f"{path}:{lineno}: {declared} joints, earlier records have {joints}")
        seqs.append(SkeletonSequence(coords, label))
    if not seqs:
        raise DataError(f"{path}: no sequences")
    header = header or {}
    if "joints" in header and header["joints"] != joints:
        raise DataError(f"{path}: header declares {header['joints']} joints, records have {joints}")
    n_classes = int(header.get("n_classes", max(s.label for s in seqs) + 1))
    topology = tuple(tuple(int(v) for v in e) for e in header.get("topology", chain_topology(joints)))
    labels = [s.label for s in seqs]
    if any(lab >= n_classes or lab < 0 for lab in labels):
        raise DataError(f"{path}: label outside [0, {n_classes})")
    if "split" in header:
        train, test = tuple(header["split"]["train"]), tuple(header["split"]["test"])
    else:
        train, test = stratified_split(labels, seed)
    ds = SkeletonDataset(tuple(seqs), n_classes, topology, train, test)
    return normalize(ds) if normalize_coords else ds
