"""Experiment runners: single runs, tpr sweeps, ablations, gradient checks, plot data."""

from __future__ import annotations

import csv
import json
import logging
import re
import time
from collections import defaultdict
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import tensor as T
from .config import ExperimentConfig, dump_config
from .data import generate_synthetic, load_skeleton_jsonl, normalize, skeleton_adjacency
from .errors import DataError
from .gcn import GcnArchitecture, build_model, save_checkpoint
from .phasefield import PhaseFieldParams, ultra_local
from .pruning import apply_masks, binarize_masks, magnitude_prune
from .regularizers import KINDS, RegularizerSpec
from .training import Arrays, TrainConfig, TrainResult, evaluate, make_report, total_loss, train, write_metrics

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
RESULT_COLUMNS = ("method", "tpr", "observed_rate", "kept_params", "accuracy",
                  "binarization_fraction", "dead_units", "seed", "wall_time_s")
MAGNITUDE = "Magnitude"


@dataclass(frozen=True)
class ResultRow:
    method: str
    tpr: float
    observed_rate: float
    kept_params: int
    accuracy: float
    binarization_fraction: float
    dead_units: int
    seed: int
    wall_time_s: float

    def key(self):
        return (self.method, self.tpr, self.seed)

    def as_csv(self) -> dict:
        return {k: (repr(v) if isinstance(v, float) else v) for k, v in asdict(self).items()}


@dataclass(frozen=True)
class Method:
    """One table row: a regularizer setup, or magnitude pruning when ``reg`` is None."""

    label: str
    tpr: float
    reg: RegularizerSpec | None


@dataclass
class Prepared:
    arrays: Arrays
    adjacency: np.ndarray
    arch: GcnArchitecture


def prepare(cfg: ExperimentConfig) -> Prepared:
    d = cfg.dataset
    if d.kind == "synthetic":
        ds = normalize(generate_synthetic(d.n_classes, d.samples_per_class, d.joints, d.frames,
                                          seed=d.seed, noise=d.noise))
    else:
        ds = load_skeleton_jsonl(d.path, normalize_coords=True, seed=d.seed)
    arrays = Arrays.from_dataset(ds, d.target_frames)
    arch = cfg.arch.resolve(ds.joints, 3 * d.target_frames, ds.n_classes)
    return Prepared(arrays, skeleton_adjacency(ds.topology, ds.joints), arch)


def _slug(*parts) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "_", "_".join(str(p) for p in parts))


def _train_cfg(cfg: ExperimentConfig, reg: RegularizerSpec, seed: int) -> TrainConfig:
    return replace(cfg.train, reg=reg, seed=seed, target_frames=cfg.dataset.target_frames)


def _finetune(cfg: ExperimentConfig, model, masks, prep: Prepared, seed: int) -> TrainResult:
    pruned = apply_masks(model, masks)
    ft_cfg = _train_cfg(cfg, RegularizerSpec("none", lam=0.0), seed)
    return train(pruned, prep.arrays, ft_cfg, epochs=cfg.finetune_epochs, report_masks=masks)


def calibrate_lambda(cfg: ExperimentConfig, reg: RegularizerSpec, seed: int, prep: Prepared,
                     lo: float = -2.0, hi: float = 4.0):
    """Bisect log10(lambda) so the rate observed at z=0.5 approaches the target.

    Assumes the rate grows with lambda; returns the trial closest to target.
    """
    best = None
    for _ in range(cfg.lambda_trials):
        mid = 0.5 * (lo + hi)
        trial = replace(reg, lam=10.0**mid)
        model = build_model(prep.arch, seed, prep.adjacency, cfg.arch.init)
        result = train(model, prep.arrays, _train_cfg(cfg, trial, seed))
        rate = result.final.observed_rate
        gap = abs(rate - reg.target_tpr)
        if best is None or gap < best[0]:
            best = (gap, trial, model, result)
        if rate < reg.target_tpr:
            lo = mid
        else:
            hi = mid
    return best[1], best[2], best[3]


def run_method(cfg: ExperimentConfig, method: Method, seed: int, prep: Prepared,
               out_dir: Path | None = None) -> ResultRow:
    start = time.perf_counter()
    lam = None
    if method.reg is None:
        model = build_model(prep.arch, seed, prep.adjacency, cfg.arch.init)
        result = train(model, prep.arrays, _train_cfg(cfg, RegularizerSpec("none", lam=0.0), seed))
        masks = magnitude_prune(model, method.tpr)
        if cfg.finetune_epochs:
            result = _finetune(cfg, model, masks, prep, seed)
            report = result.final
        else:
            report = make_report(model, prep.arrays, 0.5, hard_masks=masks)
    else:
        reg = method.reg
        calibrate = cfg.calibrate_lambda and reg.kind not in ("pfm", "none")
        if calibrate:
            reg, model, result = calibrate_lambda(cfg, reg, seed, prep)
        else:
            model = build_model(prep.arch, seed, prep.adjacency, cfg.arch.init)
            result = train(model, prep.arrays, _train_cfg(cfg, reg, seed))
        report = result.final
        lam = reg.lam
        if cfg.finetune_variational and cfg.finetune_epochs and reg.kind != "none":
            masks = binarize_masks(model, reg.threshold())
            result = _finetune(cfg, model, masks, prep, seed)
            report = result.final
    wall = time.perf_counter() - start
    row = ResultRow(method.label, float(method.tpr), float(report.observed_rate), int(report.kept_params),
                    float(report.accuracy), float(report.binarization_fraction),
                    int(report.dead_output_units), int(seed), round(wall, 3))
    if out_dir is not None:
        slug = _slug(method.label, f"tpr{method.tpr}", f"s{seed}")
        write_metrics(result.metrics, out_dir / f"metrics_{slug}.csv")
        save_checkpoint(result.model, out_dir / f"{slug}.ckpt")
        summary = {"row": asdict(row), "lambda": lam, "threshold": report.threshold,
                   "soft_accuracy": soft_accuracy(model, prep.arrays), "hard_accuracy": report.accuracy,
                   "dead_nodes": report.dead_nodes, "total_params": report.total_params}
        (out_dir / f"summary_{slug}.json").write_text(json.dumps(summary, indent=2) + "\n")
    return row


def write_results(rows: Iterable[ResultRow], path: Path) -> list[ResultRow]:
    rows = sorted(rows, key=ResultRow.key)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=RESULT_COLUMNS)
        writer.writeheader()
        for r in rows:
            writer.writerow(r.as_csv())
    meta = {"schema_version": SCHEMA_VERSION, "columns": list(RESULT_COLUMNS)}
    path.with_suffix(".meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    return rows


def read_results(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(RESULT_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise DataError(f"{path}: missing columns {sorted(missing)}")
        return list(reader)


def summarize(rows: Sequence[ResultRow]) -> list[dict]:
    """Mean of each numeric column per (method, tpr)."""
    groups = defaultdict(list)
    for r in rows:
        groups[(r.method, r.tpr)].append(r)
    out = []
    for (method, tpr), grp in sorted(groups.items()):
        entry = {"method": method, "tpr": tpr, "seed": "mean", "n_seeds": len(grp)}
        for col in ("observed_rate", "kept_params", "accuracy", "binarization_fraction",
                    "dead_units", "wall_time_s"):
            entry[col] = float(np.mean([getattr(r, col) for r in grp]))
        out.append(entry)
    return out


def _prepare_out(cfg: ExperimentConfig, out: str | Path | None) -> Path:
    out_dir = Path(out or cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, out_dir / "config.yaml")
    return out_dir


def _finish(rows, out_dir: Path, failures=()) -> list[ResultRow]:
    rows = write_results(rows, out_dir / "results.csv")
    summary = summarize(rows)
    if summary:
        with open(out_dir / "results_mean.csv", "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(summary[0]))
            writer.writeheader()
            writer.writerows(summary)
    if failures:
        (out_dir / "failures.json").write_text(json.dumps(list(failures), indent=2) + "\n")
    return rows


def run(cfg: ExperimentConfig, out: str | Path | None = None) -> ResultRow:
    """Train the configured regularizer for ``cfg.train.seed`` and write all outputs."""
    out_dir = _prepare_out(cfg, out)
    prep = prepare(cfg)
    reg = cfg.reg
    method = Method(reg.label, reg.target_tpr, reg)
    row = run_method(cfg, method, cfg.train.seed, prep, out_dir)
    _finish([row], out_dir)
    return row


def sweep_tpr(cfg: ExperimentConfig, out: str | Path | None = None):
    """One PFM run per (tpr, seed); returns rows and the (tpr, mean observed rate) table."""
    if not cfg.sweep:
        raise ValueError("sweep_tpr needs a non-empty sweep list")
    out_dir = _prepare_out(cfg, out)
    prep = prepare(cfg)
    rows, failures = [], []
    for tpr in cfg.sweep:
        reg = replace(cfg.reg, kind="pfm", pfm_joint=False, target_tpr=tpr)
        for seed in cfg.seeds:
            try:
                rows.append(run_method(cfg, Method(reg.label, tpr, reg), seed, prep, out_dir))
            except Exception as exc:  # a failed point must not stop the sweep
                log.error("sweep point tpr=%s seed=%s failed: %s", tpr, seed, exc)
                failures.append({"tpr": tpr, "seed": seed, "error": f"{type(exc).__name__}: {exc}"})
    rows = _finish(rows, out_dir, failures)
    alignment = []
    for tpr in cfg.sweep:
        rates = [r.observed_rate for r in rows if r.tpr == tpr]
        if rates:
            alignment.append((tpr, float(np.mean(rates))))
    with open(out_dir / "alignment.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["tpr", "observed_rate", "abs_gap"])
        for tpr, obs in alignment:
            writer.writerow([repr(tpr), repr(obs), repr(abs(obs - tpr))])
    return rows, alignment


def ablation_methods(cfg: ExperimentConfig) -> list[Method]:
    """WR, WR+reg and WR+reg+PFM(alpha=0) per regularizer, WR+PFM, magnitude pruning."""
    tpr = cfg.ablation_tpr
    base = RegularizerSpec("none", lam=0.0, target_tpr=tpr, beta=cfg.reg.beta)
    methods = [Method(base.label, tpr, base)]
    for kind in cfg.ablation:
        lam = cfg.reg_lambdas.get(kind, cfg.reg.lam)
        for joint in (False, True):
            spec = RegularizerSpec(kind, lam=lam, pfm_joint=joint, target_tpr=tpr,
                                   beta=cfg.reg.beta, tau=cfg.reg.tau, normalize=cfg.reg.normalize,
                                   pfm_lam=cfg.joint_pfm_lambda if joint else None)
            methods.append(Method(spec.label, tpr, spec))
    pfm = RegularizerSpec("pfm", lam=cfg.reg.lam, target_tpr=tpr, beta=cfg.reg.beta,
                          normalize=cfg.reg.normalize)
    methods.append(Method(pfm.label, tpr, pfm))
    methods.append(Method(MAGNITUDE, tpr, None))
    return methods


def ablate(cfg: ExperimentConfig, out: str | Path | None = None) -> list[ResultRow]:
    if not cfg.ablation:
        raise ValueError("ablate needs a non-empty ablation list")
    out_dir = _prepare_out(cfg, out)
    prep = prepare(cfg)
    rows = [run_method(cfg, m, seed, prep, out_dir) for m in ablation_methods(cfg) for seed in cfg.seeds]
    return _finish(rows, out_dir)


# ---------------------------------------------------------------- verification

GRADCHECK_ARCH = GcnArchitecture(n_nodes=5, in_channels=4, heads=2, conv_filters=3, n_classes=3)


def gradcheck_specs(tpr: float = 0.7) -> list[RegularizerSpec]:
    return [RegularizerSpec(kind, lam=1.0, target_tpr=tpr, normalize=False) for kind in KINDS]


def gradcheck_cmd(seed: int = 0, eps: float = 1e-5) -> dict[str, float]:
    """Max relative autodiff-vs-FD error of the full objective, per regularizer kind."""
    rng = np.random.default_rng(seed)
    batch = rng.normal(size=(4, GRADCHECK_ARCH.in_channels, GRADCHECK_ARCH.n_nodes))
    labels = rng.integers(0, GRADCHECK_ARCH.n_classes, size=4)
    errors = {}
    for spec in gradcheck_specs():
        model = build_model(GRADCHECK_ARCH, seed)
        errors[spec.kind] = T.grad_check(lambda _: total_loss(model, batch, labels, spec),
                                         model.latents(), eps)
    return errors


# ---------------------------------------------------------------- plot data

def _write_series(path: Path, xs, ys, header: str) -> None:
    lines = [f"# {header}"] + [f"{x:.10g} {y:.10g}" for x, y in zip(xs, ys)]
    path.write_text("\n".join(lines) + "\n")


def regularizer_curves(samples: int = 201, beta: float = 3.0) -> dict[str, np.ndarray]:
    m = np.linspace(0.0, 1.0, samples)
    clipped = np.clip(m, 1e-12, None)
    one_minus = np.clip(1.0 - m, 1e-12, None)
    return {
        "m": m,
        "pfm_balanced": ultra_local(m, PhaseFieldParams(0.0, beta)),
        "pfm_over": ultra_local(m, PhaseFieldParams.for_tpr(0.8, beta)),
        "pfm_under": ultra_local(m, PhaseFieldParams.for_tpr(0.2, beta)),
        "l0": 1.0 - np.exp(-(m / 0.1) ** 2),
        "l1": np.abs(m),
        "l2": m * m,
        "entropy": -(m * np.log(clipped) + (1.0 - m) * np.log(one_minus)),
    }


def plot_data(results_csv: str | Path, out_dir: str | Path) -> list[Path]:
    """Two-column text series for regularizer curves, tpr alignment and accuracy vs rate."""
    rows = read_results(results_csv)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    curves = regularizer_curves()
    for name, ys in curves.items():
        if name == "m":
            continue
        path = out_dir / f"fig1_{name}.dat"
        _write_series(path, curves["m"], ys, f"mask_value {name}")
        written.append(path)
    by_method = defaultdict(lambda: defaultdict(list))
    for r in rows:
        by_method[r["method"]][float(r["tpr"])].append(r)
    for method, groups in sorted(by_method.items()):
        tprs = sorted(groups)
        observed = [float(np.mean([float(r["observed_rate"]) for r in groups[t]])) for t in tprs]
        accuracy = [float(np.mean([float(r["accuracy"]) for r in groups[t]])) for t in tprs]
        slug = _slug(method)
        path = out_dir / f"alignment_{slug}.dat"
        _write_series(path, tprs, observed, "targeted_rate observed_rate")
        written.append(path)
        order = np.argsort(observed, kind="stable")
        path = out_dir / f"accuracy_{slug}.dat"
        _write_series(path, [observed[i] for i in order], [accuracy[i] for i in order],
                      "observed_rate accuracy")
        written.append(path)
    return written


def soft_accuracy(model, arrays: Arrays) -> float:
    """Accuracy of the reparametrized but unmasked network."""
    return evaluate(model, arrays.x_test, arrays.y_test, n_classes=arrays.n_classes)


def param_layout_search(target: int, n_classes: int, node_counts=(15, 30), max_heads: int = 4,
                        max_channels: int = 96, max_filters: int = 256) -> list[GcnArchitecture]:
    """All (nodes, heads, channels, filters) layouts whose latent count equals ``target``."""
    found = []
    for n in node_counts:
        for k in range(1, max_heads + 1):
            for s in range(1, max_channels + 1):
                for c in range(1, max_filters + 1):
                    if k * (n * n + s * c) + n * c * n_classes == target:
                        found.append(GcnArchitecture(n, s, k, c, n_classes))
    return found
