"""Targeted vs observed pruning rate sweep; prints the alignment table.

    python3 scripts/run_alignment.py --config configs/alignment.yaml
"""

import argparse
import logging
from pathlib import Path

from pfmprune.config import load_config
from pfmprune.experiments import plot_data, sweep_tpr


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", type=Path, default=Path("configs/alignment.yaml"))
    ap.add_argument("--out", type=Path)
    ap.add_argument("--paper-scale", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO)

    cfg = load_config(args.config)
    if args.paper_scale:
        cfg = cfg.full_scale()
    out = args.out or Path(cfg.output_dir)
    rows, alignment = sweep_tpr(cfg, out)
    print(f"{'tpr':>6} {'observed':>9} {'gap':>7} {'bin.frac':>8} {'acc':>6}")
    for tpr, obs in alignment:
        sel = [r for r in rows if r.tpr == tpr]
        bin_frac = min(r.binarization_fraction for r in sel)
        acc = sum(r.accuracy for r in sel) / len(sel)
        print(f"{tpr:6.3f} {obs:9.4f} {abs(obs - tpr):7.4f} {bin_frac:8.3f} {acc:6.3f}")
    plot_data(out / "results.csv", out / "plots")


if __name__ == "__main__":
    main()
