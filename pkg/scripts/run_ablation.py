"""Regularizer ablation at a fixed targeted rate; prints per-method means over seeds.

    python3 scripts/run_ablation.py --config configs/ablation.yaml
"""

import argparse
import logging
from dataclasses import replace
from pathlib import Path

from pfmprune.config import load_config
from pfmprune.experiments import ablate, summarize


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", type=Path, default=Path("configs/ablation.yaml"))
    ap.add_argument("--out", type=Path)
    ap.add_argument("--seeds", type=int, nargs="+", help="override the seed list")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO)

    cfg = load_config(args.config)
    if args.seeds:
        cfg = replace(cfg, seeds=tuple(args.seeds))
    rows = ablate(cfg, args.out or Path(cfg.output_dir))
    print(f"{'method':22s} {'rate':>7} {'kept':>6} {'acc':>6} {'dead':>5}")
    for s in summarize(rows):
        print(f"{s['method']:22s} {s['observed_rate']:7.4f} {s['kept_params']:6.0f} "
              f"{s['accuracy']:6.3f} {s['dead_units']:5.1f}")


if __name__ == "__main__":
    main()
