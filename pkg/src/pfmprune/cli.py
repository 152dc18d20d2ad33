"""Command-line entry point: ``pfmprune {run,sweep,ablate,gradcheck,plot}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import load_config
from .errors import ConfigError, DataError, NonFiniteError
from .experiments import ablate, gradcheck_cmd, plot_data, run, sweep_tpr

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
GRADCHECK_FAIL = 1e-4


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pfmprune", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    for name, helptext in [("run", "train one configuration"),
                           ("sweep", "PFM runs over the configured tpr list"),
                           ("ablate", "regularizer ablation table"),
                           ("gradcheck", "finite-difference check of the full objective"),
                           ("plot", "write plot-ready data series from results.csv")]:
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("--config", type=Path, help="YAML experiment config")
        sp.add_argument("--out", type=Path, help="output directory (overrides output_dir)")
        sp.add_argument("--seed", type=int, help="run seed (overrides train.seed and seeds)")
        sp.add_argument("--paper-scale", action="store_true", help="train for 2700 epochs")
        sp.add_argument("-v", "--verbose", action="store_true")
        if name == "plot":
            sp.add_argument("--results", type=Path, help="results CSV (default: OUT/results.csv)")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "gradcheck":
            errors = gradcheck_cmd(0 if args.seed is None else args.seed)
            worst = 0.0
            for kind, err in errors.items():
                status = "PASS" if err < GRADCHECK_FAIL else "FAIL"
                print(f"{kind:8s} max_rel_err={err:.3e} {status}")
                worst = max(worst, err)
            return EXIT_OK if worst < GRADCHECK_FAIL else EXIT_NUMERIC

        cfg = load_config(args.config)
        if args.paper_scale:
            cfg = cfg.full_scale()
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        out = args.out or Path(cfg.output_dir)

        if args.command == "run":
            row = run(cfg, out)
            print(f"{row.method} tpr={row.tpr} observed={row.observed_rate:.4f} "
                  f"kept={row.kept_params} acc={row.accuracy:.4f}")
        elif args.command == "sweep":
            _, alignment = sweep_tpr(cfg, out)
            for tpr, obs in alignment:
                print(f"tpr={tpr:.4f} observed={obs:.4f} gap={abs(obs - tpr):.4f}")
        elif args.command == "ablate":
            for row in ablate(cfg, out):
                print(f"{row.method:22s} seed={row.seed} rate={row.observed_rate:.4f} "
                      f"kept={row.kept_params} acc={row.accuracy:.4f}")
        elif args.command == "plot":
            results = args.results or out / "results.csv"
            for path in plot_data(results, out / "plots"):
                print(path)
    except (ConfigError, DataError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonFiniteError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
