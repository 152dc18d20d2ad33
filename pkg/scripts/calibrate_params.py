"""Search GCN layouts whose latent count hits a target (default 15320, 8 classes)."""

import argparse

from pfmprune.experiments import param_layout_search
from pfmprune.gcn import GcnArchitecture


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--target", type=int, default=15320)
    ap.add_argument("--classes", type=int, default=8)
    ap.add_argument("--nodes", type=int, nargs="+", default=[15, 30])
    args = ap.parse_args()

    stated = GcnArchitecture(n_nodes=15, in_channels=8, heads=1, conv_filters=32, n_classes=args.classes)
    print(f"1 head, 8 channels, 32 filters on 15 nodes: {stated.param_count} latents")
    matches = param_layout_search(args.target, args.classes, node_counts=tuple(args.nodes))
    if not matches:
        print(f"no layout in the searched family gives exactly {args.target}")
    for a in matches:
        print(f"nodes={a.n_nodes} heads={a.heads} channels={a.in_channels} filters={a.conv_filters} "
              f"-> {a.param_count}")


if __name__ == "__main__":
    main()
