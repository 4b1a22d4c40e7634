#!/usr/bin/env python3
"""Build the deterministic toy single-tissue dataset used by demos and tests.

Usage: python scripts/make_toy_dataset.py OUT_DIR [--per-class N] [--seed S]
"""

import argparse

from histomix.toydata import make_toy_dataset


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("out_dir")
    parser.add_argument("--per-class", type=int, default=12)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    manifest = make_toy_dataset(args.out_dir, per_class=args.per_class, seed=args.seed)
    print(f"wrote {manifest}")


if __name__ == "__main__":
    main()
