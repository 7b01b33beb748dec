"""Exterior-angle decay of the fixed-tension rule on convex E2 validation curves,
for the literal orientation and its mirror.

    python scripts/angle_decay.py --curves 20 --levels 5
"""
import argparse

import numpy as np

from geotension.datagen import build_dataset
from geotension.experiments import angle_decay, is_convex


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--curves", type=int, default=20)
    ap.add_argument("--levels", type=int, default=5)
    ap.add_argument("--mu", type=float, default=0.0)
    args = ap.parse_args()

    ds = build_dataset(args.seed)
    convex = [s.polygon for s in ds.subset("val", "E2") if is_convex(s.polygon)][: args.curves]
    for orientation in (1, -1):
        rates = [angle_decay(P, args.mu, args.levels, orientation).rate for P in convex]
        print(f"orientation {orientation:+d}: {len(rates)} curves, log2 rate "
              f"mean {np.mean(rates):+.3f}  min {np.min(rates):+.3f}  max {np.max(rates):+.3f}")


if __name__ == "__main__":
    main()
