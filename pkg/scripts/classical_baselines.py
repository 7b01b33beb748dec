"""Regenerate the deterministic baseline table (4pt, 6pt, log-exp, oracle mu)
on a freshly generated validation split.

    python scripts/classical_baselines.py --per-geometry 400 --k 5
"""
import argparse

from geotension.datagen import build_dataset
from geotension.experiments import METHODS, evaluate_method, oracle_grid_search
from geotension.geometry import ALL_GEOMETRIES
from geotension.subdivision import SchemeConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--per-geometry", type=int, default=400)
    ap.add_argument("--k", type=int, default=5)
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()

    ds = build_dataset(args.seed, args.per_geometry)
    runs = {name: evaluate_method(s, ds.val, k=args.k, method=name, jobs=args.jobs) for name, s in METHODS.items()}
    for g in ALL_GEOMETRIES:
        orc = oracle_grid_search(ds.val, g, k=args.k)
        scheme = SchemeConfig("classical", mu=orc.mu_star)
        runs[f"oracle[{g.label}]"] = evaluate_method(scheme, ds.subset("val", g), k=args.k)
        print(f"{g.label} oracle mu*={orc.mu_star:+.4f}  gain over mu=0 {100 * orc.improvement:.2f}%")

    print(f"\n{'method':<14}{'geom':<6}{'mean-NN':>10}{'E_B':>12}{'G1':>8}")
    for g in ALL_GEOMETRIES:
        for name, run in runs.items():
            if name.startswith("oracle[") and g.label not in name:
                continue
            print(f"{name:<14}{g.label:<6}{run.mean('mean_nn', g):>10.4f}"
                  f"{run.mean('bending', g):>12.1f}{run.mean('g1', g):>8.3f}")


if __name__ == "__main__":
    main()
