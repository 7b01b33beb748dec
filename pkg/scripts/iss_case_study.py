"""Refine the 16-point ISS ground-track polygon and score it against the dense track.

    python scripts/iss_case_study.py --k 5 [--checkpoint runs/desk/best.ckpt]
"""
import argparse

from geotension.experiments import METHODS, Predictor, iss_evaluate, iss_track
from geotension.subdivision import SchemeConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--k", type=int, default=5)
    ap.add_argument("--checkpoint")
    args = ap.parse_args()

    methods = {"4pt": METHODS["4pt"], "6pt": METHODS["6pt"]}
    pred = None
    if args.checkpoint:
        pred = Predictor.load(args.checkpoint)
        methods["neural"] = SchemeConfig("neural")
    track = iss_track()
    print(f"track: {track.n_orbit} orbit + {track.n_closure} closure samples, gap {track.gap_deg:.2f} deg")
    _, reports, _ = iss_evaluate(methods, k=args.k, predictor=pred, track=track)
    print(f"{'method':<8}{'Hausdorff':>11}{'mean-NN':>10}{'E_B':>9}{'G1':>8}")
    for name, r in reports.items():
        print(f"{name:<8}{r.hausdorff:>11.5f}{r.mean_nn:>10.5f}{r.bending:>9.1f}{r.g1:>8.3f}")


if __name__ == "__main__":
    main()
