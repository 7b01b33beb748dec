"""Train the desk-scale predictor and compare it with the four-point scheme.

    python scripts/desk_train.py --out runs/desk --seed 0
"""
import argparse
import json
import time
from pathlib import Path

from geotension.datagen import build_dataset
from geotension.experiments import METHODS, Predictor, evaluate_method
from geotension.geometry import ALL_GEOMETRIES
from geotension.subdivision import SchemeConfig
from geotension.training import DESK_CURVES_PER_GEOMETRY, desk_preset, train


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/desk")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--k", type=int, default=5)
    args = ap.parse_args()

    out = Path(args.out)
    ds = build_dataset(args.seed, DESK_CURVES_PER_GEOMETRY)
    pcfg, tcfg = desk_preset(args.epochs)
    t0 = time.perf_counter()
    res = train(ds, pcfg, tcfg, seed=args.seed, out_dir=out,
                progress=lambda r: print(f"epoch {r['epoch']:3d}  loss {r['loss']:.4f}  val {r.get('val_mean', '')}"))
    elapsed = time.perf_counter() - t0

    pred = Predictor.load(out / "best.ckpt")
    neural = evaluate_method(SchemeConfig("neural"), ds.val, k=args.k, predictor=pred, method="neural")
    four = evaluate_method(METHODS["4pt"], ds.val, k=args.k, method="4pt")
    summary = {"seed": args.seed, "seconds": elapsed, "best_epoch": res.best_epoch,
               "loss_first": res.log[0]["loss"], "loss_last": res.log[-1]["loss"], "g1": {}}
    for g in ALL_GEOMETRIES:
        a, b = neural.mean("g1", g), four.mean("g1", g)
        summary["g1"][g.label] = {"neural": a, "4pt": b, "reduction": 1 - a / b}
        print(f"{g.label}: G1 neural {a:.3f}  4pt {b:.3f}  ({100 * (1 - a / b):.0f}% lower)")
    (out / "summary.json").write_text(json.dumps(summary, indent=2))


if __name__ == "__main__":
    main()
