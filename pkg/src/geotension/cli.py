"""Command-line front end.

Every subcommand resolves a flat dotted-key configuration (defaults, then an
optional ``key = value`` file, then ``--set`` overrides), writes it to
``effective_config.json`` in the output directory and then runs. Failures
print one ``error: <kind>: <message>`` line to stderr.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Dict, List

import numpy as np

from . import __version__
from .datagen import FAMILIES, Dataset, DatasetError, generate_samples, load_dataset, save_dataset
from .geometry import ALL_GEOMETRIES, Geometry
from .predictor import CheckpointError, PredictorConfig, lipschitz_estimate, load_checkpoint
from .subdivision import HYP_RULES, SchemeConfig

EXIT_USAGE, EXIT_CONFIG, EXIT_IO, EXIT_OTHER = 2, 3, 4, 1

DEFAULTS: Dict[str, object] = {
    "seed": 0,
    "data.per_geometry": 400,
    "data.families.E2": ",".join(FAMILIES[Geometry.EUCLIDEAN]),
    "data.families.S2": ",".join(FAMILIES[Geometry.SPHERICAL]),
    "data.families.H2": ",".join(FAMILIES[Geometry.HYPERBOLIC]),
    "predictor.width": 128,
    "predictor.trunk_depth": 4,
    "predictor.embed_dim": 8,
    "predictor.head_hidden": 32,
    "predictor.dropout_rate": 0.05,
    "predictor.geometry_mode": "learned",
    "predictor.head_out_init": "zero",
    "train.preset": "full",
    "train.curves_per_geometry": 0,
    "train.epochs": 300,
    "train.batch_size": 8,
    "train.lr": 1e-3,
    "train.weight_decay": 1e-4,
    "train.clip_norm": 0.5,
    "train.warmup_epochs": 5,
    "train.eval_every": 10,
    "train.lr_patience": 10,
    "train.stop_patience": 25,
    "train.min_improve": 1e-5,
    "train.lr_min": 1e-6,
    "train.lambda_c": 1.0,
    "train.lambda_b": 1e-4,
    "train.lambda_e": 0.10,
    "train.lambda_s.E2": 0.05,
    "train.lambda_s.S2": 0.15,
    "train.lambda_s.H2": 0.05,
    "train.warmup_mu": -0.15,
    "train.neural_steps": 2,
    "train.k_equiv": 2,
    "eval.levels": 5,
    "eval.split": "val",
    "eval.methods": "4pt,6pt,logexp4,logexp6,oracle,lah,neural",
    "eval.lah_slope": -0.5,
    "robustness.levels": 4,
    "robustness.sigmas": "0,0.03,0.06,0.10,0.15,0.20",
    "robustness.methods": "4pt,neural",
    "analyze.per_geometry": 60,
    "analyze.proximity_curves": 20,
    "lipschitz.iters": 100,
    "iss.levels": 5,
    "iss.methods": "4pt,6pt,neural",
    "ablate.conditions": "LearnedEmbed,OneHot,NoGeom,NoEquiv,NoBending,NoSmooth",
    "hyp_insert": "corrected",
}

PRESETS = {
    "desk": {"train.curves_per_geometry": 30, "predictor.width": 32, "train.epochs": 30},
    "full": {},
}


class UsageError(ValueError):
    pass


class ConfigError(ValueError):
    pass


def _parse_value(raw: str, like):
    raw = raw.strip()
    if isinstance(like, bool):
        if raw.lower() in ("1", "true", "yes"):
            return True
        if raw.lower() in ("0", "false", "no"):
            return False
        raise UsageError(f"expected a boolean, got {raw!r}")
    if isinstance(like, int):
        try:
            return int(raw)
        except ValueError:
            raise UsageError(f"expected an integer, got {raw!r}") from None
    if isinstance(like, float):
        try:
            return float(raw)
        except ValueError:
            raise UsageError(f"expected a number, got {raw!r}") from None
    return raw


def _apply(cfg: dict, key: str, raw: str):
    if key not in DEFAULTS:
        raise UsageError(f"unknown config key {key!r}")
    cfg[key] = _parse_value(raw, DEFAULTS[key])


def read_config_file(path) -> List[tuple]:
    pairs = []
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected 'key = value'")
        k, v = line.split("=", 1)
        pairs.append((k.strip(), v))
    return pairs


def resolve_config(args) -> dict:
    cfg = dict(DEFAULTS)
    preset = getattr(args, "preset", None)
    if preset:
        cfg["train.preset"] = preset
    for k, v in PRESETS[cfg["train.preset"]].items():
        cfg[k] = v
    if args.config:
        for k, v in read_config_file(args.config):
            _apply(cfg, k, v)
    for item in args.set or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        _apply(cfg, k.strip(), v)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if getattr(args, "hyp_insert", None):
        cfg["hyp_insert"] = args.hyp_insert
    if cfg["hyp_insert"] not in HYP_RULES:
        raise UsageError(f"hyp_insert must be one of {', '.join(HYP_RULES)}")
    if getattr(args, "methods", None):
        cfg[{"iss": "iss.methods", "robustness": "robustness.methods"}.get(args.command, "eval.methods")] = args.methods
    return cfg


def _split_list(s) -> List[str]:
    return [x.strip() for x in str(s).split(",") if x.strip()]


def predictor_config(cfg) -> PredictorConfig:
    return PredictorConfig(
        width=cfg["predictor.width"], trunk_depth=cfg["predictor.trunk_depth"],
        embed_dim=cfg["predictor.embed_dim"], head_hidden=cfg["predictor.head_hidden"],
        dropout_rate=cfg["predictor.dropout_rate"], geometry_mode=cfg["predictor.geometry_mode"],
        head_out_init=cfg["predictor.head_out_init"],
    )


def train_config(cfg):
    from .training import TrainConfig
    return TrainConfig(
        lambda_c=cfg["train.lambda_c"], lambda_b=cfg["train.lambda_b"], lambda_e=cfg["train.lambda_e"],
        lambda_s={g: cfg[f"train.lambda_s.{g}"] for g in ("E2", "S2", "H2")},
        warmup_mu=cfg["train.warmup_mu"], neural_steps=cfg["train.neural_steps"],
        batch_size=cfg["train.batch_size"], lr=cfg["train.lr"], weight_decay=cfg["train.weight_decay"],
        clip_norm=cfg["train.clip_norm"], epochs=cfg["train.epochs"], warmup_epochs=cfg["train.warmup_epochs"],
        eval_every=cfg["train.eval_every"], lr_patience=cfg["train.lr_patience"],
        stop_patience=cfg["train.stop_patience"], min_improve=cfg["train.min_improve"],
        lr_min=cfg["train.lr_min"], k_equiv=cfg["train.k_equiv"], eval_levels=cfg["eval.levels"],
        hyp_rule=cfg["hyp_insert"],
    )


def desk_subset(ds: Dataset, per_geometry: int):
    """First ``0.8 n`` training and ``0.2 n`` validation curves of each geometry, by id."""
    n_train = int(round(0.8 * per_geometry))
    tr, va = [], []
    for g in ALL_GEOMETRIES:
        tr += sorted(ds.subset("train", g), key=lambda s: s.id)[:n_train]
        va += sorted(ds.subset("val", g), key=lambda s: s.id)[:per_geometry - n_train]
    return tr, va


def _families(cfg) -> dict:
    fams = {}
    for g in ALL_GEOMETRIES:
        names = tuple(_split_list(cfg[f"data.families.{g.label}"]))
        bad = [n for n in names if n not in FAMILIES[g]]
        if bad or not names:
            raise UsageError(f"unknown {g.label} family {','.join(bad) or '(empty)'}; "
                             f"valid: {', '.join(FAMILIES[g])}")
        fams[g] = names
    return fams


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_effective(out: Path, args, cfg, argv):
    rec = {"command": args.command, "version": __version__, "config": cfg, "argv": list(argv)}
    (out / "effective_config.json").write_text(json.dumps(rec, indent=1, sort_keys=True) + "\n")


def _load_data(args) -> Dataset:
    if not args.data:
        raise ConfigError("--data is required")
    try:
        return load_dataset(args.data)
    except DatasetError as exc:
        raise ConfigError(str(exc)) from None


def _predictor(args, required: bool):
    from .experiments import Predictor
    if not getattr(args, "checkpoint", None):
        if required:
            raise ConfigError("this command needs --checkpoint")
        return None
    return Predictor.load(args.checkpoint)


def _scheme(name: str, cfg, oracle_mu=None, lah_mu=0.0):
    from .experiments import METHODS
    rule = cfg["hyp_insert"]
    if name in METHODS:
        return replace(METHODS[name], hyp_rule=rule)
    if name == "oracle":
        return SchemeConfig("classical", mu=oracle_mu, hyp_rule=rule)
    if name == "lah":
        return SchemeConfig("lah", mu=lah_mu, slope=cfg["eval.lah_slope"], hyp_rule=rule)
    if name == "neural":
        return SchemeConfig("neural", hyp_rule=rule)
    raise UsageError(f"unknown method {name!r}; valid: 4pt, 6pt, logexp4, logexp6, oracle, lah, neural")


# ---------------------------------------------------------------- commands

def cmd_gen_data(args, cfg, out):
    fams = _families(cfg)
    samples, split = generate_samples(cfg["seed"], cfg["data.per_geometry"], families=fams)
    ds = Dataset(samples, split, cfg["seed"])
    try:
        save_dataset(ds, out, force=args.force)
    except FileExistsError as exc:
        raise ConfigError(str(exc)) from None
    return {"samples": len(samples), "train": len(ds.train), "val": len(ds.val)}


def cmd_train(args, cfg, out):
    from .training import train
    ds = _load_data(args)
    n = cfg["train.curves_per_geometry"]
    tr, va = desk_subset(ds, n) if n else (None, None)
    pcfg, tcfg = predictor_config(cfg), train_config(cfg)

    def progress(rec):
        if not args.quiet:
            print(json.dumps({k: rec[k] for k in ("epoch", "lr", "loss") if k in rec}), file=sys.stderr)

    res = train(ds, pcfg, tcfg, cfg["seed"], out, resume=args.resume, train_subset=tr, val_subset=va,
                progress=progress)
    return {"best_metric": res.best_metric, "best_epoch": res.best_epoch,
            "epochs_run": len(res.log), "stopped_early": res.stopped_early,
            "checkpoint": str(out / "best.ckpt")}


def _eval_split(args, cfg, ds):
    split = cfg["eval.split"]
    if split not in ("train", "val"):
        raise UsageError("eval.split must be train or val")
    return ds.subset(split)


def cmd_eval(args, cfg, out):
    from .experiments import EvalRun, evaluate_method, oracle_grid_search
    ds = _load_data(args)
    samples = _eval_split(args, cfg, ds)
    methods = _split_list(cfg["eval.methods"])
    for m in methods:
        _scheme(m, cfg, 0.0)
    predictor = _predictor(args, "neural" in methods)
    mus = {}
    if "oracle" in methods or "lah" in methods:
        mus = {g.label: oracle_grid_search(samples, g, cfg["eval.levels"], jobs=args.jobs).mu_star
               for g in ALL_GEOMETRIES if any(s.geometry is g for s in samples)}
    for m in methods:
        rows = []
        for g in ALL_GEOMETRIES:
            sub = [s for s in samples if s.geometry is g]
            if not sub:
                continue
            scheme = _scheme(m, cfg, mus.get(g.label), mus.get(g.label, 0.0))
            rows += evaluate_method(scheme, sub, cfg["eval.levels"], predictor, m, args.jobs).rows
        EvalRun(m, rows).write(out)
    if mus:
        (out / "oracle_mu.json").write_text(json.dumps(mus, indent=1, sort_keys=True) + "\n")
    return {"methods": methods}


def cmd_oracle(args, cfg, out):
    from .experiments import oracle_grid_search, write_rows
    ds = _load_data(args)
    samples = _eval_split(args, cfg, ds)
    res = {}
    rows = []
    for g in ALL_GEOMETRIES:
        if not any(s.geometry is g for s in samples):
            continue
        r = oracle_grid_search(samples, g, cfg["eval.levels"], jobs=args.jobs)
        res[g.label] = {"mu_star": r.mu_star, "mean_nn": r.best_mean_nn, "mean_nn_mu0": r.baseline,
                        "improvement": r.improvement}
        rows += [{"geometry": g.label, "mu": mu, "mean_nn": v} for mu, v in r.table]
    write_rows(out / "oracle_grid.csv", rows, ("geometry", "mu", "mean_nn"))
    (out / "oracle.json").write_text(json.dumps(res, indent=1, sort_keys=True) + "\n")
    return res


def cmd_robustness(args, cfg, out):
    from dataclasses import asdict
    from .experiments import robustness_study, write_rows
    ds = _load_data(args)
    samples = _eval_split(args, cfg, ds)
    names = _split_list(cfg["robustness.methods"])
    methods = {m: _scheme(m, cfg) for m in names}
    predictor = _predictor(args, "neural" in names)
    sigmas = [float(x) for x in _split_list(cfg["robustness.sigmas"])]
    rows = robustness_study(samples, methods, sigmas, cfg["robustness.levels"], cfg["seed"], predictor)
    write_rows(out / "robustness.csv", [asdict(r) for r in rows], ("method", "sigma", "g1_mean", "g1_std", "n"))
    (out / "robustness.json").write_text(json.dumps([asdict(r) for r in rows], indent=1) + "\n")
    return {"rows": len(rows)}


def cmd_ablate(args, cfg, out):
    from .experiments import ABLATIONS, ablation_run
    ds = _load_data(args)
    conds = _split_list(cfg["ablate.conditions"])
    bad = [c for c in conds if c not in ABLATIONS]
    if bad:
        raise UsageError(f"unknown ablation {','.join(bad)}; valid: {', '.join(ABLATIONS)}")
    n = cfg["train.curves_per_geometry"]
    tr, va = desk_subset(ds, n) if n else (None, None)
    summary = {}
    for c in conds:
        run, res = ablation_run(c, ds, predictor_config(cfg), train_config(cfg), cfg["seed"], tr, va,
                                out / c, cfg["eval.levels"])
        run.write(out, f"ablation_{c}")
        summary[c] = run.aggregate()
    (out / "ablation.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    return {"conditions": conds}


def cmd_analyze(args, cfg, out):
    from dataclasses import asdict
    from .experiments import proximity_diagnostic, single_tension_check, tension_profiles, write_rows
    ds = _load_data(args)
    predictor = _predictor(args, True)
    samples = _eval_split(args, cfg, ds)
    profiles = tension_profiles(samples, predictor, cfg["analyze.per_geometry"])
    rows = []
    for label, prof in profiles.items():
        rows += [{"geometry": label, "edge": i, "mu_eff": ("nan" if not np.isfinite(v) else repr(float(v)))}
                 for i, v in enumerate(prof.values)]
    write_rows(out / "mu_eff.csv", rows, ("geometry", "edge", "mu_eff"))
    stats = {k: p.stats() for k, p in profiles.items()}
    check = single_tension_check({k: s["mean"] for k, s in stats.items()})
    lip = lipschitz_estimate(predictor.params, predictor.cfg, cfg["lipschitz.iters"], cfg["seed"])
    prox = {}
    for g in ALL_GEOMETRIES:
        sub = [s for s in samples if s.geometry is g][: cfg["analyze.proximity_curves"]]
        if sub:
            prox[g.label] = asdict(proximity_diagnostic(predictor, sub))
    report = {"mu_eff": stats, "single_tension": asdict(check), "lipschitz": asdict(lip), "proximity": prox}
    (out / "analysis.json").write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
    return {"lipschitz": lip.lipschitz, "c_prox": lip.c_prox}


def cmd_lipschitz(args, cfg, out):
    from dataclasses import asdict
    predictor = _predictor(args, True)
    lip = lipschitz_estimate(predictor.params, predictor.cfg, cfg["lipschitz.iters"], cfg["seed"])
    (out / "lipschitz.json").write_text(json.dumps(asdict(lip), indent=1, sort_keys=True) + "\n")
    return {"lipschitz": lip.lipschitz, "c_prox": lip.c_prox}


def cmd_iss(args, cfg, out):
    from .experiments import iss_evaluate, write_rows
    from .metrics import CSV_FIELDS
    names = _split_list(cfg["iss.methods"])
    methods = {m: _scheme(m, cfg) for m in names}
    predictor = _predictor(args, "neural" in names)
    track, reports, outputs = iss_evaluate(methods, cfg["iss.levels"], predictor)
    ll = track.latlon_deg()
    write_rows(out / "iss_track.csv",
               [{"index": i, "lat_deg": float(a), "lon_deg": float(b), "x": float(p[0]), "y": float(p[1]),
                 "z": float(p[2])} for i, ((a, b), p) in enumerate(zip(ll, track.ground_truth))],
               ("index", "lat_deg", "lon_deg", "x", "y", "z"))
    write_rows(out / "iss_metrics.csv", [r.row() for r in reports.values()], CSV_FIELDS)
    for name, Q in outputs.items():
        lat = np.degrees(np.arcsin(np.clip(Q[:, 2], -1, 1)))
        lon = np.degrees(np.arctan2(Q[:, 1], Q[:, 0]))
        write_rows(out / f"iss_{name}.csv",
                   [{"index": i, "lat_deg": float(a), "lon_deg": float(b), "x": float(p[0]), "y": float(p[1]),
                     "z": float(p[2])} for i, (a, b, p) in enumerate(zip(lat, lon, Q))],
                   ("index", "lat_deg", "lon_deg", "x", "y", "z"))
    summary = {"n_ground_truth": len(track.ground_truth), "n_closure": track.n_closure,
               "gap_deg": track.gap_deg, "metrics": {k: r.row() for k, r in reports.items()}}
    (out / "iss.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    return {"methods": names}


COMMANDS = {
    "gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval, "oracle": cmd_oracle,
    "robustness": cmd_robustness, "ablate": cmd_ablate, "analyze": cmd_analyze,
    "lipschitz": cmd_lipschitz, "iss": cmd_iss,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="geotension", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--out", required=True, help="output directory")
        s.add_argument("--config", help="flat 'key = value' file")
        s.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
        s.add_argument("--seed", type=int)
        s.add_argument("--jobs", type=int, default=1)
        s.add_argument("--hyp-insert", choices=HYP_RULES)
        s.add_argument("--quiet", action="store_true")
        if name not in ("gen-data", "iss", "lipschitz"):
            s.add_argument("--data", help="dataset directory")
        if name in ("eval", "robustness", "analyze", "lipschitz", "iss"):
            s.add_argument("--checkpoint")
        if name in ("eval", "robustness", "iss"):
            s.add_argument("--methods", help="comma-separated method list")
        if name in ("train", "ablate"):
            s.add_argument("--preset", choices=sorted(PRESETS))
        if name == "train":
            s.add_argument("--resume", action="store_true")
        if name == "gen-data":
            s.add_argument("--force", action="store_true")
    return p


def main(argv=None) -> int:
    from .training import ConfigurationError
    argv = sys.argv[1:] if argv is None else argv
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve_config(args)
        out = _out_dir(args)
        _write_effective(out, args, cfg, argv)
        t0 = time.time()
        result = COMMANDS[args.command](args, cfg, out)
        if not args.quiet:
            print(json.dumps({"command": args.command, "seconds": round(time.time() - t0, 3), **result},
                             default=str))
        return 0
    except UsageError as exc:
        print(f"error: usage: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, ConfigurationError, CheckpointError) as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, DatasetError) as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, RuntimeError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_OTHER


if __name__ == "__main__":
    sys.exit(main())
