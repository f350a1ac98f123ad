"""Command-line entry point: generate, train, eval, gradcheck, ablate, preprocess."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import nswt
from .errors import ConfigurationError, NeuroswapError

log = logging.getLogger("neuroswap")

CONFIG_VERSION = 1


def _read_config(path: str | None, schema: str) -> dict:
    """Load a versioned JSON config: ``{"schema": ..., "version": 1, ...}``."""
    if path is None:
        return {}
    with open(path) as fh:
        d = json.load(fh)
    got = d.pop("schema", schema)
    if got != schema:
        raise ConfigurationError(f"{path}: expected schema {schema!r}, found {got!r}")
    version = d.pop("version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ConfigurationError(f"{path}: unsupported config version {version}")
    return d


def _train_config(path: str | None, overrides: dict | None = None, preset: str | None = None):
    from .harness import TrainConfig
    from .presets import TRAINS

    d = TRAINS[preset]().to_dict() if preset else {}
    d.pop("version", None)
    d.update(_read_config(path, "neuroswap.train"))
    d.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return TrainConfig.from_dict(d)


def cmd_generate(args) -> int:
    from .presets import WORLDS
    from .synthdata import WorldConfig, generate_world

    d = WORLDS[args.preset]().to_dict() if args.preset else {}
    d.update(_read_config(args.config, "neuroswap.world"))
    seed = args.seed if args.seed is not None else d.pop("seed", 0)
    d.pop("seed", None)
    cfg = WorldConfig.from_dict(d)
    ds = generate_world(cfg, seed)
    ds.save(args.out)
    print(json.dumps({"out": str(args.out), "domains": ds.n_domains, "trials": len(ds.all_trials()),
                      "seed": seed}))
    return 0


def _prepared(data_dir: str):
    from .harness import prepare
    from .synthdata import MultiDomainDataset

    return prepare(MultiDomainDataset.load(data_dir))


def cmd_train(args) -> int:
    from .harness import train

    cfg = _train_config(args.config, {"seed": args.seed, "epochs": args.epochs, "method": args.method},
                        args.preset)
    res = train(cfg, _prepared(args.data), out_dir=args.out, resume=args.resume)
    last = res.log[-1] if res.log else {}
    print(json.dumps({"out": str(args.out), "method": cfg.method, "steps": len(res.log), "last": last}))
    return 0


def cmd_eval(args) -> int:
    from .evaluation import FeatureSet, run_benchmarks, supervised_fold_features
    from .harness import load_trained

    model, cfg = load_trained(args.ckpt)
    data = _prepared(args.data)
    tasks = ("single", "across", "identity") if args.task == "all" else (args.task,)
    folds = None
    if cfg.method == "supervised" and "across" in tasks:
        log.info("supervised checkpoint: retraining one model per left-out domain")
        folds = supervised_fold_features(cfg, data)
    reports = run_benchmarks(FeatureSet.from_model(model, data), fraction=args.fraction, tasks=tasks,
                             fold_features=folds)
    for rep in reports.values():
        print(json.dumps(rep.to_dict()))
    if args.out:
        with open(args.out, "w") as fh:
            json.dump({k: r.to_dict() for k, r in reports.items()}, fh, indent=2)
    if args.csv:
        import csv

        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["task", "fraction", "accuracy", "chance"])
            for r in reports.values():
                w.writerow([r.task, r.fraction, f"{r.accuracy:.6f}", f"{r.chance:.6f}"])
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_suite

    results = run_suite(args.op)
    failed = 0
    for name, (err, tol) in results.items():
        ok = err <= tol
        failed += not ok
        print(f"{'PASS' if ok else 'FAIL'} {name:28s} rel_err={err:.3e} tol={tol:.0e}")
    return 1 if failed else 0


def cmd_ablate(args) -> int:
    from .evaluation import run_ablation

    cfg = _train_config(args.config, {"epochs": args.epochs}, args.preset)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    res = run_ablation(_prepared(args.data), seeds=range(args.seeds), base=cfg, csv_path=out / "ablation.csv",
                       progress=lambda row: print(json.dumps(row), flush=True))
    summary = {"means": res.means(), "deltas_points": res.deltas()}
    with open(out / "ablation_summary.json", "w") as fh:
        json.dump(summary, fh, indent=2)
    print(json.dumps(summary))
    return 0


def cmd_preprocess(args) -> int:
    from .preprocess import delta_f_over_f, register_stack

    stack = nswt.load(args.inp)
    if stack.ndim != 3:
        raise ConfigurationError(f"expected a [T, H, W] stack, got shape {stack.shape}")
    registered, flows = register_stack(stack, ref_frame=args.ref_frame, smoothness=args.smoothness)
    out = Path(args.out) if args.out else Path(args.inp).with_suffix(".registered.nswt")
    nswt.save(out, registered)
    nswt.save(out.with_suffix(".flow.nswt"), np.stack([f.w for f in flows]))
    info = {"registered": str(out), "frames": int(stack.shape[0]),
            "mean_abs_flow": float(np.mean([np.abs(f.w).mean() for f in flows]))}
    if args.dff:
        dff_path = out.with_suffix(".dff.nswt")
        nswt.save(dff_path, delta_f_over_f(registered, args.window))
        info["dff"] = str(dff_path)
    print(json.dumps(info))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="neuroswap", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="generate a synthetic multi-domain world")
    g.add_argument("--config", help="world JSON (schema neuroswap.world)")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int)
    g.add_argument("--preset", choices=("standard",), help="start from a named world config")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train one method")
    t.add_argument("--config", help="train JSON (schema neuroswap.train)")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--resume", action="store_true")
    t.add_argument("--method", help="override the config's method")
    t.add_argument("--preset", choices=("ablation",), help="start from a named train config")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="linear-probe benchmarks on frozen features")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--task", choices=("single", "across", "identity", "all"), default="all")
    e.add_argument("--fraction", type=float, choices=(0.5, 1.0), default=1.0)
    e.add_argument("--out", help="write reports as JSON")
    e.add_argument("--csv", help="write reports as CSV")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    c.add_argument("--op", action="append", help="run only this case (repeatable)")
    c.set_defaults(func=cmd_gradcheck)

    a = sub.add_parser("ablate", help="cumulative augmentation ablation")
    a.add_argument("--data", required=True)
    a.add_argument("--seeds", type=int, default=3)
    a.add_argument("--config", help="base train JSON")
    a.add_argument("--epochs", type=int)
    a.add_argument("--out", default="ablation")
    a.add_argument("--preset", choices=("ablation",), help="start from a named train config")
    a.set_defaults(func=cmd_ablate)

    r = sub.add_parser("preprocess", help="register an NSWT image stack, optionally dF/F")
    r.add_argument("--in", dest="inp", required=True)
    r.add_argument("--ref-frame", type=int, default=0)
    r.add_argument("--smoothness", type=float, default=800.0)
    r.add_argument("--out")
    r.add_argument("--dff", action="store_true")
    r.add_argument("--window", type=int, default=15)
    r.set_defaults(func=cmd_preprocess)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (NeuroswapError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
