"""Command-line entry point: ``gtd-lab <subcommand>``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .attack import AttackMode, build_attack_dataset, export_scores, make_shadow_split, score_attack, train_attack, train_shadow
from .csbm import CsbmConfig, CsbmRegimeError, write_csbm
from .defense import DmpConfig, LbpConfig, Regime, TrainedModel, dmp_partition, train_regime
from .experiment import (
    ConfigError,
    ExperimentConfig,
    all_failed,
    next_run_dir,
    repetition_dataset,
    repetition_seed,
    run_ablation,
    run_experiment,
    run_sweep,
    stable_seed,
    thread_limit,
)
from .graph import DatasetError, SplitMask, load_dataset
from .linqs import convert_linqs
from .metrics import accuracy
from .nn import load_checkpoint, save_checkpoint

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("gtd_lab")


def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def load_config(args) -> ExperimentConfig:
    data = json.loads(Path(args.config).read_text(encoding="utf-8")) if args.config else {}
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, raw = item.split("=", 1)
        data[key] = _parse_value(raw)
    for flag, key in (
        ("repetitions", "repetitions"),
        ("base_seed", "base_seed"),
        ("out", "out"),
        ("regime", "regime"),
        ("model", "model"),
        ("dataset", "dataset"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            data[key] = value
    return ExperimentConfig.from_dict(data)


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="experiment config JSON")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a top-level config field (JSON value)")
    p.add_argument("--repetitions", type=int)
    p.add_argument("--base-seed", dest="base_seed", type=int)
    p.add_argument("--out")
    p.add_argument("--regime")
    p.add_argument("--model")
    p.add_argument("--dataset")
    p.add_argument("--jobs", type=int, default=1, help="concurrent repetitions (default 1)")


def cmd_gen_csbm(args) -> int:
    cfg = CsbmConfig(
        n=args.n, avg_degree=args.avg_degree, f=args.f, phi=args.phi, epsilon=args.eps, seed=args.seed,
        train_fraction=args.train_fraction,
    )
    root = write_csbm(cfg, args.out)
    print(root)
    return EXIT_OK


def cmd_import_linqs(args) -> int:
    root = convert_linqs(args.content, args.cites, args.out, args.train_fraction, args.seed)
    print(root)
    return EXIT_OK


def _target_for(cfg: ExperimentConfig, rep: int):
    cfg.validate()
    seed = repetition_seed(cfg, rep)
    base = load_dataset(cfg.dataset) if cfg.dataset else None
    ds = repetition_dataset(cfg, seed, base)
    dmp = DmpConfig(**{"seed": stable_seed(seed, "dmp"), **(cfg.dmp or {})})
    return seed, ds, dmp


def cmd_train(args) -> int:
    cfg = load_config(args)
    seed, ds, dmp = _target_for(cfg, args.rep)
    target = train_regime(
        cfg.regime, cfg.model, ds, cfg.train_hyper(seed), ascent_period=cfg.ascent_period, dmp=dmp, hidden=cfg.hidden, k=cfg.k
    )
    run_dir = next_run_dir(Path(cfg.out), "train")
    save_checkpoint(run_dir / "target.ckpt", target.params, seed, target.steps)
    np.savetxt(run_dir / "curve.tsv", target.curve, delimiter="\t", header="train_loss\ttest_loss", comments="", fmt="%.9g")
    summary = {
        "regime": target.regime.value,
        "seed": seed,
        "repetition": args.rep,
        "classify_acc": accuracy(target.params, ds.with_split(target.split), target.split.test_ids),
        "final_train_loss": float(target.curve[-1, 0]),
        "final_test_loss": float(target.curve[-1, 1]),
    }
    (run_dir / "train.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    print(json.dumps(summary))
    return EXIT_OK


def cmd_attack(args) -> int:
    cfg = load_config(args)
    seed, ds, dmp = _target_for(cfg, args.rep)
    params, _ = load_checkpoint(args.checkpoint)
    regime = Regime(cfg.regime)
    split = ds.split
    if regime is Regime.DMP:
        private, reference, test = dmp_partition(ds, dmp)
        split = SplitMask(np.concatenate([private, reference]), test)
    target = TrainedModel(params, regime, np.zeros((0, 2)), split)
    hyper = cfg.train_hyper(seed)
    lbp = LbpConfig(**{"seed": stable_seed(seed, "lbp"), **cfg.lbp}) if cfg.lbp else None
    out = {}
    for mode in cfg.attack_modes:
        mode = AttackMode(mode).value
        shadow = make_shadow_split(split, mode, stable_seed(seed, "shadow", mode))
        shadow_model = train_shadow(
            cfg.model, ds, shadow, hyper, cfg.shadow_regime_for(), ascent_period=cfg.ascent_period, dmp=dmp,
            hidden=cfg.hidden, k=cfg.k,
        )
        attack_model = train_attack(
            build_attack_dataset(shadow_model, ds, shadow, cfg.sort_posteriors),
            cfg.attack_train_hyper(stable_seed(seed, "attack", mode)),
            tuple(cfg.attack_hidden),
        )
        auc, scores = score_attack(attack_model, target, ds.with_split(split), lbp)
        if args.scores:
            export_scores(Path(args.scores).with_suffix(f".{mode}.tsv"), scores, split.membership())
        out[mode] = auc
    print(json.dumps({"attack_auroc": out}))
    return EXIT_OK


def _print_result(result) -> None:
    for mode, agg in result.aggregate.items():
        acc, auc = agg["classify_acc"], agg["attack_auroc"]
        if acc["mean"] is None:
            print(f"{result.regime:>18s} {mode:>4s}  all repetitions failed")
            continue
        print(
            f"{result.regime:>18s} {mode:>4s}  acc {acc['mean']:.4f} ± {acc['std']:.4f}"
            f"  auroc {auc['mean']:.4f} ± {auc['std']:.4f}  (n={acc['n']})"
        )


def cmd_experiment(args) -> int:
    cfg = load_config(args)
    result = run_experiment(cfg, jobs=args.jobs)
    _print_result(result)
    return EXIT_RUNTIME if all_failed(result) else EXIT_OK


def cmd_ablation(args) -> int:
    cfg = load_config(args)
    results = run_ablation(cfg, jobs=args.jobs)
    for res in results.values():
        _print_result(res)
    return EXIT_RUNTIME if all(all_failed(r) for r in results.values()) else EXIT_OK


def cmd_sweep(args) -> int:
    cfg = load_config(args)
    cells = run_sweep(cfg, args.phi, args.ratio, jobs=args.jobs)
    print("phi\tratio\thard\tweak\thard-weak")
    for c in cells:
        print(f"{c.phi:+.2f}\t{c.ratio}\t{c.hard_mean:.4f}\t{c.weak_mean:.4f}\t{c.diff:+.4f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gtd-lab", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-csbm", help="generate a cSBM dataset directory")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--avg-degree", type=float, default=20.0)
    p.add_argument("--f", type=int, default=100)
    p.add_argument("--phi", type=float, default=0.0)
    p.add_argument("--eps", type=float, default=15.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train-fraction", type=float, default=0.5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_csbm)

    p = sub.add_parser("import-linqs", help="convert .content/.cites files (e.g. Cora) to a dataset directory")
    p.add_argument("--content", required=True)
    p.add_argument("--cites", required=True)
    p.add_argument("--train-fraction", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_import_linqs)

    p = sub.add_parser("train", help="train one target model and save a checkpoint")
    _add_config_args(p)
    p.add_argument("--rep", type=int, default=0, help="repetition index used for seed derivation")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("attack", help="attack a saved target checkpoint")
    _add_config_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--rep", type=int, default=0)
    p.add_argument("--scores", help="write per-node scores TSV (suffixed with the attack mode)")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("experiment", help="full pipeline over all repetitions")
    _add_config_args(p)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("ablation", help="run the five ablation regimes from one config")
    _add_config_args(p)
    p.set_defaults(func=cmd_ablation)

    p = sub.add_parser("sweep", help="phi x split-ratio sweep on a cSBM source")
    _add_config_args(p)
    p.add_argument("--phi", type=float, nargs="+", required=True)
    p.add_argument("--ratio", nargs="+", default=["1:1"])
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        with threadpool_limits(limits=thread_limit()):
            return args.func(args)
    except (ConfigError, CsbmRegimeError, DatasetError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        log.debug("runtime failure", exc_info=True)
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
