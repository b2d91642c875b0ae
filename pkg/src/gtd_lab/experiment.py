"""Batch experiment runner: config parsing, seed derivation, the end-to-end pipeline,
the ablation matrix and the phi sweep."""

from __future__ import annotations

import csv
import dataclasses
import datetime as dt
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .attack import (
    AttackMode,
    build_attack_dataset,
    export_scores,
    make_shadow_split,
    score_attack,
    train_attack,
    train_shadow,
)
from .csbm import CsbmConfig, gen_csbm
from .defense import DmpConfig, LbpConfig, Regime, train_regime
from .graph import Dataset, load_dataset, split_nodes
from .metrics import ExperimentResult, RepetitionRecord, accuracy, export_results, loss_histogram, node_losses
from .nn import Kind, TrainHyper, save_checkpoint

log = logging.getLogger(__name__)

ABLATION_REGIMES = (
    Regime.NORMAL,
    Regime.FLATTEN,
    Regime.FLATTEN_GA,
    Regime.TWO_STAGE,
    Regime.GTD,
)

FLATTENING_REGIMES = (Regime.FLATTEN, Regime.FLATTEN_GA, Regime.GTD)

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


class ConfigError(ValueError):
    pass


def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def stable_seed(*parts) -> int:
    """64-bit FNV-1a over the compact JSON encoding of ``parts``."""
    blob = json.dumps(list(parts), separators=(",", ":"), sort_keys=True).encode("utf-8")
    return fnv1a64(blob)


def parse_ratio(value) -> float:
    """'1:1' / '9:1' / 0.5 -> train fraction."""
    if isinstance(value, str) and ":" in value:
        a, b = (float(x) for x in value.split(":"))
        if a <= 0 or b <= 0:
            raise ConfigError(f"bad split ratio {value!r}")
        return a / (a + b)
    frac = float(value)
    if not 0.0 < frac < 1.0:
        raise ConfigError(f"train fraction {value!r} must lie in (0, 1)")
    return frac


def ratio_label(frac: float) -> str:
    for a, b in ((9, 1), (3, 1), (1, 1), (1, 3), (1, 9)):
        if abs(a / (a + b) - frac) < 1e-12:
            return f"{a}:{b}"
    return f"{frac:g}"


@dataclass
class ExperimentConfig:
    """Everything one experiment needs. Built from a JSON file via ``from_dict``."""

    dataset: str | None = None
    csbm: dict | None = None
    model: str = "GCN"
    hidden: int = 16
    k: int = 2
    regime: str = "GTD"
    hyper: dict = field(default_factory=dict)
    attack_hyper: dict = field(default_factory=lambda: {"epochs": 200})
    attack_hidden: list = field(default_factory=lambda: [64, 32])
    shadow_regime: str = "normal"
    ascent_period: int = 3
    lbp: dict | None = None
    dmp: dict | None = None
    attack_modes: list = field(default_factory=lambda: ["hard"])
    split_ratio: str | float = "1:1"
    resplit: bool = True
    sort_posteriors: bool = False
    histogram_bins: int = 50
    repetitions: int = 3
    base_seed: int = 0
    out: str = "runs"
    name: str | None = None

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**data)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "ExperimentConfig":
        cfg = dataclasses.replace(self, **changes)
        cfg.validate()
        return cfg

    @property
    def train_fraction(self) -> float:
        return parse_ratio(self.split_ratio)

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        if self.dataset:
            return Path(self.dataset).name
        return "csbm"

    def validate(self) -> None:
        if (self.dataset is None) == (self.csbm is None):
            raise ConfigError("exactly one of 'dataset' and 'csbm' must be given")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        if self.histogram_bins < 1:
            raise ConfigError("histogram_bins must be >= 1")
        try:
            Kind(self.model)
            Regime(self.regime)
            for mode in self.attack_modes:
                AttackMode(mode)
            self.train_hyper(0)
            self.attack_train_hyper(0)
            if self.csbm is not None:
                CsbmConfig(**{**self.csbm, "train_fraction": self.train_fraction})
            num_classes = self._num_classes()
            if num_classes is not None and Regime(self.regime) in FLATTENING_REGIMES:
                self.train_hyper(0).check_classes(num_classes)
            if self.lbp is not None:
                LbpConfig(**self.lbp)
            if self.dmp is not None:
                DmpConfig(**self.dmp)
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from exc
        if not self.attack_modes:
            raise ConfigError("attack_modes must not be empty")
        if self.shadow_regime not in ("normal", "mirror"):
            raise ConfigError("shadow_regime must be 'normal' or 'mirror'")
        if self.ascent_period < 2:
            raise ConfigError("ascent_period must be >= 2")
        parse_ratio(self.split_ratio)

    def _num_classes(self) -> int | None:
        """Class count when it is known before loading any data."""
        if self.csbm is not None:
            return 2
        meta = Path(self.dataset) / "meta.json"
        if meta.is_file():
            try:
                return int(json.loads(meta.read_text(encoding="utf-8"))["num_classes"])
            except (ValueError, KeyError, TypeError):
                return None
        return None

    def train_hyper(self, seed: int) -> TrainHyper:
        return TrainHyper(**{**self.hyper, "seed": seed})

    def attack_train_hyper(self, seed: int) -> TrainHyper:
        return TrainHyper(**{**self.attack_hyper, "seed": seed})

    def shadow_regime_for(self) -> Regime:
        return Regime(self.regime) if self.shadow_regime == "mirror" else Regime.NORMAL


def repetition_seed(cfg: ExperimentConfig, rep: int) -> int:
    return stable_seed(cfg.base_seed, rep)


def repetition_dataset(cfg: ExperimentConfig, rep_seed: int, base: Dataset | None) -> Dataset:
    if cfg.csbm is not None:
        ccfg = CsbmConfig(**{**cfg.csbm, "seed": stable_seed(rep_seed, "csbm"), "train_fraction": cfg.train_fraction})
        return gen_csbm(ccfg)
    if not cfg.resplit:
        return base
    return base.with_split(split_nodes(base.num_nodes, cfg.train_fraction, stable_seed(rep_seed, "split")))


def run_repetition(cfg: ExperimentConfig, rep: int, base: Dataset | None, artifacts: Path | None) -> list[RepetitionRecord]:
    """Train the target, attack it once per attack mode, and return one record per mode."""
    seed = repetition_seed(cfg, rep)
    modes = [AttackMode(m).value for m in cfg.attack_modes]
    try:
        ds = repetition_dataset(cfg, seed, base)
        hyper = cfg.train_hyper(seed)
        arch = {"hidden": cfg.hidden, "k": cfg.k}
        regime = Regime(cfg.regime)
        dmp = DmpConfig(**{"seed": stable_seed(seed, "dmp"), **(cfg.dmp or {})})
        target = train_regime(regime, cfg.model, ds, hyper, ascent_period=cfg.ascent_period, dmp=dmp, **arch)
        view = ds.with_split(target.split)

        acc = accuracy(target.params, view, target.split.test_ids)
        losses = node_losses(target.params, view)
        train_loss = float(losses[target.split.train_ids].mean())
        test_loss = float(losses[target.split.test_ids].mean())
        hist = loss_histogram(target.params, view, cfg.histogram_bins)

        if artifacts is not None:
            save_checkpoint(artifacts / f"target_rep{rep}.ckpt", target.params, seed, target.steps)
            np.savetxt(
                artifacts / f"curve_rep{rep}.tsv",
                target.curve,
                delimiter="\t",
                header="train_loss\ttest_loss",
                comments="",
                fmt="%.9g",
            )

        lbp = None
        if cfg.lbp is not None:
            lbp = LbpConfig(**{"seed": stable_seed(seed, "lbp"), **cfg.lbp})

        records = []
        for mode in modes:
            shadow = make_shadow_split(target.split, mode, stable_seed(seed, "shadow", mode))
            shadow_model = train_shadow(
                cfg.model, ds, shadow, hyper, cfg.shadow_regime_for(), ascent_period=cfg.ascent_period, dmp=dmp, **arch
            )
            attack_ds = build_attack_dataset(shadow_model, ds, shadow, cfg.sort_posteriors)
            attack_model = train_attack(
                attack_ds, cfg.attack_train_hyper(stable_seed(seed, "attack", mode)), tuple(cfg.attack_hidden)
            )
            auc, scores = score_attack(attack_model, target, view, lbp)
            if artifacts is not None:
                export_scores(artifacts / f"scores_rep{rep}_{mode}.tsv", scores, target.split.membership())
            records.append(
                RepetitionRecord(
                    repetition=rep,
                    seed=seed,
                    attack_mode=mode,
                    classify_acc=acc,
                    attack_auroc=auc,
                    train_loss=train_loss,
                    test_loss=test_loss,
                    overlap=hist.overlap(),
                    histogram=hist.to_dict(),
                )
            )
        return records
    except Exception as exc:  # a failed repetition is recorded, not fatal
        log.exception("repetition %d failed", rep)
        return [
            RepetitionRecord(repetition=rep, seed=seed, attack_mode=m, status="failed", error=f"{type(exc).__name__}: {exc}")
            for m in modes
        ]


def _rep_task(args):
    cfg_dict, rep, artifacts = args
    cfg = ExperimentConfig.from_dict(cfg_dict)
    with threadpool_limits(limits=thread_limit()):
        base = load_dataset(cfg.dataset) if cfg.dataset else None
        return run_repetition(cfg, rep, base, Path(artifacts) if artifacts else None)


def next_run_dir(out: Path, prefix: str = "run") -> Path:
    """First unused out/<prefix>-NNN; never reuses an existing directory."""
    out.mkdir(parents=True, exist_ok=True)
    i = 1
    while True:
        candidate = out / f"{prefix}-{i:03d}"
        try:
            candidate.mkdir()
            return candidate
        except FileExistsError:
            i += 1


def run_experiment(cfg: ExperimentConfig, jobs: int = 1, run_dir: Path | None = None, persist: bool = True) -> ExperimentResult:
    cfg.validate()
    if persist and run_dir is None:
        run_dir = next_run_dir(Path(cfg.out))
    artifacts = None
    if persist:
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        artifacts = run_dir / "artifacts"
        artifacts.mkdir(exist_ok=True)

    reps = range(cfg.repetitions)
    if jobs > 1:
        tasks = [(cfg.to_dict(), r, str(artifacts) if artifacts else None) for r in reps]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            per_rep = list(pool.map(_rep_task, tasks))
    else:
        base = load_dataset(cfg.dataset) if cfg.dataset else None
        per_rep = [run_repetition(cfg, r, base, artifacts) for r in reps]

    records = [rec for recs in per_rep for rec in recs]
    result = ExperimentResult(
        dataset=cfg.label,
        model=Kind(cfg.model).value,
        regime=Regime(cfg.regime).value,
        attack_modes=[AttackMode(m).value for m in cfg.attack_modes],
        records=records,
        config=cfg.to_dict(),
        created_at=dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds"),
    )
    if persist:
        export_results(result, run_dir)
        log.info("wrote %s", run_dir)
    return result


def all_failed(result: ExperimentResult) -> bool:
    return all(r.status != "ok" for r in result.records)


def run_ablation(cfg: ExperimentConfig, jobs: int = 1) -> dict[str, ExperimentResult]:
    """Run the five ablation regimes from one base config into a shared numbered directory."""
    root = next_run_dir(Path(cfg.out), "ablation")
    results = {}
    for regime in ABLATION_REGIMES:
        sub = cfg.replace(regime=regime.value)
        results[regime.value] = run_experiment(sub, jobs=jobs, run_dir=root / regime.value)
    with open(root / "ablation.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["regime", "attack_mode", "acc_mean", "acc_std", "auroc_mean", "auroc_std"])
        for name, res in results.items():
            for mode, agg in res.aggregate.items():
                writer.writerow(
                    [
                        name,
                        mode,
                        agg["classify_acc"]["mean"],
                        agg["classify_acc"]["std"],
                        agg["attack_auroc"]["mean"],
                        agg["attack_auroc"]["std"],
                    ]
                )
    return results


@dataclass
class SweepCell:
    phi: float
    ratio: str
    hard: list[float]
    weak: list[float]

    @property
    def hard_mean(self) -> float:
        return float(np.mean(self.hard))

    @property
    def weak_mean(self) -> float:
        return float(np.mean(self.weak))

    @property
    def diff(self) -> float:
        """hard - weak mean AUROC."""
        return self.hard_mean - self.weak_mean

    @property
    def abs_diff(self) -> float:
        """Mean over repetitions of |hard - weak|."""
        return float(np.mean(np.abs(np.subtract(self.hard, self.weak))))


def run_sweep(cfg: ExperimentConfig, phis, ratios, jobs: int = 1, persist: bool = True) -> list[SweepCell]:
    """Cross product of phi values and split ratios on a cSBM source, hard and weak attacks each."""
    if cfg.csbm is None:
        raise ConfigError("sweep needs a cSBM dataset source")
    phis = list(phis)
    ratios = list(ratios)
    if not phis or not ratios:
        raise ConfigError("sweep needs at least one phi and one split ratio")
    root = next_run_dir(Path(cfg.out), "sweep") if persist else None
    cells = []
    for phi in phis:
        for ratio in ratios:
            frac = parse_ratio(ratio)
            sub = cfg.replace(csbm={**cfg.csbm, "phi": float(phi)}, split_ratio=frac, attack_modes=["hard", "weak"])
            run_dir = root / f"phi{float(phi):+.2f}_ratio{ratio_label(frac).replace(':', '-')}" if persist else None
            res = run_experiment(sub, jobs=jobs, run_dir=run_dir, persist=persist)
            cells.append(SweepCell(float(phi), ratio_label(frac), res.metric("attack_auroc", "hard"), res.metric("attack_auroc", "weak")))
    if persist:
        with open(root / "sweep.csv", "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["phi", "ratio", "hard_auroc", "weak_auroc", "hard_minus_weak", "mean_abs_diff"])
            for c in cells:
                writer.writerow([c.phi, c.ratio, c.hard_mean, c.weak_mean, c.diff, c.abs_diff])
    return cells


def thread_limit() -> int:
    return int(os.environ.get("GTD_LAB_THREADS", "1"))
