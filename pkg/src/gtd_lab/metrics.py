"""Accuracy, per-node loss histograms, result aggregation and persistence."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .graph import Dataset, SplitMask
from .nn import ModelParams, forward, softmax_xent

SCHEMA_VERSION = 1
METRICS = ("classify_acc", "attack_auroc", "train_loss", "test_loss")
CSV_COLUMNS = (
    "dataset",
    "model",
    "regime",
    "attack_mode",
    "repetition",
    "seed",
    "classify_acc",
    "attack_auroc",
    "train_loss",
    "test_loss",
)


class ResultFormatError(ValueError):
    pass


def accuracy(params: ModelParams, ds: Dataset, node_ids) -> float:
    """Fraction of ``node_ids`` whose argmax prediction (lowest index on ties) is correct."""
    node_ids = np.asarray(node_ids, dtype=np.int64)
    if node_ids.size == 0:
        raise ValueError("accuracy over an empty node set")
    pred = forward(params, ds.norm_adj(), ds.features)[node_ids].argmax(axis=1)
    return float((pred == ds.labels[node_ids]).mean())


@dataclass
class LossHistogram:
    edges: np.ndarray
    member_counts: np.ndarray
    nonmember_counts: np.ndarray

    def overlap(self) -> float:
        """Overlap coefficient sum(min(p_member, p_nonmember)) of the normalized histograms."""
        pm = self.member_counts / max(self.member_counts.sum(), 1)
        pn = self.nonmember_counts / max(self.nonmember_counts.sum(), 1)
        return float(np.minimum(pm, pn).sum())

    def to_dict(self) -> dict:
        return {
            "edges": self.edges.tolist(),
            "member_counts": self.member_counts.tolist(),
            "nonmember_counts": self.nonmember_counts.tolist(),
        }


def node_losses(params: ModelParams, ds: Dataset) -> np.ndarray:
    """Hard-label cross-entropy of every node."""
    ids = np.arange(ds.num_nodes)
    return softmax_xent(forward(params, ds.norm_adj(), ds.features), ds.labels, ids)[1]


def loss_histogram(params: ModelParams, ds: Dataset, bins: int = 50, split: SplitMask | None = None) -> LossHistogram:
    if bins < 1:
        raise ValueError("bins must be at least 1")
    split = split or ds.split
    losses = node_losses(params, ds)
    top = float(losses.max()) if losses.size else 0.0
    edges = np.linspace(0.0, top if top > 0 else 1.0, bins + 1)
    member, _ = np.histogram(losses[split.train_ids], bins=edges)
    nonmember, _ = np.histogram(losses[split.test_ids], bins=edges)
    return LossHistogram(edges, member, nonmember)


@dataclass
class RepetitionRecord:
    repetition: int
    seed: int
    attack_mode: str
    classify_acc: float | None = None
    attack_auroc: float | None = None
    train_loss: float | None = None
    test_loss: float | None = None
    overlap: float | None = None
    histogram: dict | None = None
    status: str = "ok"
    error: str | None = None


def aggregate(records: list[RepetitionRecord]) -> dict:
    """mode -> metric -> {mean, std, n}; std is the sample (n-1) standard deviation."""
    out: dict = {}
    for mode in sorted({r.attack_mode for r in records}):
        rows = [r for r in records if r.attack_mode == mode and r.status == "ok"]
        out[mode] = {}
        for metric in METRICS:
            vals = [getattr(r, metric) for r in rows]
            n = len(vals)
            mean = math.fsum(vals) / n if n else None
            std = 0.0 if n == 1 else (math.sqrt(math.fsum((v - mean) ** 2 for v in vals) / (n - 1)) if n else None)
            out[mode][metric] = {"mean": mean, "std": std, "n": n}
    return out


@dataclass
class ExperimentResult:
    dataset: str
    model: str
    regime: str
    attack_modes: list[str]
    records: list[RepetitionRecord]
    config: dict
    aggregate: dict = field(default_factory=dict)
    software_version: str = __version__
    created_at: str | None = None

    def __post_init__(self):
        if not self.aggregate:
            self.aggregate = aggregate(self.records)

    def metric(self, name: str, mode: str = "hard") -> list[float]:
        return [getattr(r, name) for r in self.records if r.attack_mode == mode and r.status == "ok"]

    def mean(self, name: str, mode: str = "hard") -> float:
        return self.aggregate[mode][name]["mean"]

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "software_version": self.software_version,
            "created_at": self.created_at,
            "dataset": self.dataset,
            "model": self.model,
            "regime": self.regime,
            "attack_modes": list(self.attack_modes),
            "config": self.config,
            "records": [asdict(r) for r in self.records],
            "aggregate": self.aggregate,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentResult":
        required = (
            "schema_version",
            "software_version",
            "dataset",
            "model",
            "regime",
            "attack_modes",
            "config",
            "records",
            "aggregate",
        )
        for key in required:
            if key not in d:
                raise ResultFormatError(f"results file is missing field {key!r}")
        if d["schema_version"] != SCHEMA_VERSION:
            raise ResultFormatError(f"unsupported schema_version {d['schema_version']!r}")
        try:
            records = [RepetitionRecord(**r) for r in d["records"]]
        except TypeError as exc:
            raise ResultFormatError(f"malformed repetition record: {exc}") from exc
        return cls(
            dataset=d["dataset"],
            model=d["model"],
            regime=d["regime"],
            attack_modes=list(d["attack_modes"]),
            records=records,
            config=d["config"],
            aggregate=d["aggregate"],
            software_version=d["software_version"],
            created_at=d.get("created_at"),
        )


def export_results(result: ExperimentResult, path) -> Path:
    """Write results.json at ``path`` (a directory or a .json file) plus summary.csv beside it."""
    path = Path(path)
    if path.suffix != ".json":
        path.mkdir(parents=True, exist_ok=True)
        path = path / "results.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(result.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    with open(path.with_name("summary.csv"), "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in result.records:
            writer.writerow(
                [
                    result.dataset,
                    result.model,
                    result.regime,
                    r.attack_mode,
                    r.repetition,
                    r.seed,
                    r.classify_acc,
                    r.attack_auroc,
                    r.train_loss,
                    r.test_loss,
                ]
            )
    return path


def import_results(path) -> ExperimentResult:
    path = Path(path)
    if path.is_dir():
        path = path / "results.json"
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ResultFormatError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ResultFormatError(f"{path}: top level must be an object")
    return ExperimentResult.from_dict(data)
