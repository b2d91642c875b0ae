"""Operation-level examples on the real Cora graph (GCN, 1:1 split, 3 seeds)."""

import numpy as np
import pytest

from gtd_lab.attack import make_shadow_split, train_shadow
from gtd_lab.defense import train_normal
from gtd_lab.graph import split_nodes
from gtd_lab.nn import Kind, TrainHyper

pytestmark = pytest.mark.slow


def test_cora_dataset_shape(cora):
    assert (cora.num_nodes, cora.num_features, cora.num_classes) == (2708, 1433, 7)
    assert cora.graph.num_edges == 5278
    assert cora.split.train_ids.size == 1354


def test_normal_accuracy_band(cora_experiment):
    acc = cora_experiment("Normal").metric("classify_acc")
    assert all(0.84 <= a <= 0.90 for a in acc), acc


def test_flatten_accuracy_matches_normal(cora_experiment):
    n_acc = cora_experiment("Normal").metric("classify_acc")
    f_acc = cora_experiment("Flatten").metric("classify_acc")
    assert all(abs(a - b) <= 0.01 for a, b in zip(n_acc, f_acc)), (n_acc, f_acc)


@pytest.mark.xfail(
    strict=True,
    reason="one-stage flattening leaves the hard-attack AUROC within noise of normal training "
    "(means 0.572 vs 0.574); it is not below normal on every seed",
)
def test_flatten_auroc_below_normal_every_seed(cora_experiment):
    n_auc = cora_experiment("Normal").metric("attack_auroc")
    f_auc = cora_experiment("Flatten").metric("attack_auroc")
    assert all(f < n for n, f in zip(n_auc, f_auc)), (n_auc, f_auc)


def test_flatten_ga_close_to_flatten(cora_experiment):
    flat, ga = cora_experiment("Flatten"), cora_experiment("FlattenGA")
    assert abs(flat.mean("classify_acc") - ga.mean("classify_acc")) <= 0.02
    assert abs(flat.mean("attack_auroc") - ga.mean("attack_auroc")) <= 0.02


def test_gtd_accuracy_and_auroc(cora_experiment):
    gtd = cora_experiment("GTD")
    assert all(a >= 0.86 for a in gtd.metric("classify_acc"))
    assert all(a <= 0.50 for a in gtd.metric("attack_auroc"))


def test_gtd_lowers_mean_auroc(cora_experiment):
    drop = cora_experiment("Normal").mean("attack_auroc") - cora_experiment("GTD").mean("attack_auroc")
    assert drop >= 0.05


def test_two_stage_ablation_ordering(cora_experiment):
    """The second stage carries most of the defense; flattening alone barely moves the AUROC."""
    auc = {r: cora_experiment(r).mean("attack_auroc") for r in ("Normal", "Flatten", "TwoStageNoFlatten", "GTD")}
    assert auc["GTD"] < auc["TwoStageNoFlatten"] < auc["Flatten"]
    assert auc["GTD"] < auc["Normal"] - 0.05


@pytest.mark.parametrize("seed", range(3))
def test_weak_shadow_loss_comparable(cora, seed):
    ds = cora.with_split(split_nodes(cora.num_nodes, 0.5, seed))
    hyper = TrainHyper(seed=seed)
    target = train_normal(Kind.GCN, ds, hyper)
    shadow = make_shadow_split(ds.split, "weak", seed)
    replica = train_shadow(Kind.GCN, ds, shadow, hyper, "normal")
    assert abs(target.curve[-1, 0] - replica.curve[-1, 0]) <= 0.2
    assert np.intersect1d(shadow.mask.train_ids, ds.split.train_ids).size == 0
