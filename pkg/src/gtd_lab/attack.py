"""Shadow-model membership inference: shadow splits, attack data, attack model, scoring."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .defense import (
    DmpConfig,
    LbpConfig,
    Regime,
    TrainedModel,
    lbp_perturb,
    posteriors,
    train_regime,
)
from .graph import Dataset, SplitMask
from .nn import (
    AdamState,
    Kind,
    ModelParams,
    TrainHyper,
    adam_step,
    backward,
    forward_tape,
    init_params,
    softmax,
    softmax_xent,
)

__all__ = [
    "AttackMode",
    "ShadowSplit",
    "AttackDataset",
    "AttackModel",
    "make_shadow_split",
    "train_shadow",
    "build_attack_dataset",
    "train_attack",
    "attack_scores",
    "score_attack",
    "auroc",
    "export_scores",
]


class AttackMode(str, enum.Enum):
    HARD = "hard"
    WEAK = "weak"


@dataclass(frozen=True)
class ShadowSplit:
    mask: SplitMask
    mode: AttackMode


@dataclass(frozen=True)
class AttackDataset:
    posteriors: np.ndarray  # (n, C), one row per shadow-graph node
    membership: np.ndarray  # (n,) int8, 1 for shadow-train nodes
    source: str = "shadow"
    sorted_rows: bool = False

    def rows(self):
        return zip(self.posteriors, self.membership)


@dataclass
class AttackModel:
    params: ModelParams
    curve: np.ndarray
    sort_posteriors: bool = False

    @property
    def input_dim(self) -> int:
        return self.params.dims[0]


def make_shadow_split(target: SplitMask, mode, seed: int) -> ShadowSplit:
    """Hard copies the target split; weak picks a same-size train set overlapping it minimally."""
    mode = AttackMode(mode)
    if mode is AttackMode.HARD:
        return ShadowSplit(SplitMask(target.train_ids.copy(), target.test_ids.copy()), mode)
    rng = np.random.default_rng([seed, 0x5AD0])
    n_train = target.train_ids.size
    test = target.test_ids
    if test.size >= n_train:
        chosen = rng.choice(test, size=n_train, replace=False)
    else:
        top_up = rng.choice(target.train_ids, size=n_train - test.size, replace=False)
        chosen = np.concatenate([test, top_up])
    everything = np.arange(target.num_nodes)
    rest = np.setdiff1d(everything, chosen)
    return ShadowSplit(SplitMask(chosen, rest), mode)


def train_shadow(
    kind,
    ds: Dataset,
    shadow: ShadowSplit,
    hyper: TrainHyper,
    regime,
    *,
    target_regime=None,
    ascent_period: int = 3,
    dmp: DmpConfig | None = None,
    hidden: int = 16,
    k: int = 2,
) -> TrainedModel:
    """Train the attacker's replica on the shadow split.

    ``target_regime``, when given, asserts that the shadow mirrors the target.
    """
    regime = Regime(regime)
    if target_regime is not None and Regime(target_regime) is not regime:
        raise ValueError(f"shadow regime {regime.value} must mirror target regime {Regime(target_regime).value}")
    view = ds.with_split(shadow.mask)
    # hard-mode DMP re-derives the target's own partition; weak mode partitions the shadow members
    members = shadow.mask if (regime is Regime.DMP and shadow.mode is AttackMode.WEAK) else None
    return train_regime(
        regime, kind, view, hyper, ascent_period=ascent_period, dmp=dmp, dmp_members=members, hidden=hidden, k=k
    )


def _prepare(posts: np.ndarray, sort_posteriors: bool) -> np.ndarray:
    if sort_posteriors:
        posts = -np.sort(-posts, axis=1)
    return np.asarray(posts, dtype=np.float32)


def build_attack_dataset(
    shadow_model: TrainedModel, ds: Dataset, shadow: ShadowSplit, sort_posteriors: bool = False
) -> AttackDataset:
    posts = posteriors(shadow_model.params, ds)
    if sort_posteriors:
        posts = -np.sort(-posts, axis=1)
    bits = shadow.mask.membership().astype(np.int8)
    source = f"shadow-{shadow.mode.value}-{shadow_model.regime.value}"
    return AttackDataset(posts, bits, source=source, sorted_rows=sort_posteriors)


def membership_weights(bits) -> np.ndarray:
    """Per-row inverse-frequency weights; both classes carry equal total weight."""
    bits = np.asarray(bits, dtype=np.int64)
    counts = np.bincount(bits, minlength=2)
    if counts.size > 2 or counts.min() == 0:
        raise ValueError("attack dataset must contain both membership classes (and only those)")
    return (bits.size / (2.0 * counts))[bits]


def train_attack(attack_ds: AttackDataset, hyper: TrainHyper, hidden=(64, 32)) -> AttackModel:
    """3-layer MLP on posterior vectors, inverse-frequency weighted cross-entropy."""
    bits = attack_ds.membership.astype(np.int64)
    weights = membership_weights(bits)

    x = np.asarray(attack_ds.posteriors, dtype=np.float32)
    params = init_params(Kind.MLP, [x.shape[1], *hidden, 2], hyper.seed)
    state = AdamState.zeros_like(params)
    ids = np.arange(x.shape[0])
    curve = []
    for _ in range(hyper.epochs):
        logits, tape = forward_tape(params, None, x)
        loss, _, grad = softmax_xent(logits, bits, ids, weights=weights)
        curve.append(loss)
        params, state = adam_step(params, backward(params, None, tape, grad), state, hyper)
    return AttackModel(params, np.asarray(curve), attack_ds.sorted_rows)


def attack_scores(attack_model: AttackModel, posts: np.ndarray) -> np.ndarray:
    """Probability of the member class for each posterior row."""
    if posts.shape[1] != attack_model.input_dim:
        raise ValueError(f"posterior width {posts.shape[1]} != attack input dim {attack_model.input_dim}")
    logits, _ = forward_tape(attack_model.params, None, _prepare(posts, attack_model.sort_posteriors))
    return softmax(logits.astype(np.float64))[:, 1]


def score_attack(
    attack_model: AttackModel,
    target: TrainedModel,
    ds: Dataset,
    lbp: LbpConfig | None = None,
    sort_posteriors: bool | None = None,
    rng: np.random.Generator | None = None,
):
    """Query the attack with the target's (optionally LBP-perturbed) posteriors on every node.

    Returns (AUROC against the target's membership split, per-node scores).
    """
    if sort_posteriors is not None and sort_posteriors != attack_model.sort_posteriors:
        raise ValueError("sort_posteriors must match the setting used to train the attack model")
    if attack_model.input_dim != ds.num_classes:
        raise ValueError(f"attack input dim {attack_model.input_dim} != {ds.num_classes} classes")
    posts = posteriors(target.params, ds)
    if lbp is not None:
        posts = lbp_perturb(posts, lbp, rng)
    scores = attack_scores(attack_model, posts)
    member = target.split.membership()
    return auroc(scores[member], scores[~member]), scores


def auroc(member_scores, nonmember_scores) -> float:
    """Mann-Whitney AUROC with half credit for ties (average ranks)."""
    m = np.asarray(member_scores, dtype=np.float64).ravel()
    nm = np.asarray(nonmember_scores, dtype=np.float64).ravel()
    if m.size == 0 or nm.size == 0:
        raise ValueError("auroc needs non-empty member and non-member score vectors")
    ranks = rankdata(np.concatenate([m, nm]), method="average")
    u = ranks[: m.size].sum() - m.size * (m.size + 1) / 2.0
    return float(u / (m.size * nm.size))


def export_scores(path, scores: np.ndarray, membership: np.ndarray) -> Path:
    """TSV of node_id, score, membership for external ROC tooling."""
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("node_id\tscore\tmembership\n")
        for i, (s, b) in enumerate(zip(scores, membership)):
            fh.write(f"{i}\t{float(s):.9g}\t{int(b)}\n")
    return path
