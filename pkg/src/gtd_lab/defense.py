"""Training regimes: normal, flattening, flattening with gradient ascent, two-stage
(with and without flattening), plus the LBP and DMP baselines."""

from __future__ import annotations

import enum
import hashlib
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .graph import Dataset, SplitMask
from .nn import (
    AdamState,
    Kind,
    ModelParams,
    TrainHyper,
    adam_step,
    backward,
    default_dims,
    forward,
    forward_tape,
    init_params,
    kl_loss,
    softmax,
    softmax_xent,
)

__all__ = [
    "Regime",
    "TrainedModel",
    "LbpConfig",
    "DmpConfig",
    "make_soft_labels",
    "train_normal",
    "train_flatten",
    "train_flatten_ga",
    "train_gtd",
    "train_dmp",
    "train_regime",
    "dmp_partition",
    "lbp_perturb",
    "posteriors",
]


class Regime(str, enum.Enum):
    NORMAL = "Normal"
    FLATTEN = "Flatten"
    FLATTEN_GA = "FlattenGA"
    TWO_STAGE = "TwoStageNoFlatten"
    GTD = "GTD"
    DMP = "DMP"

    @classmethod
    def _missing_(cls, value):
        if isinstance(value, str):
            for member in cls:
                if member.value.lower() == value.lower():
                    return member
        return None


@dataclass
class TrainedModel:
    params: ModelParams
    regime: Regime
    curve: np.ndarray  # (epochs, 2): mean train loss, mean test loss before each step
    split: SplitMask  # label-membership split this model was trained against
    stage_boundary: int | None = None
    branches: list[str] = field(default_factory=list)
    supervision_hashes: list[str] = field(default_factory=list)

    @property
    def steps(self) -> int:
        return len(self.branches)


@dataclass(frozen=True)
class LbpConfig:
    num_bins: int = 2
    noise_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.num_bins < 1:
            raise ValueError("num_bins must be at least 1")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be non-negative")


@dataclass(frozen=True)
class DmpConfig:
    private_fraction: float = 0.45
    reference_fraction: float = 0.45
    test_fraction: float = 0.1
    kl_weight: float = 0.5
    seed: int = 0

    def __post_init__(self):
        fr = (self.private_fraction, self.reference_fraction, self.test_fraction)
        if min(fr) <= 0 or abs(sum(fr) - 1.0) > 1e-9:
            raise ValueError("DMP fractions must be positive and sum to 1")
        if not 0.0 <= self.kl_weight <= 1.0:
            raise ValueError("kl_weight must lie in [0, 1]")


def make_soft_labels(hard_labels, num_classes: int, beta: float) -> np.ndarray:
    """beta on the true class, (1 - beta) / (C - 1) on every other class."""
    if num_classes < 2:
        raise ValueError("soft labels need at least two classes")
    if not 1.0 / num_classes < beta <= 1.0:
        raise ValueError(f"beta must lie in (1/C, 1], got {beta}")
    labels = np.asarray(hard_labels, dtype=np.int64)
    rows = np.full((labels.shape[0], num_classes), (1.0 - beta) / (num_classes - 1))
    rows[np.arange(labels.shape[0]), labels] = beta
    return rows


def posteriors(params: ModelParams, ds: Dataset) -> np.ndarray:
    return softmax(forward(params, ds.norm_adj(), ds.features).astype(np.float64))


def _init(kind, ds: Dataset, hyper: TrainHyper, hidden: int, k: int) -> ModelParams:
    dims = default_dims(kind, ds.num_features, ds.num_classes, hidden)
    return init_params(kind, dims, hyper.seed, k=k)


def _digest(arr: np.ndarray) -> str:
    return hashlib.sha1(np.ascontiguousarray(arr).tobytes()).hexdigest()


def _run_stage(
    params: ModelParams,
    ds: Dataset,
    sup_ids: np.ndarray,
    sup_labels: np.ndarray,
    hyper: TrainHyper,
    mode: str,
    rng: np.random.Generator,
    ascent_period: int = 3,
    track_supervision: bool = False,
):
    """Run ``hyper.epochs`` full-batch Adam steps on (sup_ids, sup_labels).

    mode is "normal" (always hard labels), "flatten" (soft labels once the hard
    loss is below the threshold) or "ga" (like flatten, but every
    ascent_period-th sub-threshold epoch ascends the hard loss instead).
    """
    adj = ds.norm_adj()
    state = AdamState.zeros_like(params)
    soft = None
    if mode != "normal":
        soft = make_soft_labels(sup_labels, ds.num_classes, hyper.flatten_param)
    train_ids, test_ids = ds.split.train_ids, ds.split.test_ids
    curve, branches, hashes = [], [], []
    below = 0
    for _ in range(hyper.epochs):
        logits, tape = forward_tape(params, adj, ds.features, hyper.dropout, rng)
        hard_loss, _, hard_grad = softmax_xent(logits, sup_labels, sup_ids)
        curve.append(
            (
                softmax_xent(logits, ds.labels[train_ids], train_ids)[0],
                softmax_xent(logits, ds.labels[test_ids], test_ids)[0],
            )
        )
        if track_supervision:
            hashes.append(_digest(sup_labels))

        if mode == "normal" or hard_loss >= hyper.loss_threshold:
            grad, branch = hard_grad, "hard"
        else:
            below += 1
            if mode == "ga" and below % ascent_period == 0:
                grad, branch = -hard_grad, "ascent"
            else:
                _, _, grad = softmax_xent(logits, soft, sup_ids)
                branch = "soft"
        grads = backward(params, adj, tape, grad)
        params, state = adam_step(params, grads, state, hyper)
        branches.append(branch)
    return params, curve, branches, hashes


def _finish(params, regime, curve, split, branches, boundary=None, hashes=None) -> TrainedModel:
    return TrainedModel(
        params=params,
        regime=regime,
        curve=np.asarray(curve, dtype=np.float64).reshape(-1, 2),
        split=split,
        stage_boundary=boundary,
        branches=branches,
        supervision_hashes=hashes or [],
    )


def _rng(hyper: TrainHyper) -> np.random.Generator:
    return np.random.default_rng([hyper.seed, 0x6D0D])


def train_normal(kind, ds: Dataset, hyper: TrainHyper, *, hidden: int = 16, k: int = 2) -> TrainedModel:
    """Plain hard-label training on the train split."""
    params = _init(kind, ds, hyper, hidden, k)
    ids = ds.split.train_ids
    params, curve, branches, _ = _run_stage(params, ds, ids, ds.labels[ids], hyper, "normal", _rng(hyper))
    return _finish(params, Regime.NORMAL, curve, ds.split, branches)


def train_flatten(kind, ds: Dataset, hyper: TrainHyper, *, hidden: int = 16, k: int = 2) -> TrainedModel:
    """One-stage training that switches to soft labels whenever the hard loss drops below alpha."""
    hyper.check_classes(ds.num_classes)
    params = _init(kind, ds, hyper, hidden, k)
    ids = ds.split.train_ids
    params, curve, branches, _ = _run_stage(params, ds, ids, ds.labels[ids], hyper, "flatten", _rng(hyper))
    return _finish(params, Regime.FLATTEN, curve, ds.split, branches)


def train_flatten_ga(
    kind, ds: Dataset, hyper: TrainHyper, ascent_period: int = 3, *, hidden: int = 16, k: int = 2
) -> TrainedModel:
    if ascent_period < 2:
        raise ValueError("ascent_period must be at least 2")
    hyper.check_classes(ds.num_classes)
    params = _init(kind, ds, hyper, hidden, k)
    ids = ds.split.train_ids
    params, curve, branches, _ = _run_stage(
        params, ds, ids, ds.labels[ids], hyper, "ga", _rng(hyper), ascent_period=ascent_period
    )
    return _finish(params, Regime.FLATTEN_GA, curve, ds.split, branches)


def train_gtd(
    kind, ds: Dataset, hyper: TrainHyper, flatten: bool = True, *, hidden: int = 16, k: int = 2
) -> TrainedModel:
    """Two-stage training: fit the train split, then refit on frozen test-node pseudolabels.

    Stage 2 starts from the stage-1 weights with a fresh optimizer state.
    """
    mode = "flatten" if flatten else "normal"
    if flatten:
        hyper.check_classes(ds.num_classes)
    rng = _rng(hyper)
    params = _init(kind, ds, hyper, hidden, k)
    train_ids, test_ids = ds.split.train_ids, ds.split.test_ids
    params, curve1, br1, _ = _run_stage(params, ds, train_ids, ds.labels[train_ids], hyper, mode, rng)

    pseudo = posteriors(params, ds)[test_ids].argmax(axis=1)
    pseudo.setflags(write=False)
    params, curve2, br2, hashes = _run_stage(
        params.copy(), ds, test_ids, pseudo, hyper, mode, rng, track_supervision=True
    )
    regime = Regime.GTD if flatten else Regime.TWO_STAGE
    return _finish(params, regime, curve1 + curve2, ds.split, br1 + br2, hyper.epochs, hashes)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def dmp_partition(ds: Dataset, cfg: DmpConfig, members: SplitMask | None = None):
    """Disjoint (private, reference, test) node sets for DMP.

    Without ``members`` every node is re-split by the configured fractions. With
    ``members`` the member set is divided into private/reference in proportion
    and the non-members form the test set.
    """
    rng = np.random.default_rng([cfg.seed, 0xD3])
    if members is None:
        n = ds.num_nodes
        perm = rng.permutation(n)
        n_priv = _round_half_up(n * cfg.private_fraction)
        n_ref = _round_half_up(n * cfg.reference_fraction)
        private, reference, test = perm[:n_priv], perm[n_priv : n_priv + n_ref], perm[n_priv + n_ref :]
    else:
        pool = rng.permutation(members.train_ids)
        share = cfg.private_fraction / (cfg.private_fraction + cfg.reference_fraction)
        n_priv = _round_half_up(pool.size * share)
        private, reference, test = pool[:n_priv], pool[n_priv:], members.test_ids
    if private.size == 0 or reference.size == 0:
        raise ValueError("DMP needs non-empty private and reference sets")
    if test.size == 0:
        raise ValueError("DMP needs a non-empty test set")
    return np.sort(private), np.sort(reference), np.sort(test)


def train_dmp(
    kind,
    ds: Dataset,
    cfg: DmpConfig,
    hyper: TrainHyper,
    members: SplitMask | None = None,
    *,
    hidden: int = 16,
    k: int = 2,
) -> TrainedModel:
    """Teacher on the private set, student on the reference set with CE + KL to the teacher.

    The returned model's membership split treats private and reference nodes as
    members (their labels were used) and the held-out set as non-members.
    """
    private, reference, test = dmp_partition(ds, cfg, members)
    split = SplitMask(np.concatenate([private, reference]), test)
    view = ds.with_split(split)
    adj = ds.norm_adj()
    w = cfg.kl_weight

    teacher = _init(kind, ds, replace(hyper, seed=hyper.seed + 1), hidden, k)
    teacher, _, _, _ = _run_stage(
        teacher, view, private, ds.labels[private], hyper, "normal", np.random.default_rng([hyper.seed, 1])
    )
    teacher_probs = posteriors(teacher, ds)[reference]

    params = _init(kind, ds, hyper, hidden, k)
    state = AdamState.zeros_like(params)
    rng = _rng(hyper)
    ref_labels = ds.labels[reference]
    curve, branches = [], []
    for _ in range(hyper.epochs):
        logits, tape = forward_tape(params, adj, ds.features, hyper.dropout, rng)
        curve.append(
            (
                softmax_xent(logits, ds.labels[split.train_ids], split.train_ids)[0],
                softmax_xent(logits, ds.labels[test], test)[0],
            )
        )
        if w == 0.0:
            grad = softmax_xent(logits, ref_labels, reference)[2]
        elif w == 1.0:
            grad = kl_loss(logits, teacher_probs, reference)[1]
        else:
            ce_grad = softmax_xent(logits, ref_labels, reference)[2]
            kl_grad = kl_loss(logits, teacher_probs, reference)[1]
            grad = (1.0 - w) * ce_grad + w * kl_grad
        grads = backward(params, adj, tape, grad)
        params, state = adam_step(params, grads, state, hyper)
        branches.append("distill")
    return _finish(params, Regime.DMP, curve, split, branches)


def train_regime(
    regime,
    kind,
    ds: Dataset,
    hyper: TrainHyper,
    *,
    ascent_period: int = 3,
    dmp: DmpConfig | None = None,
    dmp_members: SplitMask | None = None,
    hidden: int = 16,
    k: int = 2,
) -> TrainedModel:
    regime = Regime(regime)
    arch = {"hidden": hidden, "k": k}
    if regime is Regime.NORMAL:
        return train_normal(kind, ds, hyper, **arch)
    if regime is Regime.FLATTEN:
        return train_flatten(kind, ds, hyper, **arch)
    if regime is Regime.FLATTEN_GA:
        return train_flatten_ga(kind, ds, hyper, ascent_period, **arch)
    if regime is Regime.TWO_STAGE:
        return train_gtd(kind, ds, hyper, flatten=False, **arch)
    if regime is Regime.GTD:
        return train_gtd(kind, ds, hyper, flatten=True, **arch)
    return train_dmp(kind, ds, dmp or DmpConfig(seed=hyper.seed), hyper, dmp_members, **arch)


def lbp_perturb(posts: np.ndarray, cfg: LbpConfig, rng: np.random.Generator | None = None) -> np.ndarray:
    """Binned Laplace perturbation of each posterior row.

    Per row: shuffle the class positions, cut them into ``num_bins`` contiguous
    bins of near-equal size, add one Laplace(0, b) draw to every element of a
    bin, and undo the shuffle. Rows are released without renormalization.
    """
    posts = np.asarray(posts)
    n, c = posts.shape
    if cfg.num_bins > c:
        raise ValueError(f"num_bins {cfg.num_bins} exceeds class count {c}")
    if np.abs(posts.sum(axis=1) - 1.0).max(initial=0.0) > 1e-4:
        raise ValueError("posterior rows must lie on the simplex")
    if cfg.noise_scale == 0:
        return posts.copy()
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    perms = np.argsort(rng.random((n, c)), axis=1)
    sizes = [len(chunk) for chunk in np.array_split(np.arange(c), cfg.num_bins)]
    bin_of_pos = np.repeat(np.arange(cfg.num_bins), sizes)
    bin_noise = rng.laplace(0.0, cfg.noise_scale, size=(n, cfg.num_bins))
    noise = np.empty((n, c))
    rows = np.arange(n)[:, None]
    noise[rows, perms] = bin_noise[:, bin_of_pos]
    return posts + noise
