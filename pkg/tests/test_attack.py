import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gtd_lab.attack import (
    AttackDataset,
    AttackMode,
    attack_scores,
    auroc,
    build_attack_dataset,
    export_scores,
    make_shadow_split,
    membership_weights,
    score_attack,
    train_attack,
    train_shadow,
)
from gtd_lab.defense import LbpConfig, Regime, posteriors, train_gtd, train_regime
from gtd_lab.graph import SplitMask, split_nodes
from gtd_lab.nn import Kind, TrainHyper

from conftest import random_dataset

RATIOS = {"9:1": 0.9, "3:1": 0.75, "1:1": 0.5, "1:3": 0.25, "1:9": 0.1}


def brute_auroc(m, n):
    m = np.asarray(m, dtype=np.float64)[:, None]
    n = np.asarray(n, dtype=np.float64)[None, :]
    return ((m > n).sum() + 0.5 * (m == n).sum()) / (m.size * n.size)


def random_instance(rng):
    pool = rng.integers(0, 6, size=8) / 5.0  # few distinct values, many ties
    m = rng.choice(pool, size=rng.integers(1, 30))
    n = rng.choice(pool, size=rng.integers(1, 30))
    return m, n


def test_auroc_examples():
    assert auroc([0.9, 0.8], [0.1, 0.2]) == 1.0
    assert auroc([0.6, 0.4], [0.5, 0.3]) == 0.75
    assert auroc([0.3] * 4, [0.3] * 7) == 0.5
    with pytest.raises(ValueError):
        auroc([], [0.1])


def test_auroc_matches_brute_force_with_ties():
    rng = np.random.default_rng(0)
    for _ in range(200):
        m, n = random_instance(rng)
        assert auroc(m, n) == brute_auroc(m, n)
        assert auroc(m, n) + auroc(n, m) == 1.0


scores = st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=40)


@given(scores, scores)
@settings(max_examples=150, deadline=None)
def test_auroc_complement_and_oracle(m, n):
    assert auroc(m, n) + auroc(n, m) == pytest.approx(1.0, abs=1e-12)
    assert auroc(m, n) == pytest.approx(brute_auroc(m, n), abs=1e-12)


grid = st.lists(st.integers(-4000, 4000).map(lambda v: v / 8), min_size=1, max_size=40)


@given(grid, grid)
@settings(max_examples=100, deadline=None)
def test_auroc_monotone_invariance(m, n):
    # strictly increasing, and still strictly increasing in floating point on this grid
    f = lambda x: np.arctan(np.asarray(x) / 100) * 7 + np.exp(np.asarray(x) / 500)
    assert auroc(f(m), f(n)) == pytest.approx(auroc(m, n), abs=1e-12)


def test_hard_shadow_copies_target():
    target = split_nodes(20, 0.5, 1)
    for seed in range(3):
        shadow = make_shadow_split(target, "hard", seed)
        assert shadow.mask == target and shadow.mode is AttackMode.HARD


@pytest.mark.parametrize("label,frac", list(RATIOS.items()))
@pytest.mark.parametrize("n", [20, 100, 2708])
def test_weak_split_minimal_intersection(label, frac, n):
    target = split_nodes(n, frac, 3)
    shadow = make_shadow_split(target, AttackMode.WEAK, 5).mask
    tr, te = target.train_ids.size, target.test_ids.size
    assert shadow.train_ids.size == tr
    assert np.intersect1d(shadow.train_ids, target.train_ids).size == max(0, tr - te)
    assert np.array_equal(np.sort(np.concatenate([shadow.train_ids, shadow.test_ids])), np.arange(n))


def test_weak_split_examples():
    target = SplitMask(np.arange(9), [9])
    assert np.intersect1d(make_shadow_split(target, "weak", 0).mask.train_ids, target.train_ids).size == 8
    even = split_nodes(10, 0.5, 0)
    weak = make_shadow_split(even, "weak", 0).mask
    assert np.array_equal(weak.train_ids, even.test_ids)
    assert make_shadow_split(even, "weak", 4).mask == make_shadow_split(even, "weak", 4).mask


def test_attack_dataset_rows():
    ds = random_dataset(n=20, seed=2)
    h = TrainHyper(epochs=5)
    shadow = make_shadow_split(ds.split, "weak", 1)
    model = train_shadow(Kind.GCN, ds, shadow, h, "normal")
    plain = build_attack_dataset(model, ds, shadow, sort_posteriors=False)
    np.testing.assert_allclose(plain.posteriors, posteriors(model.params, ds), atol=1e-6)
    assert plain.membership.sum() == shadow.mask.train_ids.size
    assert plain.posteriors.shape[0] == ds.num_nodes
    srt = build_attack_dataset(model, ds, shadow, sort_posteriors=True)
    assert (np.diff(srt.posteriors, axis=1) <= 0).all()
    assert len(list(plain.rows())) == ds.num_nodes


def test_hard_shadow_mirrors_target_bit_exactly():
    ds = random_dataset(n=30, d=6, seed=3)
    h = TrainHyper(epochs=20, seed=4)
    target = train_gtd(Kind.GCN, ds, h)
    shadow = make_shadow_split(target.split, "hard", 0)
    replica = train_shadow(Kind.GCN, ds, shadow, h, Regime.GTD, target_regime=Regime.GTD)
    assert replica.params.equals(target.params)
    np.testing.assert_allclose(
        build_attack_dataset(replica, ds, shadow).posteriors, posteriors(target.params, ds), atol=1e-6
    )


def test_shadow_regime_mismatch_rejected():
    ds = random_dataset()
    shadow = make_shadow_split(ds.split, "hard", 0)
    with pytest.raises(ValueError):
        train_shadow(Kind.GCN, ds, shadow, TrainHyper(epochs=1), Regime.NORMAL, target_regime=Regime.GTD)


def test_weak_dmp_shadow_partitions_shadow_members():
    ds = random_dataset(n=40, seed=1)
    shadow = make_shadow_split(ds.split, "weak", 2)
    model = train_shadow(Kind.GCN, ds, shadow, TrainHyper(epochs=2), Regime.DMP)
    assert model.split == shadow.mask


def test_membership_weights():
    np.testing.assert_array_equal(membership_weights([0, 1, 1, 0]), np.ones(4))
    w = membership_weights([1, 0, 0, 0])
    assert w[0] * 1 == pytest.approx(w[1:].sum())
    with pytest.raises(ValueError):
        membership_weights([1, 1, 1])


def test_attack_single_class_rejected():
    data = AttackDataset(np.full((4, 3), 1 / 3), np.ones(4, np.int8))
    with pytest.raises(ValueError):
        train_attack(data, TrainHyper(epochs=1))


def test_attack_identical_posteriors_learn_nothing():
    bits = np.array([1, 0] * 50, dtype=np.int8)
    data = AttackDataset(np.tile([0.2, 0.3, 0.5], (100, 1)), bits)
    model = train_attack(data, TrainHyper(epochs=50))
    s = attack_scores(model, data.posteriors)
    assert abs(auroc(s[bits == 1], s[bits == 0]) - 0.5) <= 0.05


def test_attack_separable():
    rng = np.random.default_rng(0)
    c = 4
    members = np.eye(c)[rng.integers(0, c, 60)]
    nonmembers = np.full((60, c), 1 / c)
    bits = np.repeat([1, 0], 60).astype(np.int8)
    data = AttackDataset(np.vstack([members, nonmembers]), bits)
    model = train_attack(data, TrainHyper(epochs=100))
    s = attack_scores(model, data.posteriors)
    assert auroc(s[bits == 1], s[bits == 0]) > 0.99
    assert model.input_dim == c and model.curve.shape == (100,)


def _pipeline(seed=0):
    ds = random_dataset(n=40, d=6, seed=seed)
    h = TrainHyper(epochs=30, seed=seed)
    target = train_regime("normal", Kind.GCN, ds, h)
    shadow = make_shadow_split(target.split, "weak", seed)
    replica = train_shadow(Kind.GCN, ds, shadow, h, "normal")
    attack = train_attack(build_attack_dataset(replica, ds, shadow), TrainHyper(epochs=20, seed=seed))
    return ds, target, attack


def test_zero_weight_attack_scores_half():
    ds, target, attack = _pipeline()
    attack.params = attack.params.with_arrays([np.zeros_like(a) for a in attack.params.arrays()])
    auc, s = score_attack(attack, target, ds)
    assert auc == 0.5 and np.all(s == 0.5)


def test_zero_noise_lbp_same_auroc():
    ds, target, attack = _pipeline(1)
    plain, s1 = score_attack(attack, target, ds)
    noisy, s2 = score_attack(attack, target, ds, lbp=LbpConfig(num_bins=2, noise_scale=0.0))
    assert plain == noisy
    np.testing.assert_array_equal(s1, s2)


def test_score_attack_dimension_checks():
    ds, target, attack = _pipeline(2)
    other = random_dataset(n=40, d=6, c=4, seed=2)
    with pytest.raises(ValueError):
        score_attack(attack, target, other)
    with pytest.raises(ValueError):
        score_attack(attack, target, ds, sort_posteriors=True)
    with pytest.raises(ValueError):
        attack_scores(attack, np.ones((3, 5)) / 5)


def test_export_scores(tmp_path):
    path = export_scores(tmp_path / "s.tsv", np.array([0.25, 0.5]), np.array([True, False]))
    assert path.read_text().splitlines() == ["node_id\tscore\tmembership", "0\t0.25\t1", "1\t0.5\t0"]
