"""Signature nets: spacing, coverage, and the quoted value-difference factor."""

import numpy as np
import pytest

from activecf.data import RatingsDataset, generate_synthetic
from activecf.mcvq import McvqModel
from activecf.prototypes import (
    PrototypeSet,
    audit_value_difference,
    beta_for_fraction,
    covering_radius,
    evoi_difference_bound,
    l1_distance,
    select_prototypes,
    signature,
    signature_matrix,
)
from conftest import random_mcvq


def counted_dataset(counts, rho=4):
    """Dataset whose per-item rating counts equal ``counts``."""
    users, items = [], []
    for item, c in enumerate(counts):
        for u in range(c):
            users.append(u)
            items.append(item)
    n = max(counts) if counts else 1
    return RatingsDataset(
        n_users=n,
        n_items=len(counts),
        rho=rho,
        users=np.array(users),
        items=np.array(items),
        ratings=np.full(len(users), 1),
    )


# ------------------------------------------------------------------ signature


def test_signature_degenerate_model_has_length_one():
    m = McvqModel.from_gaussians(
        np.array([[1.0]]), np.array([[1.0]]), np.array([[[2.0]]]), np.array([[[0.0]]]), 1
    )
    sig = signature(m, 0)
    assert sig.shape == (1,)
    assert sig[0] == pytest.approx(1.0)


def test_identical_items_share_signatures(rng):
    m = random_mcvq(rng, m=4, k=2, l=2, rho=3)
    dup = McvqModel(
        type_dist=np.vstack([m.type_dist, m.type_dist[0]]),
        attitude_prior=m.attitude_prior,
        rating_mean=np.concatenate([m.rating_mean, m.rating_mean[:1]]),
        rating_var=np.concatenate([m.rating_var, m.rating_var[:1]]),
        rating_multinomial=np.concatenate([m.rating_multinomial, m.rating_multinomial[:1]]),
    )
    assert np.array_equal(signature(dup, 0), signature(dup, 4))


def test_signature_is_the_flattened_weighted_likelihood(rng):
    m = random_mcvq(rng, m=3, k=2, l=3, rho=4)
    sig = signature(m, 1)
    i = 0
    for k in range(m.n_types):
        for l in range(m.n_attitudes):
            for r in range(m.rho):
                assert sig[i] == pytest.approx(
                    m.type_dist[1, k] * m.rating_multinomial[1, k, l, r], abs=1e-15
                )
                i += 1
    assert np.array_equal(signature_matrix(m)[1], sig)


# ---------------------------------------------------------------- l1 distance


def test_l1_hand_value():
    assert l1_distance([0.2, 0.5], [0.4, 0.1]) == pytest.approx(0.6)


def test_l1_is_a_metric(rng):
    for _ in range(20):
        a, b, c = rng.uniform(size=(3, 5))
        assert l1_distance(a, a) == 0.0
        assert l1_distance(a, b) == l1_distance(b, a)
        assert l1_distance(a, c) <= l1_distance(a, b) + l1_distance(b, c) + 1e-12


def test_l1_rejects_length_mismatch():
    with pytest.raises(ValueError, match="mismatch"):
        l1_distance([0.1], [0.1, 0.2])


# ----------------------------------------------------------- prototype greedy


def test_beta_zero_keeps_every_item(rng):
    m = random_mcvq(rng, m=6, k=2, l=2, rho=3)
    d = counted_dataset([5, 1, 4, 2, 2, 7], rho=3)
    net = select_prototypes(m, d, beta=0.0)
    assert sorted(net.members.tolist()) == list(range(6))
    # kept in most-rated-first order, count ties by ascending index
    assert net.members.tolist() == [5, 0, 2, 3, 4, 1]
    assert net.epsilon == 0.0


def test_huge_beta_keeps_single_most_rated_item(rng):
    m = random_mcvq(rng, m=5, k=2, l=2, rho=3)
    d = counted_dataset([2, 9, 3, 9, 1], rho=3)
    sigs = signature_matrix(m)
    diameter = max(
        l1_distance(sigs[i], sigs[j]) for i in range(5) for j in range(5)
    )
    net = select_prototypes(m, d, beta=diameter + 1.0)
    assert net.members.tolist() == [1]  # count tie 1 vs 3 goes to the lower index
    assert net.epsilon == pytest.approx(covering_radius(sigs, net.members))


def greedy_reference(sigs, counts, beta):
    order = sorted(range(len(counts)), key=lambda i: (-counts[i], i))
    kept = [order[0]]
    for i in order[1:]:
        if min(np.abs(sigs[i] - sigs[j]).sum() for j in kept) >= beta:
            kept.append(i)
    return kept


def test_greedy_matches_reference_and_spacing_invariant(rng):
    for _ in range(10):
        m = random_mcvq(rng, m=8, k=2, l=2, rho=4)
        d = generate_synthetic(m, n_users=40, density=0.5, seed=int(rng.integers(1e6)))
        beta = float(rng.uniform(0.0, 1.5))
        net = select_prototypes(m, d, beta)
        sigs = signature_matrix(m)
        assert net.members.tolist() == greedy_reference(sigs, d.counts_per_item(), beta)
        for i, a in enumerate(net.members):
            for b in net.members[i + 1 :]:
                assert l1_distance(sigs[a], sigs[b]) >= beta
        assert net.epsilon == pytest.approx(covering_radius(sigs, net.members))
        assert net.beta == beta


def test_member_count_non_increasing_in_beta(rng):
    m = random_mcvq(rng, m=10, k=2, l=2, rho=4)
    d = generate_synthetic(m, n_users=50, density=0.5, seed=3)
    sizes = [select_prototypes(m, d, b).n_members for b in (0.0, 0.1, 0.3, 0.6, 1.0, 2.0)]
    assert sizes == sorted(sizes, reverse=True)
    assert sizes[0] == 10


def test_select_is_deterministic(rng):
    m = random_mcvq(rng, m=8, k=2, l=2, rho=4)
    d = generate_synthetic(m, n_users=30, density=0.6, seed=5)
    a = select_prototypes(m, d, 0.4)
    b = select_prototypes(m, d, 0.4)
    assert np.array_equal(a.members, b.members)
    assert a.epsilon == b.epsilon


def test_prototype_set_validation():
    with pytest.raises(ValueError, match="at least one member"):
        PrototypeSet(members=np.array([], dtype=np.int64), beta=0.1, epsilon=0.0, counts=np.array([]))
    with pytest.raises(ValueError, match="duplicate"):
        PrototypeSet(members=np.array([1, 1]), beta=0.1, epsilon=0.0, counts=np.array([2, 2]))
    with pytest.raises(ValueError, match=">= 0"):
        PrototypeSet(members=np.array([0]), beta=-0.1, epsilon=0.0, counts=np.array([1]))


def test_prototype_set_save_load(tmp_path, rng):
    m = random_mcvq(rng, m=6, k=2, l=2, rho=3)
    d = generate_synthetic(m, n_users=30, density=0.5, seed=2)
    net = select_prototypes(m, d, 0.3)
    path = tmp_path / "net.json"
    net.save(path)
    back = PrototypeSet.load(path)
    assert np.array_equal(back.members, net.members)
    assert back.beta == net.beta
    assert back.epsilon == net.epsilon
    assert np.array_equal(back.counts, net.counts)


def test_beta_for_fraction_hits_the_target_retention(rng):
    m = random_mcvq(rng, m=12, k=2, l=2, rho=4)
    d = generate_synthetic(m, n_users=60, density=0.5, seed=7)
    assert select_prototypes(m, d, beta_for_fraction(m, d, 1.0)).n_members == 12
    for frac in (0.5, 0.25):
        beta = beta_for_fraction(m, d, frac)
        kept = select_prototypes(m, d, beta).n_members
        # closest realizable retention: within one item of the target here
        assert abs(kept - frac * 12) <= 1.0
    with pytest.raises(ValueError, match="fraction"):
        beta_for_fraction(m, d, 0.0)


# ----------------------------------------------------- value-difference audit


def test_value_difference_factor():
    assert evoi_difference_bound(0.0) == 0.0
    assert evoi_difference_bound(0.1) == pytest.approx(1.2)
    assert evoi_difference_bound(0.1, p_r=0.5) == pytest.approx(2.4)
    with pytest.raises(ValueError, match="epsilon"):
        evoi_difference_bound(-1.0)
    with pytest.raises(ValueError, match="positive"):
        evoi_difference_bound(0.1, p_r=0.0)


def test_audit_reports_observations(rng):
    m = random_mcvq(rng, m=6, k=2, l=2, rho=3)
    report = audit_value_difference(m, n_states=4, n_pairs=6, seed=1)
    assert set(report) == {
        "checked",
        "max_observed_difference",
        "max_ratio_vs_bound",
        "violations",
    }
    assert report["checked"] > 0
    assert report["max_observed_difference"] >= 0.0
    assert 0 <= report["violations"] <= report["checked"]
