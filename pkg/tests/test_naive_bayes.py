"""Latent-class model: exact posterior updates and coherence."""

import numpy as np
import pytest

from activecf.naive_bayes import (
    NaiveBayesModel,
    nb_fresh_state,
    nb_incremental_update,
    nb_rating_posterior,
    nb_update,
)
from conftest import random_naive_bayes


def oracle_components(m, ratings, floor=1e-12):
    post = m.mixing.copy()
    for c in range(m.n_components):
        for j, r in ratings.items():
            post[c] *= max(m.rating_multinomial[j, c, r - 1], floor)
    return post / post.sum()


def test_empty_update_equals_mixing(small_nb):
    u = nb_update(small_nb, {})
    assert np.allclose(u.component_posterior, small_nb.mixing, atol=1e-15)


def test_single_class_posterior_is_one(rng):
    m = random_naive_bayes(rng, c=1)
    u = nb_update(m, {0: 2, 3: 4})
    assert u.component_posterior.shape == (1,)
    assert u.component_posterior[0] == pytest.approx(1.0, abs=1e-15)


def test_update_matches_direct_evaluation(rng):
    for _ in range(25):
        m = random_naive_bayes(rng, m=6, c=4, rho=5)
        n_obs = int(rng.integers(1, 5))
        items = rng.permutation(6)[:n_obs]
        ratings = {int(j): int(rng.integers(1, 6)) for j in items}
        got = nb_update(m, ratings).component_posterior
        want = oracle_components(m, ratings)
        assert np.abs(got - want).max() < 1e-12


def test_incremental_equals_batch(rng):
    m = random_naive_bayes(rng, m=8, c=3, rho=6)
    ratings = {0: 3, 2: 6, 5: 1}
    state = nb_fresh_state(m)
    for j, r in ratings.items():
        state = nb_incremental_update(m, state, j, r)
    batch = nb_update(m, ratings)
    assert np.abs(state.component_posterior - batch.component_posterior).max() < 1e-12
    with pytest.raises(ValueError, match="already observed"):
        nb_incremental_update(m, state, 0, 1)


def test_posterior_one_hot_component_collapse():
    rng = np.random.default_rng(3)
    theta = rng.dirichlet(np.ones(4), size=(5, 2))
    m = NaiveBayesModel(mixing=np.array([1.0, 0.0]), rating_multinomial=theta)
    post = nb_rating_posterior(m, nb_fresh_state(m), 3)
    assert np.allclose(post.probs, theta[3, 0], atol=1e-15)


def test_posterior_uniform_two_components_averages():
    rng = np.random.default_rng(4)
    theta = rng.dirichlet(np.ones(4), size=(5, 2))
    m = NaiveBayesModel(mixing=np.array([0.5, 0.5]), rating_multinomial=theta)
    post = nb_rating_posterior(m, nb_fresh_state(m), 2)
    assert np.allclose(post.probs, theta[2].mean(axis=0), atol=1e-15)


def test_tower_property_exact(rng):
    # mixing the post-response posterior over the predictive recovers
    # the current posterior: exact Bayesian coherence
    for _ in range(20):
        m = random_naive_bayes(rng, m=6, c=3, rho=5)
        u = nb_update(m, {0: int(rng.integers(1, 6))})
        q, j = 2, 4
        predictive = nb_rating_posterior(m, u, q).probs
        mixed = np.zeros(m.rho)
        for r in range(1, m.rho + 1):
            u_r = nb_incremental_update(m, u, q, r)
            mixed += predictive[r - 1] * nb_rating_posterior(m, u_r, j).probs
        base = nb_rating_posterior(m, u, j).probs
        assert np.abs(mixed - base).max() < 1e-12


def test_validation_errors(small_nb):
    with pytest.raises(ValueError, match="outside scale"):
        nb_update(small_nb, {0: 9})
    with pytest.raises(ValueError, match="out of range"):
        nb_update(small_nb, {42: 1})
    u = nb_update(small_nb, {1: 2})
    with pytest.raises(ValueError, match="already observed"):
        nb_rating_posterior(small_nb, u, 1)


def test_save_load_bit_exact(tmp_path, rng):
    m = random_naive_bayes(rng, m=7, c=4, rho=6)
    path = tmp_path / "nb.bin"
    m.save(path)
    back = NaiveBayesModel.load(path)
    assert np.array_equal(back.mixing, m.mixing)
    assert np.array_equal(back.rating_multinomial, m.rating_multinomial)
