"""Shared fixtures: small hand-built models and seeded datasets."""

import numpy as np
import pytest

from activecf.data import generate_synthetic, separated_ground_truth
from activecf.mcvq import McvqModel
from activecf.naive_bayes import NaiveBayesModel


def random_mcvq(rng, m=6, k=2, l=2, rho=4) -> McvqModel:
    """A coherent random model; means spread over the scale."""
    type_dist = rng.dirichlet(np.ones(k), size=m)
    prior = rng.dirichlet(np.ones(l), size=k)
    mean = rng.uniform(1.0, rho, size=(m, k, l))
    var = rng.uniform(0.2, 2.0, size=(m, k, l))
    return McvqModel.from_gaussians(type_dist, prior, mean, var, rho)


def random_naive_bayes(rng, m=6, c=3, rho=4) -> NaiveBayesModel:
    mixing = rng.dirichlet(np.ones(c))
    theta = rng.dirichlet(np.ones(rho), size=(m, c))
    return NaiveBayesModel(mixing=mixing, rating_multinomial=theta)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def small_mcvq(rng):
    return random_mcvq(rng)


@pytest.fixture
def small_nb(rng):
    return random_naive_bayes(rng)


@pytest.fixture(scope="session")
def tiny_truth():
    return separated_ground_truth(m_items=12, n_types=2, n_attitudes=2, rho=6, seed=0)


@pytest.fixture(scope="session")
def tiny_dataset(tiny_truth):
    return generate_synthetic(tiny_truth, n_users=80, density=0.5, seed=1)
