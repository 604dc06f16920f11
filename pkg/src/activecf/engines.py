"""Uniform inference interface over both rating models.

Query selection only ever needs two capabilities: the predictive rating
distribution of (state, item) and the state transition on (item, rating),
plus vectorized posterior means for scoring candidate recommendations.
``McvqEngine`` and ``NaiveBayesEngine`` provide them behind one protocol
so the strategy layer is written once. Engines precompute the per-model
caches the hot paths need (floored likelihoods, prior mixtures, per-cell
binned rating means) and never mutate states in place.
"""

from __future__ import annotations

from typing import Protocol, runtime_checkable

import numpy as np

from . import mcvq as mc
from . import naive_bayes as nb


@runtime_checkable
class RatingEngine(Protocol):
    """What the strategy layer assumes about a model."""

    rho: int
    n_items: int

    def fresh_state(self): ...

    def update(self, state, item: int, rating: int): ...

    def predictive(self, state, item: int) -> np.ndarray: ...

    def posterior_means(self, state, items: np.ndarray) -> np.ndarray: ...


class McvqEngine:
    """Vector-quantized model engine (fixed-prior update convention)."""

    def __init__(self, model: mc.McvqModel, floor: float = mc.PROB_FLOOR):
        self.model = model
        self.floor = floor
        self.rho = model.rho
        self.n_items = model.n_items
        theta = np.maximum(model.rating_multinomial, floor)  # floored copy for products
        self._theta_floored = theta
        # prior-mixed likelihood of each rating were item j of type k: (M, K, rho)
        self._prior_mix = np.einsum("kl,jklr->jkr", model.attitude_prior, theta)
        self._total_mix = np.einsum("jk,jkr->jr", model.type_dist, self._prior_mix)  # (M, rho)
        levels = np.arange(1, model.rho + 1, dtype=np.float64)
        cell_means = model.rating_multinomial @ levels  # (M, K, L)
        # weight matrix turning a flattened attitude posterior into item means
        self._mean_weights = (model.type_dist[:, :, None] * cell_means).reshape(model.n_items, -1)

    def fresh_state(self) -> mc.UserState:
        return mc.fresh_state(self.model)

    def update(self, state: mc.UserState, item: int, rating: int) -> mc.UserState:
        if item in state.ratings:
            raise ValueError(f"item {item} already observed in this state")
        mc._validate_observation(self.model, item, rating)
        theta = self._theta_floored[item, :, :, rating - 1]  # (K, L)
        weighted = self.model.type_dist[item] * self._prior_mix[item, :, rating - 1]
        cross = self._total_mix[item, rating - 1] - weighted  # (K,)
        bracket = cross[:, None] + self.model.type_dist[item][:, None] * theta
        ratings = dict(state.ratings)
        ratings[item] = rating
        return mc.UserState(ratings=ratings, log_rows=state.log_rows + np.log(bracket))

    def predictive(self, state: mc.UserState, item: int) -> np.ndarray:
        return mc.rating_posterior(self.model, state, item).probs

    def posterior_means(self, state: mc.UserState, items: np.ndarray) -> np.ndarray:
        # einsum, not @: BLAS rounds differently per batch shape, and a
        # pruned scan must reproduce the full scan's floats exactly
        rows = self._mean_weights[np.asarray(items, dtype=np.int64)]
        return np.einsum("ij,j->i", rows, state.attitude_posterior.ravel())


class NaiveBayesEngine:
    """Latent-class model engine (exact Bayesian updates)."""

    def __init__(self, model: nb.NaiveBayesModel, floor: float = mc.PROB_FLOOR):
        self.model = model
        self.floor = floor
        self.rho = model.rho
        self.n_items = model.n_items
        levels = np.arange(1, model.rho + 1, dtype=np.float64)
        self._mean_weights = model.rating_multinomial @ levels  # (M, C)

    def fresh_state(self) -> nb.NbUserState:
        return nb.nb_fresh_state(self.model)

    def update(self, state: nb.NbUserState, item: int, rating: int) -> nb.NbUserState:
        return nb.nb_incremental_update(self.model, state, item, rating, floor=self.floor)

    def predictive(self, state: nb.NbUserState, item: int) -> np.ndarray:
        return nb.nb_rating_posterior(self.model, state, item).probs

    def posterior_means(self, state: nb.NbUserState, items: np.ndarray) -> np.ndarray:
        # einsum for batch-shape-independent floats, as above
        rows = self._mean_weights[np.asarray(items, dtype=np.int64)]
        return np.einsum("ij,j->i", rows, state.component_posterior)


def engine_for(model) -> RatingEngine:
    """Wrap a model object in its engine."""
    if isinstance(model, mc.McvqModel):
        return McvqEngine(model)
    if isinstance(model, nb.NaiveBayesModel):
        return NaiveBayesEngine(model)
    raise TypeError(f"no engine for {type(model).__name__}")
