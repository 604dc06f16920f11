"""Latent-class rating model with conditionally independent items.

A user belongs to one of ``C`` unobserved classes; given the class,
ratings of distinct items are independent multinomials::

    P(c | ratings) ~ mixing[c] * prod_j phi[j, c, r_j]
    P(R_j = r)     = sum_c P(c | ratings) * phi[j, c, r]

Unlike the vector-quantized model's bracket update, this posterior is
exact Bayes, so the tower property holds to machine precision and the
expected value of information of any non-argmax query is non-negative.

The module mirrors the vector-quantized API (state objects, incremental
updates, rating posteriors) so query-selection code can be written once
against either model.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .container import load_container, save_container
from .mcvq import PROB_FLOOR, RatingPosterior, _check_rows, _freeze

MODEL_FILE_VERSION = 1


@dataclass(frozen=True)
class NaiveBayesModel:
    """Parameter container; arrays are read-only after construction.

    Attributes
    ----------
    mixing : ndarray, shape (C,)
        Class prior; sums to 1.
    rating_multinomial : ndarray, shape (M, C, rho)
        Per (item, class) rating distributions; rows sum to 1.
    """

    mixing: np.ndarray
    rating_multinomial: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mixing", _freeze(self.mixing))
        object.__setattr__(self, "rating_multinomial", _freeze(self.rating_multinomial))
        if self.mixing.ndim != 1 or self.rating_multinomial.ndim != 3:
            raise ValueError("mixing must be (C,), rating_multinomial (M, C, rho)")
        if self.rating_multinomial.shape[1] != self.mixing.shape[0]:
            raise ValueError("mixing and rating_multinomial disagree on C")
        _check_rows("mixing", self.mixing)
        _check_rows("rating_multinomial", self.rating_multinomial)

    @property
    def n_items(self) -> int:
        return self.rating_multinomial.shape[0]

    @property
    def n_components(self) -> int:
        return self.mixing.shape[0]

    @property
    def rho(self) -> int:
        return self.rating_multinomial.shape[2]

    def save(self, path) -> None:
        save_container(
            path,
            kind="naive_bayes",
            meta={
                "model_kind": "naive_bayes",
                "version": MODEL_FILE_VERSION,
                "n_items": self.n_items,
                "n_components": self.n_components,
                "rho": self.rho,
            },
            arrays={"mixing": self.mixing, "rating_multinomial": self.rating_multinomial},
        )

    @classmethod
    def load(cls, path) -> "NaiveBayesModel":
        meta, arrays = load_container(path, expected_kind="naive_bayes")
        model = cls(arrays["mixing"], arrays["rating_multinomial"])
        if model.rho != meta["rho"]:
            raise ValueError("model file header disagrees with array shapes")
        return model


@dataclass(frozen=True)
class NbUserState:
    """Class posterior for one user, carried as unnormalized log weights."""

    ratings: Mapping[int, int]
    log_weights: np.ndarray
    component_posterior: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        object.__setattr__(self, "ratings", dict(self.ratings))
        log_w = np.array(self.log_weights, dtype=np.float64, copy=True)
        log_w.flags.writeable = False
        object.__setattr__(self, "log_weights", log_w)
        if self.component_posterior is None:
            w = np.exp(log_w - log_w.max())
            post = w / w.sum()
            post.flags.writeable = False
            object.__setattr__(self, "component_posterior", post)
        else:
            post = _freeze(self.component_posterior)
            _check_rows("component_posterior", post)
            object.__setattr__(self, "component_posterior", post)

    @property
    def observed(self) -> frozenset:
        return frozenset(self.ratings)


def nb_fresh_state(m: NaiveBayesModel) -> NbUserState:
    """State with no observations: posterior equals the mixing prior."""
    # zero-prior components are allowed and stay at -inf
    with np.errstate(divide="ignore"):
        return NbUserState(ratings={}, log_weights=np.log(m.mixing))


def _validate_observation(m: NaiveBayesModel, item: int, rating: int) -> None:
    if not 0 <= item < m.n_items:
        raise ValueError(f"item {item} out of range for {m.n_items} items")
    if not 1 <= rating <= m.rho:
        raise ValueError(f"rating {rating} outside scale 1..{m.rho}")


def nb_update(
    m: NaiveBayesModel, ratings: Mapping[int, int], floor: float = PROB_FLOOR
) -> NbUserState:
    """Exact class posterior given a batch of observed ratings.

    Likelihood entries are floored at ``floor`` before the product so one
    zero cell cannot zero out every class.
    """
    for item, rating in ratings.items():
        _validate_observation(m, item, rating)
    log_w = np.log(m.mixing).copy()
    for item, rating in ratings.items():
        log_w += np.log(np.maximum(m.rating_multinomial[item, :, rating - 1], floor))
    return NbUserState(ratings=ratings, log_weights=log_w)


def nb_incremental_update(
    m: NaiveBayesModel, u: NbUserState, item: int, rating: int, floor: float = PROB_FLOOR
) -> NbUserState:
    """Fold one new observation into ``u``; equals the batch update."""
    _validate_observation(m, item, rating)
    if item in u.ratings:
        raise ValueError(f"item {item} already observed in this state")
    log_w = u.log_weights + np.log(np.maximum(m.rating_multinomial[item, :, rating - 1], floor))
    ratings = dict(u.ratings)
    ratings[item] = rating
    return NbUserState(ratings=ratings, log_weights=log_w)


def nb_rating_posterior(m: NaiveBayesModel, u: NbUserState, item: int) -> RatingPosterior:
    """Predictive distribution of the user's rating for an unobserved item."""
    if not 0 <= item < m.n_items:
        raise ValueError(f"item {item} out of range for {m.n_items} items")
    if item in u.ratings:
        raise ValueError(f"item {item} is already observed; its rating is known")
    probs = u.component_posterior @ m.rating_multinomial[item]
    return RatingPosterior.from_probs(probs)
