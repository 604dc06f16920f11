"""Vector-quantized rating model: soft item types, per-type user attitudes.

The model factors a user's rating of item ``j`` through two discrete
latents: the item's type (one of ``K`` vector quantizers, with learned
per-item soft assignment ``type_dist[j, k]``) and the user's attitude
toward that quantizer (one of ``L`` values, prior ``attitude_prior[k, l]``).
Given both, the rating is Gaussian with per-cell mean and variance,
discretized onto the ``1..rho`` scale by integrating each unit-width bin
(outer bins absorb the tails).

Predictive distribution for user state ``u`` and unobserved item ``j``::

    P(R_j = r) = sum_k type_dist[j, k] * sum_l P_u(A_k = l) * theta[j, k, l, r]

Attitude rows update multiplicatively from observed ratings. The bracket
factor for observation ``(q, r)`` and attitude cell ``(k, l)`` is::

    B[k, l] = sum_{k' != k} type_dist[q, k'] * m[q, k', r]  +  type_dist[q, k] * theta[q, k, l, r]

where ``m[q, k', r] = sum_l' attitude_prior[k', l'] * theta[q, k', l', r]``.
The cross-quantizer mixture always uses the model's attitude *prior*
(the fixed-prior convention), which makes the bracket independent of the
running state: batch and incremental updates agree, and update order is
irrelevant. A fixed-point variant that re-mixes with the current
posteriors is available behind ``convention="fixed_point"``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.stats import norm

from .container import load_container, save_container

PROB_FLOOR = 1e-12
MODEL_FILE_VERSION = 1


class DegenerateAttitudeError(ArithmeticError):
    """All attitude weights for one quantizer underflowed to zero."""

    def __init__(self, quantizer: int):
        self.quantizer = quantizer
        super().__init__(
            f"attitude row for quantizer {quantizer} has zero total weight; "
            "ratings are jointly impossible under the model"
        )


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=np.float64, order="C", copy=True)
    out.flags.writeable = False
    return out


def bin_gaussian(mean: float, var: float, rho: int) -> np.ndarray:
    """Discretize a Gaussian onto the integer scale ``1..rho``.

    Bin ``r`` collects the mass on ``[r - 0.5, r + 0.5]``; the first and
    last bins absorb the respective tails, so the result sums to one. A
    zero variance yields a point mass at the rounded mean clamped into
    ``[1, rho]`` (half-way cases round up).

    Parameters
    ----------
    mean, var : float
        Gaussian parameters; ``var`` must be non-negative.
    rho : int
        Number of rating levels, ``rho >= 1``.
    """
    if rho < 1:
        raise ValueError(f"rho must be >= 1, got {rho}")
    if var < 0:
        raise ValueError(f"variance must be non-negative, got {var}")
    out = _bin_gaussian_grid(np.asarray([[mean]]), np.asarray([[var]]), rho)
    return out[0, 0]


def _bin_gaussian_grid(means: np.ndarray, variances: np.ndarray, rho: int) -> np.ndarray:
    """Vectorized binning; appends a length-``rho`` axis to the input shape."""
    means = np.asarray(means, dtype=np.float64)
    variances = np.asarray(variances, dtype=np.float64)
    if np.any(variances < 0):
        raise ValueError("variance must be non-negative")
    edges = np.arange(0, rho + 1, dtype=np.float64) + 0.5  # 0.5, 1.5, ..., rho + 0.5
    sd = np.sqrt(variances)[..., None]
    positive = sd > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        z = (edges - means[..., None]) / np.where(positive, sd, 1.0)
    cdf = norm.cdf(z)
    cdf[..., 0] = 0.0
    cdf[..., -1] = 1.0
    probs = np.diff(cdf, axis=-1)
    # var == 0: point mass at the clamped half-up rounding of the mean
    point = np.clip(np.floor(means + 0.5), 1, rho).astype(np.int64)
    onehot = np.zeros(means.shape + (rho,))
    np.put_along_axis(onehot, point[..., None] - 1, 1.0, axis=-1)
    probs = np.where(positive, probs, onehot)
    probs = np.clip(probs, 0.0, None)
    return probs / probs.sum(axis=-1, keepdims=True)


def gaussian_from_binned_moments(
    target_mean: np.ndarray,
    target_var: np.ndarray,
    rho: int,
    var_floor: float = 1e-4,
    max_iters: int = 80,
    tol: float = 1e-10,
) -> tuple[np.ndarray, np.ndarray]:
    """Gaussians whose *binned* distributions carry the given moments.

    Inverts :func:`bin_gaussian` in the moment sense: returns
    ``(mean, var)`` such that the discretized distribution on ``1..rho``
    has mean ``target_mean`` and variance close to ``target_var``.
    Matters near the scale boundary, where the raw Gaussian mean can sit
    outside ``[1, rho]`` while the binned mean cannot; treating observed
    rating moments directly as Gaussian parameters would bias every
    boundary cell toward the interior.

    Fixed-point iteration with damping, fully vectorized over any input
    shape. Variances are floored; a requested variance below what any
    Gaussian can produce at that mean (binning cannot go below the
    within-bin spread) resolves to the closest attainable one.
    """
    target_mean = np.asarray(target_mean, dtype=np.float64)
    target_var = np.asarray(target_var, dtype=np.float64)
    levels = np.arange(1, rho + 1, dtype=np.float64)
    mean = np.clip(target_mean.copy(), 1.0, float(rho))
    var = np.maximum(target_var.copy(), var_floor)
    lo, hi = 1.0 - 3.0 * rho, rho + 3.0 * rho
    for _ in range(max_iters):
        probs = _bin_gaussian_grid(mean, var, rho)
        got_mean = probs @ levels
        got_var = probs @ levels**2 - got_mean**2
        err_m = target_mean - got_mean
        err_v = target_var - got_var
        if float(np.abs(err_m).max()) < tol and float(np.abs(err_v).max()) < tol:
            break
        mean = np.clip(mean + 0.9 * err_m, lo, hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(got_var > 1e-12, target_var / got_var, 1.0)
        var = np.clip(var * np.clip(ratio, 0.25, 4.0) ** 0.9, var_floor, (3.0 * rho) ** 2)
    return mean, var


def _check_rows(name: str, arr: np.ndarray, atol: float = 1e-9) -> None:
    sums = arr.sum(axis=-1)
    if np.any(arr < -atol) or not np.allclose(sums, 1.0, atol=atol):
        raise ValueError(f"{name} rows must be distributions (non-negative, summing to 1)")


@dataclass(frozen=True)
class McvqModel:
    """Parameter container; arrays are read-only after construction.

    Attributes
    ----------
    type_dist : ndarray, shape (M, K)
        Soft assignment of each item to the K quantizers; rows sum to 1.
    attitude_prior : ndarray, shape (K, L)
        Population distribution over attitudes per quantizer; rows sum to 1.
    rating_mean, rating_var : ndarray, shape (M, K, L)
        Gaussian rating parameters per (item, quantizer, attitude) cell.
    rating_multinomial : ndarray, shape (M, K, L, rho)
        Binned rating distributions; always exactly the binning of
        ``(rating_mean, rating_var)``.
    """

    type_dist: np.ndarray
    attitude_prior: np.ndarray
    rating_mean: np.ndarray
    rating_var: np.ndarray
    rating_multinomial: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "type_dist", _freeze(self.type_dist))
        object.__setattr__(self, "attitude_prior", _freeze(self.attitude_prior))
        object.__setattr__(self, "rating_mean", _freeze(self.rating_mean))
        object.__setattr__(self, "rating_var", _freeze(self.rating_var))
        object.__setattr__(self, "rating_multinomial", _freeze(self.rating_multinomial))
        m, k = self.type_dist.shape
        k2, l = self.attitude_prior.shape
        if k2 != k:
            raise ValueError("type_dist and attitude_prior disagree on K")
        if self.rating_mean.shape != (m, k, l) or self.rating_var.shape != (m, k, l):
            raise ValueError("rating_mean/rating_var must have shape (M, K, L)")
        if self.rating_multinomial.shape[:3] != (m, k, l) or self.rating_multinomial.ndim != 4:
            raise ValueError("rating_multinomial must have shape (M, K, L, rho)")
        _check_rows("type_dist", self.type_dist)
        _check_rows("attitude_prior", self.attitude_prior)
        _check_rows("rating_multinomial", self.rating_multinomial)
        expected = _bin_gaussian_grid(self.rating_mean, self.rating_var, self.rho)
        if not np.allclose(self.rating_multinomial, expected, atol=1e-12):
            raise ValueError("rating_multinomial is not the binning of (rating_mean, rating_var)")

    @classmethod
    def from_gaussians(
        cls,
        type_dist: np.ndarray,
        attitude_prior: np.ndarray,
        rating_mean: np.ndarray,
        rating_var: np.ndarray,
        rho: int,
    ) -> "McvqModel":
        """Build a model, deriving the binned multinomials from the Gaussians."""
        multinomial = _bin_gaussian_grid(np.asarray(rating_mean), np.asarray(rating_var), rho)
        return cls(type_dist, attitude_prior, rating_mean, rating_var, multinomial)

    @property
    def n_items(self) -> int:
        return self.type_dist.shape[0]

    @property
    def n_types(self) -> int:
        return self.type_dist.shape[1]

    @property
    def n_attitudes(self) -> int:
        return self.attitude_prior.shape[1]

    @property
    def rho(self) -> int:
        return self.rating_multinomial.shape[3]

    def save(self, path) -> None:
        save_container(
            path,
            kind="mcvq",
            meta={
                "model_kind": "mcvq",
                "version": MODEL_FILE_VERSION,
                "n_items": self.n_items,
                "n_types": self.n_types,
                "n_attitudes": self.n_attitudes,
                "rho": self.rho,
            },
            arrays={
                "type_dist": self.type_dist,
                "attitude_prior": self.attitude_prior,
                "rating_mean": self.rating_mean,
                "rating_var": self.rating_var,
                "rating_multinomial": self.rating_multinomial,
            },
        )

    @classmethod
    def load(cls, path) -> "McvqModel":
        meta, arrays = load_container(path, expected_kind="mcvq")
        model = cls(
            arrays["type_dist"],
            arrays["attitude_prior"],
            arrays["rating_mean"],
            arrays["rating_var"],
            arrays["rating_multinomial"],
        )
        if model.rho != meta["rho"]:
            raise ValueError("model file header disagrees with array shapes")
        return model


@dataclass(frozen=True)
class UserState:
    """Immutable per-user inference state.

    ``log_rows`` holds the unnormalized log attitude weights (log prior
    plus the log bracket factors of every observed rating); the normalized
    ``attitude_posterior`` is derived from it. Updates return new states.
    """

    ratings: Mapping[int, int]
    log_rows: np.ndarray
    attitude_posterior: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        object.__setattr__(self, "ratings", dict(self.ratings))
        log_rows = np.array(self.log_rows, dtype=np.float64, copy=True)
        log_rows.flags.writeable = False
        object.__setattr__(self, "log_rows", log_rows)
        if self.attitude_posterior is None:
            object.__setattr__(self, "attitude_posterior", _normalize_log_rows(log_rows))
        else:
            post = _freeze(self.attitude_posterior)
            _check_rows("attitude_posterior", post)
            object.__setattr__(self, "attitude_posterior", post)

    @property
    def observed(self) -> frozenset:
        return frozenset(self.ratings)


def _normalize_log_rows(log_rows: np.ndarray) -> np.ndarray:
    peak = log_rows.max(axis=1, keepdims=True)
    dead = ~np.isfinite(peak[:, 0])
    if np.any(dead):
        raise DegenerateAttitudeError(int(np.flatnonzero(dead)[0]))
    w = np.exp(log_rows - peak)
    out = w / w.sum(axis=1, keepdims=True)
    out.flags.writeable = False
    return out


def fresh_state(m: McvqModel) -> UserState:
    """State of a user with no observed ratings: posterior equals the prior."""
    return UserState(ratings={}, log_rows=np.log(m.attitude_prior))


def _validate_observation(m: McvqModel, item: int, rating: int) -> None:
    if not 0 <= item < m.n_items:
        raise ValueError(f"item {item} out of range for {m.n_items} items")
    if not 1 <= rating <= m.rho:
        raise ValueError(f"rating {rating} outside scale 1..{m.rho}")


def _log_bracket(m: McvqModel, item: int, rating: int, floor: float) -> np.ndarray:
    """Log of the (K, L) bracket factor for one observation.

    Multinomial entries are floored at ``floor`` before entering products
    so a single zero-likelihood cell cannot annihilate an attitude row.
    """
    theta = np.maximum(m.rating_multinomial[item, :, :, rating - 1], floor)  # (K, L)
    mix = (m.attitude_prior * theta).sum(axis=1)  # (K,)
    weighted = m.type_dist[item] * mix
    cross = weighted.sum() - weighted  # (K,): mass from the other quantizers
    bracket = cross[:, None] + m.type_dist[item][:, None] * theta
    if np.any(bracket <= 0.0):
        # only reachable with floor == 0; report the first dead quantizer
        dead = np.flatnonzero((bracket <= 0.0).all(axis=1))
        k = int(dead[0]) if dead.size else int(np.argwhere(bracket <= 0.0)[0, 0])
        raise DegenerateAttitudeError(k)
    return np.log(bracket)


def update_attitudes(
    m: McvqModel,
    ratings: Mapping[int, int],
    convention: str = "fixed_prior",
    floor: float = PROB_FLOOR,
    max_refinements: int = 50,
    refine_tol: float = 1e-10,
) -> UserState:
    """Condition the attitude distributions on a batch of observed ratings.

    With the default fixed-prior convention the result is a product of
    per-observation bracket factors and is independent of observation
    order. ``convention="fixed_point"`` instead re-mixes the cross terms
    with the current posterior and iterates to a fixed point.
    """
    for item, rating in ratings.items():
        _validate_observation(m, item, rating)
    if convention == "fixed_prior":
        log_rows = np.log(m.attitude_prior).copy()
        for item, rating in ratings.items():
            log_rows += _log_bracket(m, item, rating, floor)
        return UserState(ratings=ratings, log_rows=log_rows)
    if convention != "fixed_point":
        raise ValueError(f"unknown convention {convention!r}")
    post = m.attitude_prior.copy()
    log_rows = np.log(m.attitude_prior)
    for _ in range(max_refinements):
        log_rows = np.log(m.attitude_prior).copy()
        for item, rating in ratings.items():
            theta = np.maximum(m.rating_multinomial[item, :, :, rating - 1], floor)
            mix = (post * theta).sum(axis=1)
            weighted = m.type_dist[item] * mix
            cross = weighted.sum() - weighted
            log_rows += np.log(cross[:, None] + m.type_dist[item][:, None] * theta)
        new_post = _normalize_log_rows(log_rows)
        if np.abs(new_post - post).max() < refine_tol:
            post = new_post
            break
        post = np.asarray(new_post)
    return UserState(ratings=ratings, log_rows=log_rows)


def incremental_update(
    m: McvqModel, u: UserState, item: int, rating: int, floor: float = PROB_FLOOR
) -> UserState:
    """Fold one new observation into ``u`` (fixed-prior convention).

    Multiplies a single bracket factor into each quantizer's unnormalized
    log row; equals the batch update over the union of observations.
    """
    _validate_observation(m, item, rating)
    if item in u.ratings:
        raise ValueError(f"item {item} already observed in this state")
    log_rows = u.log_rows + _log_bracket(m, item, rating, floor)
    ratings = dict(u.ratings)
    ratings[item] = rating
    return UserState(ratings=ratings, log_rows=log_rows)


@dataclass(frozen=True)
class RatingPosterior:
    """Predictive rating distribution and its mean."""

    probs: np.ndarray
    mean: float

    @classmethod
    def from_probs(cls, probs: np.ndarray) -> "RatingPosterior":
        probs = _freeze(probs)
        rho = probs.shape[0]
        mean = float(probs @ np.arange(1, rho + 1))
        return cls(probs=probs, mean=mean)


def rating_posterior(m: McvqModel, u: UserState, item: int) -> RatingPosterior:
    """Predictive distribution of the user's rating for an unobserved item."""
    if not 0 <= item < m.n_items:
        raise ValueError(f"item {item} out of range for {m.n_items} items")
    if item in u.ratings:
        raise ValueError(f"item {item} is already observed; its rating is known")
    probs = np.einsum("k,kl,klr->r", m.type_dist[item], u.attitude_posterior, m.rating_multinomial[item])
    return RatingPosterior.from_probs(probs)


def posterior_after_response(
    m: McvqModel, u: UserState, query: int, response: int, target: int, floor: float = PROB_FLOOR
) -> RatingPosterior:
    """Predictive distribution for ``target`` after observing ``(query, response)``."""
    return rating_posterior(m, incremental_update(m, u, query, response, floor), target)


def total_probability_residual(
    m: McvqModel, u: UserState, query: int, target: int, floor: float = PROB_FLOOR
) -> float:
    """Max-abs residual of the fixed-prior total-probability identity.

    Mixing the post-response target predictions over the query response,
    where the response weight for quantizer ``k`` is the bracket
    normalizer ``Z_k(r) = sum_l P_u(A_k = l) B[k, l]`` (the prediction
    computed under the same fixed-prior convention as the update),
    recovers the current target prediction exactly:

        sum_r Z_k(r) * P_u^{(q, r)}(A_k = l) = P_u(A_k = l)

    for every ``(k, l)``, hence for the composed rating posterior. At a
    fresh state ``Z_k`` coincides with the plain predictive for every k.
    """
    if query == target:
        raise ValueError("query and target must differ")
    base = rating_posterior(m, u, target).probs
    mixed = np.zeros((m.n_types, m.n_attitudes))
    for response in range(1, m.rho + 1):
        bracket = np.exp(_log_bracket(m, query, response, floor))  # (K, L)
        z = (u.attitude_posterior * bracket).sum(axis=1)  # (K,)
        updated = u.attitude_posterior * bracket / z[:, None]
        mixed += z[:, None] * updated
    recomposed = np.einsum("k,kl,klr->r", m.type_dist[target], mixed, m.rating_multinomial[target])
    return float(np.abs(recomposed - base).max())
