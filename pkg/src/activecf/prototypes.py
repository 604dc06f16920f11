"""Prototype query sets: spaced subsets of items standing in for all queries.

Scanning every unobserved item for the best query is wasteful when many
items would teach the model nearly the same thing. Two items are
interchangeable as queries when their signatures are close, where the
signature stacks everything the response likelihood depends on:
``v_q[(k, l, r)] = P(T_q = k) * theta[q, k, l, r]``, flattened in C
order with k slowest and r fastest. Greedily walking items from most to
least rated and keeping only those at L1 distance at least beta from
every keeper yields a beta-spaced net; the realized covering radius
epsilon (how far the worst item is from its nearest keeper) is what the
value-difference heuristic ``12 * epsilon`` is quoted against.

That constant is a reported heuristic, not a certificate; an audit
harness measures how observed value differences compare to it.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .container import load_json, save_json
from .data import RatingsDataset
from .mcvq import McvqModel, update_attitudes, rating_posterior

PROTOTYPES_FILE_FORMAT = "activecf-prototypes"
PROTOTYPES_FILE_VERSION = 1


def signature(m: McvqModel, q: int) -> np.ndarray:
    """Query signature of item ``q``, length K*L*rho."""
    return (m.type_dist[q][:, None, None] * m.rating_multinomial[q]).ravel()


def signature_matrix(m: McvqModel) -> np.ndarray:
    """All signatures stacked, shape (n_items, K*L*rho)."""
    return (m.type_dist[:, :, None, None] * m.rating_multinomial).reshape(m.n_items, -1)


def l1_distance(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"signature length mismatch: {a.shape} vs {b.shape}")
    return float(np.abs(a - b).sum())


@dataclass(frozen=True)
class PrototypeSet:
    """A beta-spaced subset of items, in the order the greedy kept them.

    ``epsilon`` is the realized covering radius: the largest distance
    from any item to its nearest member. Downstream value-difference
    reporting uses this, not beta, since actual coverage is what the
    heuristic depends on.
    """

    members: np.ndarray
    beta: float
    epsilon: float
    counts: np.ndarray  # per-item training rating counts used for ordering

    def __post_init__(self) -> None:
        object.__setattr__(self, "members", np.asarray(self.members, dtype=np.int64))
        object.__setattr__(self, "counts", np.asarray(self.counts, dtype=np.int64))
        if self.members.size == 0:
            raise ValueError("a prototype set needs at least one member")
        if np.unique(self.members).size != self.members.size:
            raise ValueError("duplicate members")
        if self.beta < 0.0 or self.epsilon < 0.0:
            raise ValueError("beta and epsilon must be >= 0")

    @property
    def n_members(self) -> int:
        return int(self.members.size)

    def to_doc(self) -> dict:
        return {
            "format": PROTOTYPES_FILE_FORMAT,
            "version": PROTOTYPES_FILE_VERSION,
            "beta": float(self.beta),
            "epsilon": float(self.epsilon),
            "members": [int(i) for i in self.members],
            "counts": [int(c) for c in self.counts],
        }

    def save(self, path: str | Path) -> None:
        save_json(path, self.to_doc())

    @classmethod
    def load(cls, path: str | Path) -> "PrototypeSet":
        doc = load_json(path, PROTOTYPES_FILE_FORMAT, max_version=PROTOTYPES_FILE_VERSION)
        return cls(
            members=np.asarray(doc["members"], dtype=np.int64),
            beta=float(doc["beta"]),
            epsilon=float(doc["epsilon"]),
            counts=np.asarray(doc["counts"], dtype=np.int64),
        )


def _popularity_order(counts: np.ndarray) -> np.ndarray:
    # descending count, ties by ascending item index
    return np.lexsort((np.arange(counts.size), -counts))


def covering_radius(signatures: np.ndarray, members: np.ndarray) -> float:
    diffs = np.abs(signatures[:, None, :] - signatures[members][None, :, :]).sum(axis=2)
    return float(diffs.min(axis=1).max())


def select_prototypes(m: McvqModel, d: RatingsDataset, beta: float) -> PrototypeSet:
    """Greedy beta-net over signatures in most-rated-first order.

    An item joins when its distance to every current member is at least
    beta, so beta = 0 keeps everything and a beta above the signature
    diameter keeps only the most-rated item.
    """
    if beta < 0.0:
        raise ValueError("beta must be >= 0")
    if d.n_items != m.n_items:
        raise ValueError("dataset and model disagree on item count")
    sigs = signature_matrix(m)
    counts = d.counts_per_item()
    members: list[int] = []
    for item in _popularity_order(counts):
        if not members:
            members.append(int(item))
            continue
        dist = np.abs(sigs[members] - sigs[item]).sum(axis=1).min()
        if dist >= beta:
            members.append(int(item))
    member_arr = np.asarray(members, dtype=np.int64)
    return PrototypeSet(
        members=member_arr,
        beta=float(beta),
        epsilon=covering_radius(sigs, member_arr),
        counts=counts,
    )


def beta_for_fraction(m: McvqModel, d: RatingsDataset, fraction: float) -> float:
    """Smallest candidate beta whose net retains about ``fraction`` of items.

    Member count is non-increasing in beta, so bisect the sorted unique
    pairwise distances and return the beta whose retention is closest to
    the target (ties to the larger net). fraction = 1 maps to beta 0.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must be in (0, 1]")
    sigs = signature_matrix(m)
    pair = np.abs(sigs[:, None, :] - sigs[None, :, :]).sum(axis=2)
    candidates = np.unique(pair)  # includes 0 from the diagonal
    target = fraction * m.n_items

    def count(beta: float) -> int:
        return select_prototypes(m, d, beta).n_members

    lo, hi = 0, candidates.size - 1  # count(candidates[lo]) = M, monotone down
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if count(float(candidates[mid])) >= target:
            lo = mid
        else:
            hi = mid
    below, above = float(candidates[lo]), float(candidates[hi])
    if abs(count(below) - target) <= abs(count(above) - target):
        return below
    return above


def evoi_difference_bound(epsilon: float, p_r: float | None = None) -> float:
    """Quoted value-difference heuristic for epsilon-close queries.

    Aggregated over responses the figure is ``12 * epsilon``; for a
    single response of probability ``p_r`` it is ``12 * epsilon / p_r``.
    An approximation by its own framing, audited rather than asserted;
    see :func:`audit_value_difference`.
    """
    if epsilon < 0.0:
        raise ValueError("epsilon must be >= 0")
    if p_r is None:
        return 12.0 * epsilon
    if p_r <= 0.0:
        raise ValueError("response probability must be positive")
    return 12.0 * epsilon / p_r


def audit_value_difference(
    m: McvqModel, n_states: int = 20, n_pairs: int = 40, seed: int = 0
) -> dict:
    """Measure observed expected-value differences against 12 * distance.

    Samples user states (random observation histories), query pairs, and
    targets; compares ``|E_r mean_j(after q) - E_r mean_j(after q')|``
    with the heuristic at the pair's actual signature distance. Returns
    max observed difference, max observed/bound ratio, and the violation
    count. Findings to report, not assertions to enforce.
    """
    rng = np.random.default_rng(seed)
    sigs = signature_matrix(m)
    max_observed = 0.0
    max_ratio = 0.0
    violations = 0
    checked = 0
    for _ in range(n_states):
        n_obs = int(rng.integers(0, max(1, m.n_items // 3)))
        obs_items = rng.permutation(m.n_items)[:n_obs]
        ratings = {int(i): int(rng.integers(1, m.rho + 1)) for i in obs_items}
        u = update_attitudes(m, ratings)
        free = np.setdiff1d(np.arange(m.n_items), obs_items)
        if free.size < 3:
            continue
        for _ in range(n_pairs):
            q, q2, j = (int(x) for x in rng.choice(free, size=3, replace=False))
            dist = float(np.abs(sigs[q] - sigs[q2]).sum())
            expected = {q: 0.0, q2: 0.0}
            for query in (q, q2):
                probs = rating_posterior(m, u, query).probs
                for r in range(1, m.rho + 1):
                    if probs[r - 1] <= 0.0:
                        continue
                    ratings_r = dict(ratings)
                    ratings_r[query] = r
                    u_r = update_attitudes(m, ratings_r)
                    expected[query] += probs[r - 1] * rating_posterior(m, u_r, j).mean
            observed = abs(expected[q] - expected[q2])
            bound = 12.0 * dist
            max_observed = max(max_observed, observed)
            if bound > 0.0:
                max_ratio = max(max_ratio, observed / bound)
            if observed > bound + 1e-12:
                violations += 1
            checked += 1
    return {
        "checked": checked,
        "max_observed_difference": max_observed,
        "max_ratio_vs_bound": max_ratio,
        "violations": violations,
    }
