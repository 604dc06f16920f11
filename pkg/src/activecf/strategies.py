"""Query selection over a shared engine interface.

The active half of the recommender: given a user's current state, which
unobserved item is most worth asking about? The value of a belief state
is the best posterior mean rating among the items still on the table;
the expected value of information (EVOI) of a query is the expected best
value after seeing its response minus the value now. A query is only
worth asking while that difference clears the configured query cost.

Two baselines frame the comparison: asking about the item whose training
rating histogram has the greatest entropy, and asking uniformly at
random.

The inner post-response maximum excludes the query itself (once
answered, an item is no longer a recommendation candidate), while the
current-value maximum includes it. A consequence worth knowing: the EVOI
of the currently best item can be negative, since answering it removes
it from the table.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .bounds import PRUNE_PER_RESPONSE, BoundTables, prune_targets
from .data import RatingsDataset
from .engines import RatingEngine

KIND_EVOI = "evoi"
KIND_ENTROPY = "entropy"
KIND_RANDOM = "random"
STRATEGY_KINDS = (KIND_EVOI, KIND_ENTROPY, KIND_RANDOM)


@dataclass(frozen=True)
class StrategyConfig:
    """How to pick the next query.

    ``candidates`` restricts which items may be asked about (a prototype
    net, say); value maximization still runs over the full target pool.
    ``bound_tables`` enables target pruning inside the EVOI scan.
    """

    kind: str = KIND_EVOI
    evoi_threshold: float = 0.0
    candidates: np.ndarray | None = None
    bound_tables: BoundTables | None = None
    prune_mode: str = PRUNE_PER_RESPONSE
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in STRATEGY_KINDS:
            raise ValueError(f"unknown strategy kind {self.kind!r}")
        if self.evoi_threshold < 0.0:
            raise ValueError("evoi_threshold must be >= 0")
        if self.candidates is not None:
            object.__setattr__(
                self, "candidates", np.unique(np.asarray(self.candidates, dtype=np.int64))
            )


class BeliefValue(NamedTuple):
    value: float
    item: int


class QueryDecision(NamedTuple):
    """Outcome of one selection step.

    ``scores`` aligns with ``candidates`` (ascending item order);
    ``chosen_query`` is None exactly when ``stop`` is set.
    ``pruned_targets`` counts targets skipped across the whole scan.
    """

    chosen_query: int | None
    candidates: np.ndarray
    scores: np.ndarray
    stop: bool
    pruned_targets: int


def unobserved_items(engine: RatingEngine, state) -> np.ndarray:
    mask = np.ones(engine.n_items, dtype=bool)
    for item in state.observed:
        mask[item] = False
    return np.flatnonzero(mask).astype(np.int64)


def belief_value(engine: RatingEngine, state, candidates: np.ndarray) -> BeliefValue:
    """Best attainable posterior mean and the item attaining it.

    Ties go to the lowest item index. Candidates must be unobserved.
    """
    candidates = np.asarray(candidates, dtype=np.int64)
    if candidates.size == 0:
        raise ValueError("no candidates to value")
    seen = [int(c) for c in candidates if int(c) in state.observed]
    if seen:
        raise ValueError(f"candidates already observed: {sorted(seen)}")
    order = np.argsort(candidates, kind="stable")
    means = engine.posterior_means(state, candidates[order])
    best = int(np.argmax(means))
    return BeliefValue(value=float(means[best]), item=int(candidates[order][best]))


def recommend(engine: RatingEngine, state, candidates: np.ndarray) -> int:
    return belief_value(engine, state, candidates).item


def _evoi_detail(
    engine: RatingEngine,
    state,
    query: int,
    targets: np.ndarray,
    tables: BoundTables | None,
    prune_mode: str,
) -> tuple[float, int]:
    inner = targets[targets != query]
    if inner.size == 0:
        raise ValueError("need at least one non-query target")
    current = belief_value(engine, state, targets).value
    predictive = engine.predictive(state, query)
    n_pruned = 0
    survivors = inner
    if tables is not None:
        means = engine.posterior_means(state, inner)
        mask = prune_targets(
            means, inner, query, tables.mean_change,
            response_probs=predictive, mode=prune_mode,
        )
        survivors = inner[~mask]
        n_pruned = int(mask.sum())
    expected = 0.0
    for r in range(1, engine.rho + 1):
        p_r = predictive[r - 1]
        if p_r <= 0.0:
            continue
        after = engine.update(state, query, r)
        expected += p_r * belief_value(engine, after, survivors).value
    return expected - current, n_pruned


def evoi(
    engine: RatingEngine,
    state,
    query: int,
    targets: np.ndarray | None = None,
    tables: BoundTables | None = None,
    prune_mode: str = PRUNE_PER_RESPONSE,
) -> float:
    """Expected value of information of asking ``query``.

    ``targets`` is the pool items are recommended from (defaults to all
    unobserved items; the query may be a member). Can be negative for
    the current argmax item, and only for it under a coherent model.
    """
    if targets is None:
        targets = unobserved_items(engine, state)
    targets = np.asarray(targets, dtype=np.int64)
    value, _ = _evoi_detail(engine, state, query, targets, tables, prune_mode)
    return value


def rating_histograms(d: RatingsDataset) -> np.ndarray:
    """Raw per-item rating counts, shape (n_items, rho)."""
    counts = np.zeros((d.n_items, d.rho), dtype=np.int64)
    np.add.at(counts, (d.items, d.ratings - 1), 1)
    return counts


def entropy_scores(histograms: np.ndarray) -> np.ndarray:
    """Shannon entropy of each item's add-1-smoothed rating histogram."""
    smoothed = np.asarray(histograms, dtype=np.float64) + 1.0
    probs = smoothed / smoothed.sum(axis=1, keepdims=True)
    return -(probs * np.log(probs)).sum(axis=1)


def select_query(
    engine: RatingEngine,
    state,
    cfg: StrategyConfig,
    dataset: RatingsDataset | None = None,
    histograms: np.ndarray | None = None,
    targets: np.ndarray | None = None,
    rng: np.random.Generator | None = None,
) -> QueryDecision:
    """Pick the next query under the configured strategy.

    Queryable items are the unobserved members of ``cfg.candidates``
    (all unobserved items when unset); ``targets`` is the pool value
    maximization runs over, defaulting to all unobserved items. The
    entropy baseline needs ``dataset`` or precomputed ``histograms``.
    Ties break to the lowest item index throughout.
    """
    pool = unobserved_items(engine, state) if targets is None else np.asarray(targets, dtype=np.int64)
    if cfg.candidates is None:
        candidates = pool.copy()
    else:
        candidates = np.intersect1d(cfg.candidates, pool)
    candidates = np.sort(candidates)
    if candidates.size == 0:
        raise ValueError("no queryable candidates")
    if cfg.kind == KIND_EVOI:
        scores = np.empty(candidates.size)
        pruned_total = 0
        for i, q in enumerate(candidates):
            scores[i], n_pruned = _evoi_detail(
                engine, state, int(q), pool, cfg.bound_tables, cfg.prune_mode
            )
            pruned_total += n_pruned
        best = int(np.argmax(scores))
        if scores[best] < cfg.evoi_threshold:
            return QueryDecision(None, candidates, scores, True, pruned_total)
        return QueryDecision(int(candidates[best]), candidates, scores, False, pruned_total)
    if cfg.kind == KIND_ENTROPY:
        if histograms is None:
            if dataset is None:
                raise ValueError("entropy strategy needs a dataset or histograms")
            histograms = rating_histograms(dataset)
        scores = entropy_scores(np.asarray(histograms))[candidates]
        best = int(np.argmax(scores))
        return QueryDecision(int(candidates[best]), candidates, scores, False, 0)
    # random
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    choice = int(rng.choice(candidates))
    scores = np.full(candidates.size, 1.0 / candidates.size)
    return QueryDecision(choice, candidates, scores, False, 0)
