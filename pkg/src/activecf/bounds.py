"""Worst-case response bounds and target pruning for query selection.

Selecting a query by expected value of information prices every
(query, response, target) triple. Most targets cannot overtake the
current best item under any response, and that can be certified offline,
before any user shows up:

* ``attitude_shift_bound``: how far one response to query ``q`` can move
  a single attitude cell, maximized over every attitude distribution the
  user could currently hold.
* ``mean_change_bound_lp``: given those per-cell shift budgets, a linear
  program for the largest possible change in the posterior mean rating
  of a target item.
* ``prune_targets``: the dominance test that drops targets whose mean
  cannot rise above what the current best item keeps under the same
  response, so expected-value computations skip them.

Both bound families are user independent (they quantify over the user's
attitude state), so the tables precomputed here are computed once per
model and shipped to interactive sessions.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import simplex
from .container import load_container, save_container
from .mcvq import PROB_FLOOR, McvqModel

BOUNDS_FILE_VERSION = 1

PRUNE_PER_RESPONSE = "per_response"
PRUNE_EXPECTED = "expected"


def _floored_theta(m: McvqModel, floor: float) -> np.ndarray:
    return np.maximum(m.rating_multinomial, floor)


def _pairwise_shift(a: np.ndarray) -> np.ndarray:
    """Extremal attitude shift for each (cell, contrast-cell) pair.

    For bracket weights ``A = F + H_l`` and ``B = F + H_lx`` the realized
    change of attitude ``l`` under a two-point distribution with mass
    ``p`` on ``l`` and ``1 - p`` on ``lx`` is ``p - p * A / (B + (A - B) p)``;
    optimizing over ``p`` puts the extremum at ``p = sqrt(B) / (sqrt(A) +
    sqrt(B))`` with value ``(sqrt(B) - sqrt(A)) / (sqrt(A) + sqrt(B))``.
    Because the remaining mass is best concentrated on a single contrast
    attitude (the normalizer is linear in it), the worst case over the
    whole simplex is the worst two-point case, covering increase and
    decrease at once through the absolute value.
    """
    root = np.sqrt(a)
    num = np.abs(root[..., :, None] - root[..., None, :])
    den = root[..., :, None] + root[..., None, :]
    with np.errstate(invalid="ignore"):
        shift = np.where(den > 0.0, num / den, 0.0)
    return shift


def attitude_shift_table(m: McvqModel, floor: float = PROB_FLOOR) -> np.ndarray:
    """Worst-case attitude shifts, shape (M, rho, K, L).

    Entry ``[q, r-1, k, l]`` bounds ``|P'(A_k = l) - P(A_k = l)|`` after
    observing response ``r`` to query ``q``, over every attitude
    distribution; the cross-quantizer mass uses the fixed attitude prior,
    matching the update convention.
    """
    theta = _floored_theta(m, floor)  # (M, K, L, rho)
    prior_mix = np.einsum("kl,jklr->jkr", m.attitude_prior, theta)
    weighted = m.type_dist[:, :, None] * prior_mix  # (M, K, rho)
    cross = weighted.sum(axis=1, keepdims=True) - weighted  # F, (M, K, rho)
    h = m.type_dist[:, :, None, None] * theta  # (M, K, L, rho)
    a = cross.transpose(0, 2, 1)[:, :, :, None] + h.transpose(0, 3, 1, 2)  # (M, rho, K, L)
    return _pairwise_shift(a).max(axis=-1)


def attitude_shift_bound(
    m: McvqModel, query: int, response: int, quantizer: int, attitude: int, floor: float = PROB_FLOOR
) -> float:
    """Scalar view of :func:`attitude_shift_table` for one cell."""
    table = attitude_shift_table(m, floor)
    return float(table[query, response - 1, quantizer, attitude])


def attitude_shift_bound_numeric(
    m: McvqModel,
    query: int,
    response: int,
    quantizer: int,
    attitude: int,
    floor: float = PROB_FLOOR,
    n_starts: int = 32,
    seed: int = 0,
    n_iters: int = 200,
) -> float:
    """Direct numeric maximization of the realized attitude shift.

    Fallback and cross-check for the closed form: ternary-searches the
    two-point distributions against every contrast attitude and polishes
    the best of ``n_starts`` random simplex points by projected ascent.
    """
    theta = _floored_theta(m, floor)[query, :, :, response - 1]  # (K, L)
    mix = (m.attitude_prior * theta).sum(axis=1)
    weighted = m.type_dist[query] * mix
    f = weighted.sum() - weighted[quantizer]
    bracket = f + m.type_dist[query, quantizer] * theta[quantizer]  # (L,)
    n_att = bracket.shape[0]

    def shift(dist: np.ndarray) -> float:
        z = dist @ bracket
        if z <= 0.0:
            return 0.0
        return abs(dist[attitude] * bracket[attitude] / z - dist[attitude])

    best = 0.0
    for lx in range(n_att):
        if lx == attitude:
            continue
        lo, hi = 0.0, 1.0
        for _ in range(100):
            m1, m2 = lo + (hi - lo) / 3, hi - (hi - lo) / 3
            d1, d2 = np.zeros(n_att), np.zeros(n_att)
            d1[attitude], d1[lx] = m1, 1 - m1
            d2[attitude], d2[lx] = m2, 1 - m2
            if shift(d1) < shift(d2):
                lo = m1
            else:
                hi = m2
        d = np.zeros(n_att)
        d[attitude], d[lx] = (lo + hi) / 2, 1 - (lo + hi) / 2
        best = max(best, shift(d))
    rng = np.random.default_rng(seed)
    for _ in range(n_starts):
        dist = rng.dirichlet(np.ones(n_att))
        step = 0.25
        value = shift(dist)
        for _ in range(n_iters):
            grad = np.zeros(n_att)
            for i in range(n_att):
                probe = dist.copy()
                probe[i] += 1e-6
                probe /= probe.sum()
                grad[i] = (shift(probe) - value) / 1e-6
            trial = np.clip(dist + step * grad, 0.0, None)
            total = trial.sum()
            if total <= 0.0:
                break
            trial /= total
            trial_value = shift(trial)
            if trial_value > value:
                dist, value = trial, trial_value
            else:
                step *= 0.5
                if step < 1e-9:
                    break
        best = max(best, value)
    return float(min(best, 1.0))


@dataclass(frozen=True)
class LpSpec:
    """One mean-change linear program, in the explicit (p, q, delta) form.

    Variables: the current predictive ``p`` (rho), the post-response
    predictive ``q`` (rho), and the shifted attitude changes ``delta``
    (K*L, boxed by the attitude shift bounds). Constraint accounting,
    matching the sizes the formulation advertises: the delta box (2KL),
    non-negativity and unit caps on p and q (4 rho), the per-rating
    balance rows tying q - p to delta (rho), and the two normalization
    rows, i.e. ``2KL + 5 rho + 2`` without the zero-sum tightening and
    ``K`` more rows with it. The solver drops the redundant unit caps on
    p and q when building its tableau; counts describe the formulation.
    """

    objective: np.ndarray
    a_eq: np.ndarray
    b_eq: np.ndarray
    upper: np.ndarray
    n_variables: int
    n_constraints: int
    tighten: bool


def build_mean_change_lp(
    m: McvqModel, target: int, query: int, response: int, delta_kl: np.ndarray, tighten: bool = False
) -> LpSpec:
    """Assemble the LP whose optimum bounds the target's mean-rating change.

    ``delta_kl`` carries the per-cell attitude shift budgets for
    ``(query, response)``. The program maximizes ``sum_r r (q_r - p_r)``
    subject to both predictives being distributions and the per-rating
    balance ``q_r - p_r = sum_kl type_dist[target, k] theta[target, k, l, r]
    delta_kl``; ``tighten`` adds the per-quantizer zero-sum rows that the
    realized update always satisfies.
    """
    if target == query:
        raise ValueError("target and query must differ")
    n_types, n_att = m.n_types, m.n_attitudes
    rho = m.rho
    delta_kl = np.asarray(delta_kl, dtype=np.float64)
    if delta_kl.shape != (n_types, n_att):
        raise ValueError(f"delta_kl must have shape ({n_types}, {n_att})")
    coeff = (m.type_dist[target][:, None, None] * m.rating_multinomial[target]).reshape(-1, rho)  # (KL, rho)
    n_cells = n_types * n_att
    n_vars = 2 * rho + n_cells
    rows = rho + 2 + (n_types if tighten else 0)
    a_eq = np.zeros((rows, n_vars))
    b_eq = np.zeros(rows)
    a_eq[0, :rho] = 1.0
    b_eq[0] = 1.0
    a_eq[1, rho : 2 * rho] = 1.0
    b_eq[1] = 1.0
    flat_delta = delta_kl.ravel()
    for r in range(rho):
        row = 2 + r
        a_eq[row, r] = -1.0
        a_eq[row, rho + r] = 1.0
        a_eq[row, 2 * rho :] = -coeff[:, r]  # shifted variable d = delta + Delta
        b_eq[row] = -coeff[:, r] @ flat_delta
    if tighten:
        for k in range(n_types):
            row = rho + 2 + k
            a_eq[row, 2 * rho + k * n_att : 2 * rho + (k + 1) * n_att] = 1.0
            b_eq[row] = flat_delta[k * n_att : (k + 1) * n_att].sum()
    upper = np.concatenate([np.full(2 * rho, np.inf), 2.0 * flat_delta])
    objective = np.concatenate([np.arange(1, rho + 1, dtype=np.float64), -np.arange(1, rho + 1, dtype=np.float64), np.zeros(n_cells)])
    return LpSpec(
        objective=objective,
        a_eq=a_eq,
        b_eq=b_eq,
        upper=upper,
        n_variables=n_vars,
        n_constraints=2 * n_cells + 5 * rho + 2 + (n_types if tighten else 0),
        tighten=tighten,
    )


def solve_mean_change_lp(spec: LpSpec) -> float:
    """Optimum of a built program; clamps the tiny negative float residue."""
    res = simplex.solve(spec.objective, spec.a_eq, spec.b_eq, upper=spec.upper)
    return max(0.0, -res.objective)


def mean_change_bound_lp(
    m: McvqModel, target: int, query: int, response: int, delta_kl: np.ndarray, tighten: bool = False
) -> float:
    """Largest possible posterior-mean change of ``target`` in one response."""
    return solve_mean_change_lp(build_mean_change_lp(m, target, query, response, delta_kl, tighten))


def mean_change_bound_iterative(
    m: McvqModel, target: int, query: int, response: int, delta_kl: np.ndarray
) -> float:
    """Greedy mass-exchange upper bound on the mean change, O(K L rho).

    Relaxes the LP to its essential structure: the mean change equals
    ``sum_kl w_kl mu_kl delta_kl`` with weights ``w_kl = type_dist[target, k]``,
    per-cell rating means ``mu_kl``, the box ``|delta| <= Delta`` and the
    aggregate zero-sum ``sum_kl w_kl delta_kl = 0`` implied by both
    predictives normalizing. In ``u = w * delta`` coordinates that is a
    balanced transport problem solved exactly by pairing the highest-mean
    cells (pushed up) with the lowest-mean cells (pushed down), two
    pointers over the sorted cells. Dropping the predictive-simplex
    constraints can only enlarge the feasible set, so the result is never
    below the LP optimum; it never exceeds the coarse budget
    ``sum_k w_k sum_l Delta_kl (rho - 1)`` either.
    """
    if target == query:
        raise ValueError("target and query must differ")
    levels = np.arange(1, m.rho + 1, dtype=np.float64)
    mu = (m.rating_multinomial[target] @ levels).ravel()  # (KL,)
    cap = (m.type_dist[target][:, None] * np.asarray(delta_kl, dtype=np.float64)).ravel()
    order = np.argsort(-mu, kind="stable")
    mu_sorted = mu[order]
    cap_sorted = cap[order]
    lo, hi = 0, mu_sorted.size - 1
    total = 0.0
    take_hi = cap_sorted[lo]
    take_lo = cap_sorted[hi]
    while lo < hi and mu_sorted[lo] > mu_sorted[hi]:
        moved = min(take_hi, take_lo)
        total += moved * (mu_sorted[lo] - mu_sorted[hi])
        take_hi -= moved
        take_lo -= moved
        if take_hi <= 0.0:
            lo += 1
            take_hi = cap_sorted[lo] if lo < mu_sorted.size else 0.0
        if take_lo <= 0.0:
            hi -= 1
            take_lo = cap_sorted[hi] if hi >= 0 else 0.0
    return float(total)


class BoundTables(NamedTuple):
    """Precomputed per-model bound tables.

    ``attitude_shift``: (M, rho, K, L), worst-case per-cell shifts.
    ``mean_change``: (M, M, rho), entry ``[target, query, r-1]``; the
    diagonal ``target == query`` is zero and never consulted.
    """

    attitude_shift: np.ndarray
    mean_change: np.ndarray
    tighten: bool


def precompute_bound_tables(
    m: McvqModel, tighten: bool = False, floor: float = PROB_FLOOR, threads: int = 1
) -> BoundTables:
    """Build both bound tables for every (target, query, response) triple.

    Deterministic for a given model; the optional thread pool only chunks
    the target loop and gathers results in order.
    """
    shift = attitude_shift_table(m, floor)
    n_items, rho = m.n_items, m.rho
    mean_change = np.zeros((n_items, n_items, rho))

    def fill(target: int) -> np.ndarray:
        out = np.zeros((n_items, rho))
        for query in range(n_items):
            if query == target:
                continue
            for r in range(rho):
                out[query, r] = mean_change_bound_lp(m, target, query, r + 1, shift[query, r], tighten)
        return out

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            for target, block in enumerate(pool.map(fill, range(n_items))):
                mean_change[target] = block
    else:
        for target in range(n_items):
            mean_change[target] = fill(target)
    return BoundTables(attitude_shift=shift, mean_change=mean_change, tighten=tighten)


def save_bound_tables(path: str | Path, tables: BoundTables) -> None:
    m_items, rho, n_types, n_att = tables.attitude_shift.shape
    save_container(
        path,
        kind="bound_tables",
        meta={
            "version": BOUNDS_FILE_VERSION,
            "n_items": m_items,
            "rho": rho,
            "n_types": n_types,
            "n_attitudes": n_att,
            "tighten": bool(tables.tighten),
            "shift_policy": "closed_form",
        },
        arrays={"attitude_shift": tables.attitude_shift, "mean_change": tables.mean_change},
    )


def load_bound_tables(path: str | Path) -> BoundTables:
    meta, arrays = load_container(path, expected_kind="bound_tables")
    return BoundTables(
        attitude_shift=arrays["attitude_shift"],
        mean_change=arrays["mean_change"],
        tighten=bool(meta["tighten"]),
    )


def prune_targets(
    target_means: np.ndarray,
    targets: np.ndarray,
    query: int,
    mean_bounds: np.ndarray,
    response_probs: np.ndarray | None = None,
    mode: str = PRUNE_PER_RESPONSE,
) -> np.ndarray:
    """Mark targets that provably stay below the current best item.

    ``target_means`` are the current posterior means aligned with
    ``targets`` (item ids, must exclude ``query``); ``mean_bounds`` is the
    (M, M, rho) table. The dominance test compares the best item's worst
    retained value against each target's best attainable value, using
    per-response extremes (sound: a pruned target can never attain the
    post-response maximum) or the response-probability expectation
    (the reported variant; requires ``response_probs``). Ties are kept,
    and the best item itself is never pruned.

    Returns a boolean mask over ``targets``.
    """
    targets = np.asarray(targets, dtype=np.int64)
    target_means = np.asarray(target_means, dtype=np.float64)
    if targets.shape != target_means.shape:
        raise ValueError("targets and target_means must align")
    if np.any(targets == query):
        raise ValueError("the query cannot be its own target")
    if targets.size == 0:
        return np.zeros(0, dtype=bool)
    best_value = target_means.max()
    best_ix = int(np.flatnonzero(target_means == best_value)[np.argmin(targets[target_means == best_value])])
    j_star = int(targets[best_ix])
    deltas = mean_bounds[targets, query, :]  # (T, rho)
    if mode == PRUNE_PER_RESPONSE:
        retained = best_value - deltas[best_ix].max()
        attainable = target_means + deltas.max(axis=1)
    elif mode == PRUNE_EXPECTED:
        if response_probs is None:
            raise ValueError("expected mode needs the query's response probabilities")
        response_probs = np.asarray(response_probs, dtype=np.float64)
        expected = deltas @ response_probs
        retained = best_value - expected[best_ix]
        attainable = target_means + expected
    else:
        raise ValueError(f"unknown pruning mode {mode!r}")
    pruned = retained > attainable
    pruned[targets == j_star] = False
    return pruned
