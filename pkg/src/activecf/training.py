"""Model fitting: variational EM for the vector-quantizer model, exact EM
for the latent-class (naive Bayes) model.

The vector-quantizer fit is a mean-field style reconstruction. Each
iteration computes per-user attitude posteriors with the same fixed-prior
update the inference path uses, then per-observation responsibilities
over (type, attitude) cells, then closed-form weighted M-step updates
with Dirichlet smoothing and a variance floor. The trace records a
per-observation-normalized variational objective: the log normalizer of
each observation's responsibility plus the attitude posteriors' KL term
against the shared prior. It increases monotonically in practice, but
unlike the naive Bayes trace that is an empirical property of the
reconstruction, not a theorem, so callers get the trace to inspect.

Latent labels are only identified up to permutation; the align_* helpers
find the best relabeling against a reference model before any parameter
comparison.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass

import numpy as np

from .data import RatingsDataset
from .mcvq import PROB_FLOOR, McvqModel, gaussian_from_binned_moments, update_attitudes
from .naive_bayes import NaiveBayesModel


@dataclass(frozen=True)
class TrainConfig:
    """Shared fitting knobs.

    ``n_types`` doubles as the component count for the latent-class
    model, which has no attitude axis. ``tol`` stops early when the
    relative objective improvement falls below it; 0 runs all
    ``max_iters``.
    """

    n_types: int
    n_attitudes: int
    rho: int
    max_iters: int = 15
    tol: float = 0.0
    seed: int = 0
    smoothing: float = 0.1
    var_floor: float = 0.05
    n_restarts: int = 1
    init: str = "spectral"

    def __post_init__(self) -> None:
        for name in ("n_types", "n_attitudes", "rho", "max_iters", "n_restarts"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.tol < 0.0:
            raise ValueError("tol must be >= 0")
        if self.smoothing <= 0.0 or self.var_floor <= 0.0:
            raise ValueError("smoothing and var_floor must be positive")
        if self.init not in ("spectral", "random"):
            raise ValueError(f"unknown init {self.init!r}")


def _item_rating_moments(d: RatingsDataset) -> tuple[np.ndarray, np.ndarray]:
    # per-item mean and variance of observed ratings; unrated items fall
    # back to the global moments
    sums = np.zeros(d.n_items)
    sq = np.zeros(d.n_items)
    counts = d.counts_per_item().astype(np.float64)
    np.add.at(sums, d.items, d.ratings.astype(np.float64))
    np.add.at(sq, d.items, d.ratings.astype(np.float64) ** 2)
    g_mean = d.ratings.mean()
    g_var = max(d.ratings.var(), 0.05)
    with np.errstate(invalid="ignore", divide="ignore"):
        means = np.where(counts > 0, sums / np.maximum(counts, 1), g_mean)
        second = np.where(counts > 0, sq / np.maximum(counts, 1), g_var + g_mean**2)
    var = np.maximum(second - means**2, 0.05)
    return means, var


def _correlation_structure(d: RatingsDataset, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Cluster items by rating co-variation; estimate within-cluster polarity.

    Items driven by the same latent quantizer co-vary across users, with
    the sign telling whether two items are loved by the same attitude or
    by opposite ones. Clustering |correlation| groups items into
    quantizers; the leading eigenvector of each cluster's signed block
    orients items along the dominant attitude axis. Deterministic: seeds
    are chosen farthest-first by similarity, no randomness involved.
    """
    dense = d.to_dense().astype(np.float64)
    observed = dense > 0
    counts = np.maximum(observed.sum(axis=0), 1)
    means = dense.sum(axis=0) / counts
    centered = np.where(observed, dense - means, 0.0)
    norms = np.sqrt((centered**2).sum(axis=0))
    scale = np.where(norms > 0, norms, 1.0)
    corr = (centered / scale).T @ (centered / scale)
    np.fill_diagonal(corr, 0.0)
    sim = np.abs(corr)
    degree = sim.sum(axis=1)
    # seeds come from the well-connected items only: isolated items carry
    # no quantizer signal and would otherwise steal a cluster
    candidates = np.flatnonzero(degree >= 0.5 * degree.max())
    seeds = [int(candidates[np.argmax(degree[candidates])])]
    while len(seeds) < min(k, d.n_items):
        frontier = sim[np.ix_(candidates, seeds)].max(axis=1)
        frontier[np.isin(candidates, seeds)] = np.inf
        if np.isinf(frontier).all():
            break
        seeds.append(int(candidates[np.argmin(frontier)]))
    labels = np.argmax(sim[:, seeds], axis=1)
    labels[seeds] = np.arange(len(seeds))
    for _ in range(10):  # refine toward cluster-average similarity
        strength = np.stack(
            [sim[:, labels == c].mean(axis=1) if (labels == c).any() else np.zeros(d.n_items) for c in range(k)],
            axis=1,
        )
        new_labels = np.argmax(strength, axis=1)
        new_labels[seeds] = np.arange(len(seeds))
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    signs = np.zeros(d.n_items)
    for c in range(k):
        members = np.flatnonzero(labels == c)
        if members.size == 0:
            continue
        block = corr[np.ix_(members, members)]
        vals, vecs = np.linalg.eigh(block)
        lead = vecs[:, -1]
        if lead.sum() < 0:  # fix the arbitrary global flip for determinism
            lead = -lead
        signs[members] = np.sign(np.round(lead, 12))
    return labels, signs


def fit_mcvq(
    d: RatingsDataset, cfg: TrainConfig, convention: str = "fixed_prior"
) -> tuple[McvqModel, np.ndarray]:
    """Fit the vector-quantizer model; returns (model, objective trace).

    Runs ``cfg.n_restarts`` independently seeded fits and keeps the one
    whose final objective is highest; the landscape has genuine local
    optima (quantizers can swap roles partway), so single-start results
    vary in quality. The default init seeds quantizer membership from the
    item correlation structure, which lands far closer to the good basin
    than blind draws; ``init="random"`` keeps the blind Dirichlet start.
    """
    if d.n_obs == 0:
        raise ValueError("cannot fit an empty dataset")
    n_distinct = np.unique(d.ratings).size
    if cfg.n_types * cfg.n_attitudes > n_distinct:
        warnings.warn(
            f"{cfg.n_types}x{cfg.n_attitudes} cells exceed the {n_distinct} "
            "distinct ratings observed; cells may not be identifiable",
            stacklevel=2,
        )
    structure = _correlation_structure(d, cfg.n_types) if cfg.init == "spectral" else None
    best: tuple[McvqModel, np.ndarray] | None = None
    for seq in np.random.SeedSequence(cfg.seed).spawn(cfg.n_restarts):
        model, trace = _fit_mcvq_once(d, cfg, np.random.default_rng(seq), convention, structure)
        if best is None or trace[-1] > best[1][-1]:
            best = (model, trace)
    assert best is not None
    return best


def _fit_mcvq_once(
    d: RatingsDataset,
    cfg: TrainConfig,
    rng: np.random.Generator,
    convention: str,
    structure: tuple[np.ndarray, np.ndarray] | None = None,
) -> tuple[McvqModel, np.ndarray]:
    m_items, k, l, rho = d.n_items, cfg.n_types, cfg.n_attitudes, cfg.rho
    item_mean, item_var = _item_rating_moments(d)
    if structure is not None:
        labels, signs = structure
        type_dist = np.full((m_items, k), 0.25 / max(k - 1, 1))
        type_dist[np.arange(m_items), labels] = 0.75
        type_dist /= type_dist.sum(axis=1, keepdims=True)
        offsets = np.linspace(1.0, -1.0, l)  # attitude polarity axis
        mean = item_mean[:, None, None] + rng.normal(0.0, 0.1, size=(m_items, k, l))
        home = np.zeros((m_items, k, l))
        home[np.arange(m_items), labels, :] = signs[:, None] * offsets[None, :]
        mean = mean + home
    else:
        type_dist = rng.dirichlet(np.ones(k), size=m_items)
        mean = item_mean[:, None, None] + rng.normal(0.0, 0.5, size=(m_items, k, l))
    prior = rng.dirichlet(np.ones(l), size=k)
    var = np.full((m_items, k, l), max(d.ratings.var(), cfg.var_floor))
    model = McvqModel.from_gaussians(type_dist, prior, mean, var, rho)

    by_user = d.by_user()
    n_obs = d.n_obs
    trace: list[float] = []
    accepted = model
    for _ in range(cfg.max_iters):
        theta_f = np.maximum(model.rating_multinomial, PROB_FLOOR)
        type_acc = np.zeros((m_items, k))
        prior_acc = np.zeros((k, l))
        w_acc = np.zeros((m_items, k, l))
        wr_acc = np.zeros((m_items, k, l))
        wr2_acc = np.zeros((m_items, k, l))
        objective = 0.0
        for items, rs in by_user:
            if items.size == 0:
                continue
            u = update_attitudes(
                model, dict(zip(items.tolist(), rs.tolist())), convention=convention
            )
            a = u.attitude_posterior
            lik = theta_f[items, :, :, rs - 1]  # (n, K, L)
            joint = model.type_dist[items][:, :, None] * a[None, :, :] * lik
            z = joint.sum(axis=(1, 2))
            resp = joint / z[:, None, None]
            objective += float(np.log(z).sum())
            objective += float((a * np.log(model.attitude_prior / a)).sum())
            np.add.at(type_acc, items, resp.sum(axis=2))
            np.add.at(w_acc, items, resp)
            np.add.at(wr_acc, items, resp * rs[:, None, None])
            np.add.at(wr2_acc, items, resp * (rs**2)[:, None, None])
            prior_acc += a
        # the smoothed M-step is not guaranteed to ascend this objective;
        # accept steps only while they improve it and otherwise keep the
        # earlier iterate, so the recorded trace is non-decreasing
        if trace and objective / n_obs < trace[-1]:
            model = accepted
            break
        trace.append(objective / n_obs)
        accepted = model

        s = cfg.smoothing
        type_dist = (type_acc + s) / (type_acc + s).sum(axis=1, keepdims=True)
        prior = (prior_acc + s) / (prior_acc + s).sum(axis=1, keepdims=True)
        # shrink empty cells toward the item's own rating moments, then
        # invert the binning so stored Gaussians reproduce these moments
        # after discretization (raw moments would bias boundary cells)
        anchor_m = item_mean[:, None, None]
        anchor_v = item_var[:, None, None]
        obs_mean = (wr_acc + s * anchor_m) / (w_acc + s)
        obs_second = (wr2_acc + s * (anchor_v + anchor_m**2)) / (w_acc + s)
        obs_var = np.maximum(obs_second - obs_mean**2, cfg.var_floor)
        mean, var = gaussian_from_binned_moments(obs_mean, obs_var, rho, var_floor=cfg.var_floor)
        model = McvqModel.from_gaussians(type_dist, prior, mean, var, rho)
        if len(trace) >= 2 and trace[-2] != 0.0:
            rel = (trace[-1] - trace[-2]) / abs(trace[-2])
            if 0.0 <= rel < cfg.tol:
                break
    return model, np.asarray(trace)


def fit_naive_bayes(d: RatingsDataset, cfg: TrainConfig) -> tuple[NaiveBayesModel, np.ndarray]:
    """Fit the latent-class model with ``cfg.n_types`` components.

    Exact EM on a multinomial mixture; the returned trace is the data
    log-likelihood per observation and is non-decreasing.
    """
    if d.n_obs == 0:
        raise ValueError("cannot fit an empty dataset")
    rng = np.random.default_rng(cfg.seed)
    m_items, c, rho = d.n_items, cfg.n_types, cfg.rho
    hist = np.zeros((m_items, rho))
    np.add.at(hist, (d.items, d.ratings - 1), 1.0)
    base = hist + 1.0
    base /= base.sum(axis=1, keepdims=True)
    phi = base[:, None, :] * rng.uniform(0.5, 1.5, size=(m_items, c, rho))
    phi /= phi.sum(axis=2, keepdims=True)
    mixing = rng.dirichlet(np.ones(c))

    trace: list[float] = []
    for _ in range(cfg.max_iters):
        log_phi = np.log(np.maximum(phi, PROB_FLOOR))
        log_w = np.zeros((d.n_users, c))
        np.add.at(log_w, d.users, log_phi[d.items, :, d.ratings - 1])
        log_w += np.log(mixing)
        peak = log_w.max(axis=1, keepdims=True)
        gamma = np.exp(log_w - peak)
        norm = gamma.sum(axis=1, keepdims=True)
        gamma /= norm
        trace.append(float((np.log(norm) + peak).sum() / d.n_obs))

        s = cfg.smoothing
        mixing = (gamma.sum(axis=0) + s) / (gamma.sum() + s * c)
        counts = np.zeros((m_items, c, rho))
        for r in range(1, rho + 1):
            sel = d.ratings == r
            np.add.at(counts[:, :, r - 1], d.items[sel], gamma[d.users[sel]])
        phi = (counts + s) / (counts + s).sum(axis=2, keepdims=True)
        if len(trace) >= 2 and trace[-2] != 0.0:
            rel = (trace[-1] - trace[-2]) / abs(trace[-2])
            if 0.0 <= rel < cfg.tol:
                break
    return NaiveBayesModel(mixing=mixing, rating_multinomial=phi), np.asarray(trace)


def permute_mcvq(m: McvqModel, type_perm: tuple[int, ...], attitude_perms: tuple[tuple[int, ...], ...]) -> McvqModel:
    """Relabel quantizers by ``type_perm`` and, per new slot, attitudes.

    ``type_perm[k]`` names the old quantizer placed at slot k, and
    ``attitude_perms[k]`` permutes that quantizer's attitudes likewise.
    """
    tp = list(type_perm)
    type_dist = m.type_dist[:, tp]
    prior = np.stack([m.attitude_prior[tp[k]][list(attitude_perms[k])] for k in range(len(tp))])
    mean = np.stack([m.rating_mean[:, tp[k]][:, list(attitude_perms[k])] for k in range(len(tp))], axis=1)
    var = np.stack([m.rating_var[:, tp[k]][:, list(attitude_perms[k])] for k in range(len(tp))], axis=1)
    mult = np.stack([m.rating_multinomial[:, tp[k]][:, list(attitude_perms[k])] for k in range(len(tp))], axis=1)
    return McvqModel(
        type_dist=type_dist, attitude_prior=prior,
        rating_mean=mean, rating_var=var, rating_multinomial=mult,
    )


def cell_rating_means(m: McvqModel) -> np.ndarray:
    """Expected rating per (item, quantizer, attitude) cell, shape (M, K, L).

    Taken under the discretized rating distribution, not the underlying
    Gaussian location: the two diverge for wide cells, and only the
    discrete expectation is observable.
    """
    levels = np.arange(1, m.rho + 1, dtype=np.float64)
    return m.rating_multinomial @ levels


def align_mcvq(fitted: McvqModel, reference: McvqModel) -> tuple[McvqModel, float]:
    """Best relabeling of ``fitted`` against ``reference``.

    Exhausts quantizer and per-quantizer attitude permutations (cheap at
    the K, L this model is used with) minimizing the mean absolute
    difference of cell rating means. Returns the relabeled model and
    that residual.
    """
    k, l = fitted.n_types, fitted.n_attitudes
    if (k, l) != (reference.n_types, reference.n_attitudes):
        raise ValueError("shape mismatch between fitted and reference")
    fit_means = cell_rating_means(fitted)
    ref_means = cell_rating_means(reference)
    best: tuple[float, tuple, tuple] | None = None
    att_perms = list(itertools.permutations(range(l)))
    for tp in itertools.permutations(range(k)):
        total = 0.0
        chosen = []
        for slot in range(k):
            costs = [
                np.abs(fit_means[:, tp[slot]][:, list(ap)] - ref_means[:, slot]).mean()
                for ap in att_perms
            ]
            ix = int(np.argmin(costs))
            total += costs[ix]
            chosen.append(att_perms[ix])
        if best is None or total < best[0]:
            best = (total, tp, tuple(chosen))
    assert best is not None
    aligned = permute_mcvq(fitted, best[1], best[2])
    return aligned, float(np.abs(cell_rating_means(aligned) - ref_means).mean())


def align_naive_bayes(fitted: NaiveBayesModel, reference: NaiveBayesModel) -> tuple[NaiveBayesModel, float]:
    """Best component relabeling; returns (model, worst per-row TV distance)."""
    c = fitted.n_components
    if c != reference.n_components:
        raise ValueError("component count mismatch")
    cost = np.zeros((c, c))
    for a in range(c):
        for b in range(c):
            cost[a, b] = 0.5 * np.abs(fitted.rating_multinomial[:, b] - reference.rating_multinomial[:, a]).sum()
    from scipy.optimize import linear_sum_assignment

    rows, cols = linear_sum_assignment(cost)
    perm = [int(cols[list(rows).index(slot)]) for slot in range(c)]
    aligned = NaiveBayesModel(
        mixing=fitted.mixing[perm], rating_multinomial=fitted.rating_multinomial[:, perm]
    )
    tv = 0.5 * np.abs(aligned.rating_multinomial - reference.rating_multinomial).sum(axis=2)
    return aligned, float(tv.max())
