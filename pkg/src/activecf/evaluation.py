"""Query-strategy experiments on staged replay of held-out users.

The protocol fixes, per test user, a seeded permutation of their rated
items; stage ``kappa`` reveals the first ``kappa`` entries as known
ratings and holds out the rest. A strategy then picks one query among
the held-out items, the query's true rating is revealed, and model loss
is re-measured over the reduced held-out set. Revealed data at a given
stage comes from the schedule alone, never from earlier queries, so
every strategy (and every model) sees identical input at every stage
and per-user comparisons are paired. The digest of the revealed
triples is carried in the results and asserted equal across series.
"""

from __future__ import annotations

import hashlib
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .bounds import PRUNE_EXPECTED, BoundTables, prune_targets
from .container import load_json, save_json
from .data import RatingsDataset, ReplayMask, SplitSpec, generate_synthetic, make_split
from .engines import RatingEngine, engine_for
from .mcvq import McvqModel
from .prototypes import PrototypeSet
from .strategies import (
    STRATEGY_KINDS,
    StrategyConfig,
    rating_histograms,
    recommend,
    select_query,
)
from .training import TrainConfig, fit_mcvq, fit_naive_bayes

log = logging.getLogger(__name__)

PLOT_DATA_VERSION = 1
MODEL_KINDS = ("mcvq", "naive_bayes")


@dataclass(frozen=True)
class ExperimentConfig:
    """Shape of one staged-replay experiment.

    ``target_pool`` picks the set the value function maximizes over:
    the user's held-out items (the pool the loss is measured on) or
    every unobserved item. ``pruning_mode`` wires bound tables into the
    EVOI scan when they are supplied alongside.
    """

    model_kind: str = "mcvq"
    strategies: tuple[str, ...] = ("evoi", "entropy", "random")
    kappa_sizes: tuple[int, ...] = (1, 2, 3)
    n_runs: int = 5
    prototype_sets: tuple[PrototypeSet, ...] | None = None
    pruning_mode: str | None = None
    target_pool: str = "held_out"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.model_kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.model_kind!r}")
        if not self.strategies:
            raise ValueError("at least one strategy required")
        unknown = set(self.strategies) - set(STRATEGY_KINDS)
        if unknown:
            raise ValueError(f"unknown strategies {sorted(unknown)}")
        ks = tuple(int(k) for k in self.kappa_sizes)
        if not ks or any(k <= 0 for k in ks) or list(ks) != sorted(set(ks)):
            raise ValueError("kappa_sizes must be positive ascending")
        object.__setattr__(self, "kappa_sizes", ks)
        if self.n_runs < 1:
            raise ValueError("n_runs must be >= 1")
        if self.target_pool not in ("held_out", "unobserved"):
            raise ValueError("target_pool must be 'held_out' or 'unobserved'")


@dataclass(frozen=True)
class RunData:
    """One split: training data, held-out users, and their schedules."""

    train: RatingsDataset
    test: RatingsDataset
    mask: ReplayMask


def model_loss(
    engine: RatingEngine, state, held_items: np.ndarray, held_ratings: np.ndarray
) -> float:
    """Regret of recommending from ``state`` against the user's truth.

    The user's best attainable rating among the held-out items minus
    the true rating of the model's top pick there; zero when the pick
    is the true best, never negative.
    """
    held_items = np.asarray(held_items, dtype=np.int64)
    held_ratings = np.asarray(held_ratings)
    if held_items.size == 0:
        raise ValueError("no held-out items to score")
    pick = recommend(engine, state, held_items)
    true = float(held_ratings[held_items == pick][0])
    return float(held_ratings.max()) - true


def _user_rating_maps(test: RatingsDataset) -> list[dict[int, int]]:
    return [dict(zip(items.tolist(), rs.tolist())) for items, rs in test.by_user()]


def _strategy_cfg(
    cfg: ExperimentConfig,
    kind: str,
    tables: BoundTables | None,
    candidates: np.ndarray | None,
) -> StrategyConfig:
    use_tables = tables if (kind == "evoi" and cfg.pruning_mode is not None) else None
    return StrategyConfig(
        kind=kind,
        candidates=candidates,
        bound_tables=use_tables,
        prune_mode=cfg.pruning_mode or "per_response",
        seed=cfg.seed,
    )


@dataclass(frozen=True)
class LossRecord:
    """Per-stage improvements for each strategy, user-paired.

    ``improvements[s][kappa]`` concatenates per-user improvements over
    all runs in a fixed (run, user) order shared by every strategy, so
    differences between strategies are paired. ``prior_losses[kappa]``
    aligns with the same order and is strategy-independent.
    """

    model_kind: str
    strategies: tuple[str, ...]
    kappa_sizes: tuple[int, ...]
    improvements: dict[str, dict[int, np.ndarray]]
    prior_losses: dict[int, np.ndarray]
    run_means: dict[str, dict[int, np.ndarray]]
    n_skipped: dict[int, int]
    schedule_digest: str
    fallback_users: int = 0

    def mean_improvement(self, strategy: str, kappa: int) -> tuple[float, float]:
        """Pooled per-user mean and its standard error."""
        vals = self.improvements[strategy][kappa]
        se = float(vals.std(ddof=1) / np.sqrt(vals.size)) if vals.size > 1 else 0.0
        return float(vals.mean()), se

    def normalized_total(self, strategy: str, kappa: int) -> float:
        """Total improvement as a fraction of total prior loss."""
        prior = self.prior_losses[kappa].sum()
        if prior == 0.0:
            return 0.0
        return float(self.improvements[strategy][kappa].sum() / prior)

    def paired_pvalue(self, better: str, worse: str, kappa: int) -> float:
        """One-sided p-value that ``better`` beats ``worse`` per user."""
        from scipy import stats

        diff = self.improvements[better][kappa] - self.improvements[worse][kappa]
        if diff.size < 2 or np.allclose(diff, diff[0]):
            return 1.0 if diff.mean() <= 0 else 0.0
        return float(stats.ttest_1samp(diff, 0.0, alternative="greater").pvalue)

    def table(self) -> str:
        """Plain-text summary, one row per (strategy, kappa)."""
        lines = [f"{'strategy':>10} {'kappa':>5} {'mean':>8} {'stderr':>8} {'norm_total':>10} {'n':>5}"]
        for s in self.strategies:
            for k in self.kappa_sizes:
                m, se = self.mean_improvement(s, k)
                lines.append(
                    f"{s:>10} {k:>5} {m:>8.4f} {se:>8.4f} "
                    f"{self.normalized_total(s, k):>10.4f} {self.improvements[s][k].size:>5}"
                )
        return "\n".join(lines)

    def to_plot_doc(self, name: str = "improvement_vs_kappa") -> dict:
        ks = list(self.kappa_sizes)
        series = []
        norm_series = []
        for s in self.strategies:
            pairs = [self.mean_improvement(s, k) for k in ks]
            series.append(
                {
                    "label": s,
                    "mean": [p[0] for p in pairs],
                    "stderr": [p[1] for p in pairs],
                }
            )
            norm_series.append(
                {"label": s, "mean": [self.normalized_total(s, k) for k in ks], "stderr": [0.0] * len(ks)}
            )
        return {
            "figures": [
                {
                    "name": name,
                    "x": ks,
                    "xlabel": "known ratings",
                    "ylabel": "mean loss improvement",
                    "series": series,
                },
                {
                    "name": f"{name}_normalized_total",
                    "x": ks,
                    "xlabel": "known ratings",
                    "ylabel": "total improvement / total prior loss",
                    "series": norm_series,
                },
            ]
        }


def _stage_for_user(
    engine: RatingEngine,
    rating_map: dict[int, int],
    schedule: np.ndarray,
    kappa: int,
    user: int,
) -> tuple[object, np.ndarray, np.ndarray, bytes] | None:
    """Reveal the schedule prefix; None when the stage is infeasible.

    Needs at least two held-out items: one to query, one to measure the
    posterior loss on. The returned bytes record exactly what was fed
    to the engine, for the cross-strategy schedule digest.
    """
    if schedule.size < kappa + 2:
        return None
    state = engine.fresh_state()
    revealed = []
    for item in schedule[:kappa]:
        r = rating_map[int(item)]
        state = engine.update(state, int(item), r)
        revealed.append(f"{user}:{item}:{r};")
    held = np.sort(schedule[kappa:])
    held_ratings = np.array([rating_map[int(i)] for i in held])
    return state, held, held_ratings, "".join(revealed).encode()


def run_query_experiment(
    cfg: ExperimentConfig,
    runs: list[RunData],
    models: list,
    tables: list[BoundTables] | None = None,
    candidates: np.ndarray | list[np.ndarray] | None = None,
    threads: int = 1,
) -> LossRecord:
    """Staged replay of every strategy over every run's test users.

    ``models`` aligns with ``runs`` (one trained model per split).
    When ``candidates`` is given (one array, or one per run), queries
    are restricted to it, falling back to the full held-out pool for
    users with an empty intersection (counted in ``fallback_users``);
    value maximization is never restricted.
    """
    if len(runs) != cfg.n_runs or len(models) != cfg.n_runs:
        raise ValueError("runs and models must both have length cfg.n_runs")
    if candidates is None or isinstance(candidates, np.ndarray):
        candidates = [candidates] * cfg.n_runs
    elif len(candidates) != cfg.n_runs:
        raise ValueError("per-run candidates must have length cfg.n_runs")
    rho = runs[0].test.rho
    improvements: dict[str, dict[int, list]] = {
        s: {k: [] for k in cfg.kappa_sizes} for s in cfg.strategies
    }
    run_means: dict[str, dict[int, list]] = {
        s: {k: [] for k in cfg.kappa_sizes} for s in cfg.strategies
    }
    prior_losses: dict[int, list] = {k: [] for k in cfg.kappa_sizes}
    n_skipped = {k: 0 for k in cfg.kappa_sizes}
    digests: dict[str, str] = {}
    fallbacks = 0

    for s_ix, strat in enumerate(cfg.strategies):
        digest = hashlib.sha256()
        for r_ix, run in enumerate(runs):
            engine = engine_for(models[r_ix])
            run_tables = tables[r_ix] if tables is not None else None
            run_candidates = candidates[r_ix]
            histograms = rating_histograms(run.train) if strat == "entropy" else None
            rating_maps = _user_rating_maps(run.test)

            def eval_user(user: int) -> tuple[list[tuple[float, float, bytes] | None], int]:
                out: list[tuple[float, float, bytes] | None] = []
                n_fallback = 0
                schedule = run.mask.schedules[user]
                rmap = rating_maps[user]
                for kappa in cfg.kappa_sizes:
                    staged = _stage_for_user(engine, rmap, schedule, kappa, user)
                    if staged is None:
                        out.append(None)
                        continue
                    state, held, held_ratings, revealed = staged
                    prior = model_loss(engine, state, held, held_ratings)
                    pool = held if cfg.target_pool == "held_out" else None
                    # queries must have a revealable true rating, so the
                    # candidate set always lives inside the held-out pool
                    qcand = held
                    if run_candidates is not None:
                        qcand = np.intersect1d(run_candidates, held)
                        if qcand.size == 0:
                            qcand = held
                            n_fallback += 1
                            log.info(
                                "user %d kappa %d: empty prototype intersection, full pool used",
                                user, kappa,
                            )
                    scfg = _strategy_cfg(cfg, strat, run_tables, qcand)
                    rng = np.random.default_rng(
                        np.random.SeedSequence((cfg.seed, s_ix, r_ix, user, kappa))
                    )
                    decision = select_query(
                        engine, state, scfg, histograms=histograms, targets=pool, rng=rng
                    )
                    q = decision.chosen_query
                    if q is None:
                        # stopping is a live-session notion; the replay
                        # protocol asks at every stage, so take the best
                        # scorer even when its EVOI is negative
                        q = int(decision.candidates[int(np.argmax(decision.scores))])
                    state2 = engine.update(state, q, rmap[q])
                    reduced = held[held != q]
                    posterior = model_loss(engine, state2, reduced, held_ratings[held != q])
                    impr = prior - posterior
                    assert -(rho - 1) - 1e-9 <= impr <= (rho - 1) + 1e-9
                    out.append((prior, impr, revealed))
                return out, n_fallback

            users = range(run.test.n_users)
            if threads > 1:
                with ThreadPoolExecutor(max_workers=threads) as ex:
                    results = list(ex.map(eval_user, users))
            else:
                results = [eval_user(u) for u in users]
            fallbacks += sum(nf for _, nf in results)

            for k_ix, kappa in enumerate(cfg.kappa_sizes):
                stage_impr = []
                for user, (rows, _) in enumerate(results):
                    row = rows[k_ix]
                    if row is None:
                        if s_ix == 0 and r_ix == 0:
                            log.debug("user %d skipped at kappa %d", user, kappa)
                        if s_ix == 0:
                            n_skipped[kappa] += 1
                        continue
                    prior, impr, revealed = row
                    digest.update(revealed)
                    stage_impr.append(impr)
                    improvements[strat][kappa].append(impr)
                    if s_ix == 0:
                        prior_losses[kappa].append(prior)
                run_means[strat][kappa].append(float(np.mean(stage_impr)) if stage_impr else 0.0)
        digests[strat] = digest.hexdigest()

    reference = digests[cfg.strategies[0]]
    if any(d != reference for d in digests.values()):
        raise AssertionError(f"revealed-schedule digests diverged: {digests}")

    return LossRecord(
        model_kind=cfg.model_kind,
        strategies=cfg.strategies,
        kappa_sizes=cfg.kappa_sizes,
        improvements={
            s: {k: np.asarray(v) for k, v in per.items()} for s, per in improvements.items()
        },
        prior_losses={k: np.asarray(v) for k, v in prior_losses.items()},
        run_means={
            s: {k: np.asarray(v) for k, v in per.items()} for s, per in run_means.items()
        },
        n_skipped=n_skipped,
        schedule_digest=reference,
        fallback_users=fallbacks,
    )


def run_prototype_experiment(
    cfg: ExperimentConfig,
    runs: list[RunData],
    models: list,
    protosets: list[PrototypeSet | list[PrototypeSet]] | None = None,
    threads: int = 1,
) -> dict[str, LossRecord]:
    """Replay with EVOI queries restricted to each prototype net.

    The unrestricted record (every configured strategy) is returned
    under ``"full"``; each prototype setting (one shared net, or one
    net per run built from that run's model) adds an EVOI-only record
    keyed ``proto<i>_m<members>``. All records share runs, models, and
    schedules, so cross-record per-user comparisons stay paired.
    """
    if protosets is None:
        protosets = list(cfg.prototype_sets or ())
    out: dict[str, LossRecord] = {}
    out["full"] = run_query_experiment(cfg, runs, models, threads=threads)
    evoi_cfg = ExperimentConfig(
        model_kind=cfg.model_kind,
        strategies=("evoi",),
        kappa_sizes=cfg.kappa_sizes,
        n_runs=cfg.n_runs,
        pruning_mode=cfg.pruning_mode,
        target_pool=cfg.target_pool,
        seed=cfg.seed,
    )
    for i, setting in enumerate(protosets):
        if isinstance(setting, PrototypeSet):
            cand: np.ndarray | list[np.ndarray] = setting.members
            size = setting.members.size
        else:
            cand = [ps.members for ps in setting]
            size = max(ps.members.size for ps in setting)
        key = f"proto{i}_m{size}"
        out[key] = run_query_experiment(evoi_cfg, runs, models, candidates=cand, threads=threads)
        if out[key].schedule_digest != out["full"].schedule_digest:
            raise AssertionError("prototype replay diverged from the full replay schedule")
    return out


@dataclass(frozen=True)
class PruningRecord:
    """Fraction of potential targets pruned, pooled per stage."""

    kappa_sizes: tuple[int, ...]
    fractions: dict[int, np.ndarray] = field(repr=False)

    def mean_fraction(self, kappa: int) -> float:
        return float(self.fractions[kappa].mean())

    def table(self) -> str:
        lines = [f"{'kappa':>5} {'mean_fraction':>13} {'n':>7}"]
        for k in self.kappa_sizes:
            lines.append(f"{k:>5} {self.mean_fraction(k):>13.4f} {self.fractions[k].size:>7}")
        return "\n".join(lines)

    def to_plot_doc(self) -> dict:
        ks = list(self.kappa_sizes)
        return {
            "figures": [
                {
                    "name": "pruning_fraction_vs_kappa",
                    "x": ks,
                    "xlabel": "known ratings",
                    "ylabel": "fraction of targets pruned",
                    "series": [
                        {
                            "label": "pruned",
                            "mean": [self.mean_fraction(k) for k in ks],
                            "stderr": [
                                float(
                                    self.fractions[k].std(ddof=1) / np.sqrt(self.fractions[k].size)
                                )
                                if self.fractions[k].size > 1
                                else 0.0
                                for k in ks
                            ],
                        }
                    ],
                }
            ]
        }


def run_pruning_experiment(
    cfg: ExperimentConfig,
    run: RunData,
    model,
    tables: BoundTables,
    mode: str = PRUNE_EXPECTED,
    max_queries: int | None = None,
) -> PruningRecord:
    """Count targets the dominance test discards, per stage.

    For every test user and every unobserved query the potential
    targets are the other unobserved items (M - kappa - 1 of them when
    the user's whole history is revealed events aside); the fraction of
    those pruned is pooled over users and queries. ``max_queries``
    subsamples the query set (lowest item ids) to bound runtime.
    """
    engine = engine_for(model)
    rating_maps = _user_rating_maps(run.test)
    fractions: dict[int, list] = {k: [] for k in cfg.kappa_sizes}
    for user in range(run.test.n_users):
        schedule = run.mask.schedules[user]
        rmap = rating_maps[user]
        for kappa in cfg.kappa_sizes:
            if schedule.size < kappa + 2:
                continue
            state = engine.fresh_state()
            for item in schedule[:kappa]:
                state = engine.update(state, int(item), rmap[int(item)])
            pool = np.setdiff1d(np.arange(engine.n_items), schedule[:kappa])
            queries = pool if max_queries is None else pool[:max_queries]
            for q in queries:
                targets = pool[pool != q]
                means = engine.posterior_means(state, targets)
                probs = engine.predictive(state, int(q)) if mode == PRUNE_EXPECTED else None
                pruned = prune_targets(means, targets, int(q), tables.mean_change, probs, mode)
                fractions[kappa].append(pruned.sum() / targets.size)
    return PruningRecord(
        kappa_sizes=cfg.kappa_sizes,
        fractions={k: np.asarray(v) for k, v in fractions.items()},
    )


def prepare_synthetic_runs(
    truth: McvqModel,
    cfg: ExperimentConfig,
    train_cfg: TrainConfig,
    n_train_users: int,
    n_test_users: int,
    density: float,
) -> tuple[list[RunData], list]:
    """Draw ``cfg.n_runs`` fresh splits from ``truth`` and fit each.

    Users are sampled anew per run; the split and replay schedules are
    seeded from the run index so the whole preparation is reproducible
    from ``cfg.seed``.
    """
    runs: list[RunData] = []
    models: list = []
    for r in range(cfg.n_runs):
        data_seed = cfg.seed * 1000 + r
        d = generate_synthetic(truth, n_train_users + n_test_users, density, seed=data_seed)
        train, test, mask = make_split(d, SplitSpec(n_test_users=n_test_users, seed=data_seed + 1))
        run_train_cfg = replace(train_cfg, seed=train_cfg.seed + r)
        if cfg.model_kind == "mcvq":
            model, _ = fit_mcvq(train, run_train_cfg)
        else:
            model, _ = fit_naive_bayes(train, run_train_cfg)
        runs.append(RunData(train=train, test=test, mask=mask))
        models.append(model)
    return runs, models


def save_plot_data(path: str | Path, docs: dict | list[dict]) -> None:
    """Merge figure docs into one versioned plot-data file."""
    if isinstance(docs, dict):
        docs = [docs]
    figures = [fig for doc in docs for fig in doc["figures"]]
    save_json(path, {"format": "activecf-plot-data", "version": PLOT_DATA_VERSION, "figures": figures})


def render_plots(path: str | Path, out_dir: str | Path) -> list[Path]:
    """Render each figure in a plot-data file to a PNG.

    Needs matplotlib (the ``plots`` extra); raises a clear error when
    it is missing.
    """
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError as e:  # pragma: no cover - depends on extras
        raise RuntimeError("plot rendering needs matplotlib (install the 'plots' extra)") from e
    doc = load_json(path, expected_format="activecf-plot-data", max_version=PLOT_DATA_VERSION)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for fig_doc in doc["figures"]:
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for series in fig_doc["series"]:
            ax.errorbar(
                fig_doc["x"], series["mean"], yerr=series["stderr"], label=series["label"],
                marker="o", capsize=3,
            )
        ax.set_xlabel(fig_doc["xlabel"])
        ax.set_ylabel(fig_doc["ylabel"])
        ax.set_title(fig_doc["name"].replace("_", " "))
        ax.legend()
        fig.tight_layout()
        target = out_dir / f"{fig_doc['name']}.png"
        fig.savefig(target, dpi=120)
        plt.close(fig)
        written.append(target)
    return written
