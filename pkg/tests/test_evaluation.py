"""Staged-replay experiments: pairing, determinism, and reporting."""

import numpy as np
import pytest
from scipy import stats

from activecf.bounds import BoundTables, precompute_bound_tables
from activecf.container import load_json
from activecf.engines import NaiveBayesEngine, engine_for
from activecf.evaluation import (
    ExperimentConfig,
    LossRecord,
    model_loss,
    prepare_synthetic_runs,
    render_plots,
    run_pruning_experiment,
    run_prototype_experiment,
    run_query_experiment,
    save_plot_data,
)
from activecf.naive_bayes import NaiveBayesModel
from activecf.prototypes import select_prototypes
from activecf.training import TrainConfig


def point_mass_nb(item_ratings, rho=6):
    """Single-component model that believes item j rates ``item_ratings[j]``."""
    theta = np.zeros((len(item_ratings), 1, rho))
    for j, r in enumerate(item_ratings):
        theta[j, 0, r - 1] = 1.0
    return NaiveBayesModel(mixing=np.array([1.0]), rating_multinomial=theta)


@pytest.fixture(scope="module")
def small_experiment(tiny_truth):
    cfg = ExperimentConfig(kappa_sizes=(1, 2), n_runs=2, seed=3)
    tc = TrainConfig(n_types=2, n_attitudes=2, rho=6, max_iters=4, seed=0)
    runs, models = prepare_synthetic_runs(tiny_truth, cfg, tc, 60, 10, density=0.5)
    record = run_query_experiment(cfg, runs, models)
    return cfg, tc, runs, models, record


# ----------------------------------------------------------------- model_loss


def test_model_loss_zero_when_pick_is_best():
    eng = NaiveBayesEngine(point_mass_nb([2, 6, 3]))
    loss = model_loss(eng, eng.fresh_state(), np.array([1, 2]), np.array([6, 2]))
    assert loss == 0.0


def test_model_loss_counts_the_regret():
    # model believes item 2 is the winner; the user disagrees
    eng = NaiveBayesEngine(point_mass_nb([2, 2, 6]))
    loss = model_loss(eng, eng.fresh_state(), np.array([1, 2]), np.array([6, 2]))
    assert loss == 4.0


def test_model_loss_needs_held_items():
    eng = NaiveBayesEngine(point_mass_nb([2, 6]))
    with pytest.raises(ValueError, match="held-out"):
        model_loss(eng, eng.fresh_state(), np.array([], dtype=np.int64), np.array([]))


def test_model_loss_stays_in_range(small_experiment):
    _, _, runs, models, _ = small_experiment
    eng = engine_for(models[0])
    for items, ratings in runs[0].test.by_user()[:5]:
        if items.size == 0:
            continue
        loss = model_loss(eng, eng.fresh_state(), items, ratings)
        assert 0.0 <= loss <= 5.0


# --------------------------------------------------------------------- config


def test_experiment_config_validation():
    with pytest.raises(ValueError, match="unknown model kind"):
        ExperimentConfig(model_kind="svd")
    with pytest.raises(ValueError, match="unknown strategies"):
        ExperimentConfig(strategies=("evoi", "oracle"))
    with pytest.raises(ValueError, match="ascending"):
        ExperimentConfig(kappa_sizes=(3, 1))
    with pytest.raises(ValueError, match="ascending"):
        ExperimentConfig(kappa_sizes=(0, 1))
    with pytest.raises(ValueError, match="target_pool"):
        ExperimentConfig(target_pool="everything")


# ----------------------------------------------------------- query experiment


def test_replay_is_deterministic(small_experiment):
    cfg, _, runs, models, record = small_experiment
    again = run_query_experiment(cfg, runs, models)
    assert again.schedule_digest == record.schedule_digest
    for s in cfg.strategies:
        for k in cfg.kappa_sizes:
            assert np.array_equal(again.improvements[s][k], record.improvements[s][k])
            assert np.array_equal(again.run_means[s][k], record.run_means[s][k])
    for k in cfg.kappa_sizes:
        assert np.array_equal(again.prior_losses[k], record.prior_losses[k])


def test_threading_does_not_change_results(small_experiment):
    cfg, _, runs, models, record = small_experiment
    threaded = run_query_experiment(cfg, runs, models, threads=2)
    assert threaded.schedule_digest == record.schedule_digest
    for s in cfg.strategies:
        for k in cfg.kappa_sizes:
            assert np.array_equal(threaded.improvements[s][k], record.improvements[s][k])


def test_improvements_are_paired_and_bounded(small_experiment):
    cfg, _, runs, models, record = small_experiment
    for k in cfg.kappa_sizes:
        sizes = {record.improvements[s][k].size for s in cfg.strategies}
        assert sizes == {record.prior_losses[k].size}
        for s in cfg.strategies:
            assert np.all(np.abs(record.improvements[s][k]) <= 5.0 + 1e-9)
        assert np.all(record.prior_losses[k] >= 0.0)
    for s in cfg.strategies:
        for k in cfg.kappa_sizes:
            assert record.run_means[s][k].size == cfg.n_runs


def test_skip_counts_match_short_schedules(small_experiment):
    cfg, _, runs, models, record = small_experiment
    for k in cfg.kappa_sizes:
        want = sum(
            1
            for run in runs
            for u in range(run.test.n_users)
            if run.mask.schedules[u].size < k + 2
        )
        assert record.n_skipped[k] == want
        assert record.prior_losses[k].size == 2 * 10 - want


def test_run_length_mismatch_rejected(small_experiment):
    cfg, _, runs, models, _ = small_experiment
    with pytest.raises(ValueError, match="length cfg.n_runs"):
        run_query_experiment(cfg, runs[:1], models)


def test_prepare_runs_reproducible(small_experiment, tiny_truth):
    cfg, tc, runs, models, _ = small_experiment
    runs2, models2 = prepare_synthetic_runs(tiny_truth, cfg, tc, 60, 10, density=0.5)
    for a, b in zip(runs, runs2):
        assert np.array_equal(a.train.ratings, b.train.ratings)
        assert np.array_equal(a.test.ratings, b.test.ratings)
        assert all(np.array_equal(x, y) for x, y in zip(a.mask.schedules, b.mask.schedules))
    for ma, mb in zip(models, models2):
        assert np.array_equal(ma.type_dist, mb.type_dist)
        assert np.array_equal(ma.rating_multinomial, mb.rating_multinomial)


# -------------------------------------------------------------- LossRecord


def fake_record(evoi_vals, random_vals):
    evoi_vals = np.asarray(evoi_vals, dtype=np.float64)
    random_vals = np.asarray(random_vals, dtype=np.float64)
    return LossRecord(
        model_kind="mcvq",
        strategies=("evoi", "random"),
        kappa_sizes=(1,),
        improvements={"evoi": {1: evoi_vals}, "random": {1: random_vals}},
        prior_losses={1: np.full(evoi_vals.size, 2.0)},
        run_means={"evoi": {1: np.array([evoi_vals.mean()])}, "random": {1: np.array([random_vals.mean()])}},
        n_skipped={1: 0},
        schedule_digest="d",
    )


def test_paired_pvalue_degenerate_cases():
    rec = fake_record([1.0, 1.0, 1.0], [0.0, 0.0, 0.0])
    assert rec.paired_pvalue("evoi", "random", 1) == 0.0
    assert rec.paired_pvalue("random", "evoi", 1) == 1.0
    lone = fake_record([1.0], [0.0])
    assert lone.paired_pvalue("evoi", "random", 1) == 0.0


def test_paired_pvalue_matches_scipy():
    e = [1.0, 0.5, 2.0, 0.0, 1.5]
    r = [0.5, 0.5, 1.0, 0.5, 0.0]
    rec = fake_record(e, r)
    want = stats.ttest_1samp(np.array(e) - np.array(r), 0.0, alternative="greater").pvalue
    assert rec.paired_pvalue("evoi", "random", 1) == pytest.approx(float(want), abs=1e-15)


def test_record_summaries():
    rec = fake_record([1.0, 3.0], [0.0, 1.0])
    mean, se = rec.mean_improvement("evoi", 1)
    assert mean == 2.0
    assert se == pytest.approx(np.std([1.0, 3.0], ddof=1) / np.sqrt(2))
    assert rec.normalized_total("evoi", 1) == pytest.approx(4.0 / 4.0)
    text = rec.table()
    assert "evoi" in text and "random" in text
    doc = rec.to_plot_doc()
    names = [f["name"] for f in doc["figures"]]
    assert names == ["improvement_vs_kappa", "improvement_vs_kappa_normalized_total"]
    assert [s["label"] for s in doc["figures"][0]["series"]] == ["evoi", "random"]


# -------------------------------------------------------- pruning experiment


def zero_tables(model):
    return BoundTables(
        attitude_shift=np.zeros((model.n_items, model.rho, model.n_types, model.n_attitudes)),
        mean_change=np.zeros((model.n_items, model.n_items, model.rho)),
        tighten=False,
    )


def test_zero_budget_prunes_all_but_the_best(small_experiment):
    cfg, _, runs, models, _ = small_experiment
    record = run_pruning_experiment(cfg, runs[0], models[0], zero_tables(models[0]))
    m = models[0].n_items
    for k in cfg.kappa_sizes:
        t = m - k - 1  # targets per query
        assert record.fractions[k] == pytest.approx(np.full(record.fractions[k].size, (t - 1) / t))


def test_saturated_budget_prunes_nothing(small_experiment):
    cfg, _, runs, models, _ = small_experiment
    tables = zero_tables(models[0])
    tables = tables._replace(mean_change=np.full_like(tables.mean_change, 5.0))
    record = run_pruning_experiment(cfg, runs[0], models[0], tables)
    for k in cfg.kappa_sizes:
        assert record.mean_fraction(k) == 0.0


def test_pruned_fraction_shrinks_as_budgets_grow(small_experiment):
    cfg, _, runs, models, _ = small_experiment
    base = precompute_bound_tables(models[0])
    fractions = []
    for scale in (0.0, 0.25, 1.0, 4.0):
        tables = base._replace(mean_change=base.mean_change * scale)
        record = run_pruning_experiment(cfg, runs[0], models[0], tables, max_queries=3)
        fractions.append(record.mean_fraction(cfg.kappa_sizes[0]))
    assert fractions == sorted(fractions, reverse=True)
    assert fractions[0] > 0.5  # zero budget prunes nearly everything


# ------------------------------------------------------ prototype experiment


def test_beta_zero_net_reproduces_unrestricted_evoi(small_experiment):
    cfg, _, runs, models, record = small_experiment
    nets = [select_prototypes(models[r], runs[r].train, beta=0.0) for r in range(cfg.n_runs)]
    out = run_prototype_experiment(cfg, runs, models, protosets=[nets])
    assert set(out) == {"full", "proto0_m12"}
    proto = out[f"proto0_m{models[0].n_items}"]
    assert proto.fallback_users == 0
    for k in cfg.kappa_sizes:
        assert np.array_equal(proto.improvements["evoi"][k], record.improvements["evoi"][k])
        assert np.array_equal(out["full"].improvements["evoi"][k], record.improvements["evoi"][k])


def test_single_member_net_falls_back_when_unreachable(small_experiment):
    cfg, _, runs, models, record = small_experiment
    nets = [select_prototypes(models[r], runs[r].train, beta=1e6) for r in range(cfg.n_runs)]
    assert all(n.n_members == 1 for n in nets)
    out = run_prototype_experiment(cfg, runs, models, protosets=[nets])
    proto = out["proto0_m1"]
    for k in cfg.kappa_sizes:
        # pairing preserved: same users scored as the unrestricted replay
        assert proto.improvements["evoi"][k].size == record.improvements["evoi"][k].size
    assert proto.schedule_digest == record.schedule_digest


# -------------------------------------------------------------------- plots


def test_plot_data_round_trip_and_rendering(tmp_path, small_experiment):
    cfg, _, runs, models, record = small_experiment
    pruning = run_pruning_experiment(
        cfg, runs[0], models[0], zero_tables(models[0]), max_queries=2
    )
    path = tmp_path / "plot_data.json"
    save_plot_data(path, [record.to_plot_doc(), pruning.to_plot_doc()])
    doc = load_json(path, expected_format="activecf-plot-data", max_version=1)
    assert [f["name"] for f in doc["figures"]] == [
        "improvement_vs_kappa",
        "improvement_vs_kappa_normalized_total",
        "pruning_fraction_vs_kappa",
    ]
    written = render_plots(path, tmp_path / "plots")
    assert [p.name for p in written] == [
        "improvement_vs_kappa.png",
        "improvement_vs_kappa_normalized_total.png",
        "pruning_fraction_vs_kappa.png",
    ]
    assert all(p.stat().st_size > 0 for p in written)
