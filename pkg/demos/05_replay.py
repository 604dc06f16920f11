"""Compare query strategies by replaying held-out users.

Each test user's ratings arrive in a fixed schedule; after kappa of
them are known, each strategy asks one question, the schedule answers
it, and the drop in recommendation regret is credited to the strategy.
Identical schedules across strategies make the comparison paired.
"""

from pathlib import Path

from activecf import (
    ExperimentConfig,
    TrainConfig,
    prepare_synthetic_runs,
    run_query_experiment,
    separated_ground_truth,
)
from activecf.evaluation import save_plot_data

truth = separated_ground_truth(m_items=40, n_types=3, n_attitudes=2, rho=6, seed=11)
cfg = ExperimentConfig(kappa_sizes=(1, 2, 3), n_runs=3, seed=7,
                       strategies=("evoi", "entropy", "random"))
tc = TrainConfig(n_types=3, n_attitudes=2, rho=6, max_iters=12, seed=0, n_restarts=2)

print("sampling 3 splits of 400 train / 60 test users and fitting each...")
runs, models = prepare_synthetic_runs(truth, cfg, tc, 400, 60, density=0.4)

record = run_query_experiment(cfg, runs, models)
print()
print(record.table())

for k in cfg.kappa_sizes:
    p = record.paired_pvalue("evoi", "random", k)
    print(f"evoi vs random at kappa={k}: paired p = {p:.2e}")

out = Path(__file__).with_name("replay_plot_data.json")
save_plot_data(out, [record.to_plot_doc()])
print(f"\nplot document written to {out.name}; render with matplotlib via")
print("  activecf evaluate ... --plots   (or activecf.evaluation.render_plots)")
