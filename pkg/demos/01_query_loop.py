"""Drive the query loop against a user drawn from a known model.

A synthetic user answers every suggested query with their own rating;
we watch the expected value of information decay as the posterior
sharpens and the recommendation settles.
"""

import numpy as np

from activecf import (
    McvqEngine,
    StrategyConfig,
    generate_synthetic,
    recommend,
    select_query,
    separated_ground_truth,
    unobserved_items,
)

# three causes with three attitudes each: 27 user cells, so pinning the
# posterior down takes several well-chosen questions
truth = separated_ground_truth(m_items=30, n_types=3, n_attitudes=3, rho=6, seed=2,
                               frac_polarizing=0.6, frac_quality=0.1)
engine = McvqEngine(truth)

# one fully rated user; density 1.0 gives an answer for every item
d = generate_synthetic(truth, n_users=1, density=1.0, seed=5)
answers = dict(zip(d.items.tolist(), d.ratings.tolist()))

state = engine.fresh_state()
cfg = StrategyConfig(kind="evoi", evoi_threshold=0.01)

print(f"catalog of {engine.n_items} items, scale 1..{engine.rho}")
print(f"{'step':>4}  {'query':>5}  {'evoi':>8}  {'answer':>6}  {'top pick':>8}")
for step in range(1, engine.n_items):
    decision = select_query(engine, state, cfg)
    if decision.stop:
        print(f"stopped after {step - 1} queries: best score under threshold")
        break
    q = decision.chosen_query
    r = answers[q]
    state = engine.update(state, q, r)
    pick = recommend(engine, state, unobserved_items(engine, state))
    print(f"{step:>4}  {q:>5}  {decision.scores.max():>8.4f}  {r:>6}  {pick:>8}")

pool = unobserved_items(engine, state)
means = engine.posterior_means(state, pool)
order = np.lexsort((pool, -means))[:5]
print("\npredicted favourites among the unasked items:")
for i in order:
    print(f"  item {pool[i]:>3}  predicted {means[i]:.2f}  actual {answers[int(pool[i])]}")
