"""Build prototype nets and measure what restricting scans to them costs.

A net keeps the items whose predictive rating distributions cover the
rest of the catalog within a radius beta. Scanning only the net is
proportionally cheaper; the question is how much of the best query's
value survives.
"""

import numpy as np

from activecf import (
    McvqEngine,
    StrategyConfig,
    beta_for_fraction,
    generate_synthetic,
    select_prototypes,
    select_query,
    separated_ground_truth,
)

truth = separated_ground_truth(m_items=50, n_types=3, n_attitudes=2, rho=6, seed=3)
train = generate_synthetic(truth, n_users=500, density=0.4, seed=8)
engine = McvqEngine(truth)

print(f"{'fraction':>8}  {'beta':>7}  {'members':>7}  {'radius':>7}")
nets = {}
for frac in (0.6, 0.4, 0.2):
    beta = beta_for_fraction(truth, train, frac)
    net = select_prototypes(truth, train, beta)
    nets[frac] = net
    print(f"{frac:>8.1f}  {beta:>7.4f}  {net.n_members:>7}  {net.epsilon:>7.4f}")

# value retained: best net-restricted EVOI over the best unrestricted,
# averaged over fresh users with a few known ratings each
rng = np.random.default_rng(1)
full_cfg = StrategyConfig(kind="evoi")
retained = {f: [] for f in nets}
for _ in range(20):
    state = engine.fresh_state()
    for item in rng.choice(engine.n_items, size=2, replace=False):
        state = engine.update(state, int(item), int(rng.integers(1, 7)))
    best = select_query(engine, state, full_cfg).scores.max()
    if best <= 0:
        continue
    for frac, net in nets.items():
        cfg = StrategyConfig(kind="evoi", candidates=net.members)
        retained[frac].append(select_query(engine, state, cfg).scores.max() / best)

print("\nshare of the unrestricted best EVOI, mean over 20 users:")
for frac, vals in retained.items():
    print(f"  {frac:.1f} of the catalog: {np.mean(vals):.1%}")
