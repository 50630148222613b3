"""How the confounding knob shows up in simulated data.

For a few levels of gamma_theta we simulate a desk-scale dataset and report
how far the observed rating distribution drifts from the population one, and
how concentrated exposure is on popular items.

    python demos/01_confounding_in_simulation.py
"""
import numpy as np

from deepdeconf.datagen import SimConfig, gini, item_popularity, rating_distribution_kl, simulate_dataset

base = SimConfig(n_users=2000, n_items=500)

print(f"{'gamma_theta':>11} {'KL(global)':>11} {'KL(per user)':>13} {'gini(pop)':>10} {'mean obs':>9} {'mean all':>9}")
for g in (0.1, 0.3, 0.5, 0.7, 0.9):
    kls, mkls, ginis, obs, full = [], [], [], [], []
    for seed in (1, 2, 3):
        ds = simulate_dataset(base.replace(gamma_theta=g, seed=seed))
        k, mk = rating_distribution_kl(ds)
        kls.append(k)
        mkls.append(mk)
        ginis.append(gini(item_popularity(ds)))
        obs.append(ds.ratings_full[ds.exposures > 0].mean())
        full.append(ds.ratings_full.mean())
    print(f"{g:>11.1f} {np.mean(kls):>11.2e} {np.mean(mkls):>13.3f} {np.mean(ginis):>10.3f} "
          f"{np.mean(obs):>9.3f} {np.mean(full):>9.3f}")

# stronger confounding ties the ratings to the latent factors that also drive
# exposure, so the observed ratings drift from the population ones. The drift is
# small at this scale and levels off near the top of the range; with only three
# seeds adjacent high levels can swap order.
