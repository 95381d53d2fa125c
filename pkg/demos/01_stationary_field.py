# %% [markdown]
# # The density fluctuation field at stationarity
#
# Start the exclusion process from the Bernoulli(1/2) product measure,
# run it to time T and look at the field paired with a few Hermite
# functions. Both the mean and the variance should match the white-noise
# law N(0, ||G||^2) at every time.

# %%
import numpy as np

from wasep_kpz import SimParams, TestFunction, simulate
from wasep_kpz.exclusion import replica_rng
from wasep_kpz.field import field_form

params = SimParams(epsilon=0.08, gamma=1.0, window=20.0, horizon=0.25)
times = np.array([0.0, 0.125, 0.25])
Gs = [TestFunction.hermite(n) for n in (1, 2, 3)]
forms = [field_form(params, G) for G in Gs]
print(f"{params.sites} sites, asymmetry sqrt(eps)*gamma = {params.asymmetry:.3f}")

# %%
R = 1000
Y = np.empty((R, len(Gs), times.size))
for r in range(R):
    traj = simulate(params, times, rng=replica_rng(7, r))
    Y[r] = [f.at_samples(traj) for f in forms]

# %%
for i, G in enumerate(Gs):
    lattice = params.epsilon * np.sum(G(params.positions()) ** 2)
    for j, t in enumerate(times):
        y = Y[:, i, j]
        print(f"{G.name} t={t:.3f}: mean {y.mean():+.3f} (SE {y.std() / np.sqrt(R):.3f}), "
              f"var {y.var():.3f} vs {lattice:.3f}")
