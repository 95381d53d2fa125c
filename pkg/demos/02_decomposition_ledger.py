# %% [markdown]
# # One trajectory, every term of the decomposition
#
# Along a single path the increment of Y_t(G) splits into a martingale,
# a Taylor residual and the remainder integrals. The split is exact, so
# the identities below hold to rounding error on every sample time.

# %%
import numpy as np

from wasep_kpz import Mollifier, SimParams, TestFunction, decompose, simulate, taylor_bound
from wasep_kpz.field import mollifier_band

params = SimParams(0.04, 1.0, 20.0, 0.25)
G = TestFunction.hermite(2)
J = Mollifier("bump")
Ns = (2, 4, 8, 16)
traj = simulate(params, rng=3, band=mollifier_band(params, min(Ns)))
led = decompose(traj, G, J, Ns)

# %%
print("max relative mismatch of the martingale identity:", led.approxi_error().max())
for N in Ns:
    err, scale = led.rewrite_error(N)
    print(f"N={N:2d}: rewrite mismatch {err.max():.1e}, remainders at T:",
          np.array2string(led.remainders[N][:, -1], precision=4))

# %%
bound = taylor_bound(params, G, traj.sample_times)
print("Taylor residual at T:", led.taylor[-1], " bound:", bound[-1])
