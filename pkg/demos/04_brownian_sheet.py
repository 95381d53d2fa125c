# %% [markdown]
# # The limiting martingale as a Brownian sheet pairing
#
# M_t(G) = sqrt(2) int B(t, u) G''(u) du has variance 2 t ||G'||^2. We
# sample sheets, pair them with a Hermite function and compare the law
# with the Gaussian reference and with the exact discrete variance.

# %%
import numpy as np
from scipy import stats

from wasep_kpz import TestFunction
from wasep_kpz.gaussian import (GridSpec, limit_covariance, sample_sheet, sheet_pairing,
                                sheet_pairing_variance)

G = TestFunction.hermite(3)
grid = GridSpec(horizon=1.0, half_width=12.0, time_steps=4)
rng = np.random.default_rng(0)
x = np.concatenate([sheet_pairing(sample_sheet(grid, rng, 500), G, 1.0) for _ in range(8)])

# %%
ref = limit_covariance(G, G, 1.0, 1.0)
print("empirical variance", x.var(), " limit", ref, " grid kernel", sheet_pairing_variance(grid, G, 1.0))
print("KS p-value", stats.kstest(x / np.sqrt(ref), "norm").pvalue)
