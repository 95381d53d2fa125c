# %% [markdown]
# # How the remainders scale with epsilon and N
#
# A reduced version of the remainder scan. The i=0 term is independent of
# N and shrinks like eps^2; the i=4 term grows quickly with N because the
# Riemann sum of J_N * J_N stops being accurate once N*eps is not small.

# %%
from wasep_kpz.harness import ExperimentConfig, remainder_scan

cfg = ExperimentConfig(replicas=60, hermite_indices=(2,))
result = remainder_scan(cfg)

# %%
for row in result.table.rows:
    exp, G, eps, _, N, _, est, se, _ = row
    print(f"{exp:19s} eps={eps:<5g} N={N:<3d} {est:.3e} +- {se:.1e}")

# %%
for name, ok in result.checks.items():
    print("PASS" if ok else "FAIL", name)
