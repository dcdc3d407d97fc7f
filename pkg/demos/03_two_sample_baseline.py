"""
Why a two-sample test is not enough
===================================

Two prompts with success rates 0.870 and 0.948 are flagged as different by
an exact two-sample test once enough responses are drawn, even when both
rates lie inside the natural spread of equivalent prompts.
"""

from compnull.montecarlo import figure1_experiment

res = figure1_experiment(0.870, 0.948, r_grid=(100, 1000, 10_000), n_monte_carlo=200, alpha=0.05, seed=0)
for r in res.r_grid:
    print(f"r={r:>6}  rejection rate {res.rejection_rate(r):.3f} +- {res.standard_error(r):.3f}")

# equal rates: the test holds its level
same = figure1_experiment(0.870, 0.870, r_grid=(100, 1000, 10_000), n_monte_carlo=200, alpha=0.05, seed=1)
print([round(same.rejection_rate(r), 3) for r in same.r_grid])
