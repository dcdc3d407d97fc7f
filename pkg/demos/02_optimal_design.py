"""
Choosing a design under a budget
================================

A pilot estimates the null range, then a grid search over thresholds picks
the design with the best average-power bound among those whose size bound
stays below alpha.
"""

from compnull import NullRange, OptimizerConfig, SyntheticSource, optimal_test, optimize_design

# with the range known, the optimizer alone
out = optimize_design(NullRange(0.4, 0.6), alpha=0.1, nu_remaining=10**6, m_tilde=1)
print(out.design, "H* =", round(out.h_star, 4))

valid = [g for g in out.grid_evaluations if g.valid]
print(f"{len(valid)} of {len(out.grid_evaluations)} grid points are valid")

# a narrow range near one needs a much larger budget
narrow = optimize_design(NullRange(0.898, 1.0), alpha=0.1, nu_remaining=5_000_000 - 1000, m_tilde=20)
print(narrow.design)

# end to end against a synthetic model: 200 paraphrases with p ~ Unif(0.4, 0.6)
cfg = OptimizerConfig(nu=10**6, m_tilde=10, r_tilde=1000)
queries = [f"paraphrase-{i}" for i in range(200)]
for probe in ("paraphrase-7", "outlier"):
    # fresh source per probe: each test spends the whole budget
    src = SyntheticSource(10**6, seed=0, uniform=(0.4, 0.6), table={"outlier": 0.9})
    res = optimal_test(src, queries, probe, cfg, rng_seed=1)
    print(probe, "reject" if res.reject else "accept", "T =", round(res.statistic, 4))
