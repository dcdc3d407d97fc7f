"""
A recorded-pool rerun of the full protocol
==========================================

Responses are subsampled from fixed pools, one per query, the way a large
batch of recorded model completions would be reused. Three probes sit
inside, near and far from the null range.
"""

from compnull.montecarlo import SweepPlan, protocol_sweep

rows = protocol_sweep(SweepPlan(n_seeds=50))
for row in rows:
    print(f"{row.label:<7} p'={row.p_prime:.2f}  rejection {row.rejection_rate:.2f} +- {row.se:.2f}")
