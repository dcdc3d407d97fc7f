"""
Size and power bounds for a single design
=========================================

Null parameters spread uniformly over (0.4, 0.6). We look at one design
with threshold 0.05, nine null queries and 1e5 replicates each.
"""

from compnull import (
    NullRange,
    avg_power_lower_bound,
    concentration_radius,
    min_null_samples,
    power_lower_bound,
    size_upper_bound,
)

null = NullRange(0.4, 0.6)
eps, r = 0.05, 100_000

# smallest m for which the ideal test (true parameters) has size <= 0.1
m = min_null_samples(0.1, eps, null.width())
print("m =", m)

# the realistic test pays for estimation noise through the radius and slack terms
print("radius      ", concentration_radius(r))
print("size bound  ", size_upper_bound(eps, m, r, null.width()))
print("avg power   ", avg_power_lower_bound(eps, m, r, null.width()))

# pointwise power lower bound across the alternative
for p in (0.05, 0.2, 0.33, 0.38, 0.65, 0.9):
    print(f"phi({p:.2f}) = {power_lower_bound(p, eps, m, r, null):.4f}")
