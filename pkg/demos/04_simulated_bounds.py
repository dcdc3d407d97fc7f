"""
Simulated rejection rates against the bounds
============================================

For each threshold and budget we simulate the realistic test many times
and compare the empirical rate with the analytical bound.
"""

from compnull import NullRange
from compnull.montecarlo import SimulationPlan, simulate_rejection_probability

null = NullRange(0.4, 0.6)

size = simulate_rejection_probability(SimulationPlan(null, p_prime_mode="null_uniform"))
print("eps     nu        empirical   bound")
for row in size.rows:
    print(f"{row.epsilon:<7} {row.nu:<9} {row.empirical:<11.4f} {row.analytical_bound:.4f}")
print("skipped:", [(s["epsilon"], s["nu"]) for s in size.skipped])

power = simulate_rejection_probability(SimulationPlan(null, p_prime_mode="alt_uniform"))
print("violations:", len(size.violations()), len(power.violations()))
