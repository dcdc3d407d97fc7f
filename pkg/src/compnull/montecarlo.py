"""Simulation harness checking the analytical bounds against simulated rejection rates.

Every simulated cell draws from its own random stream, keyed on the master
seed and the cell's indices, so results do not depend on execution order or
on the number of worker processes.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .bounds import (
    avg_power_lower_bound,
    min_null_samples,
    power_lower_bound,
    size_upper_bound,
)
from .core import BoundNotApplicable, NullRange
from .optimizer import (
    NoValidDesignError,
    OptimizerConfig,
    borrow_design_from,
    optimize_design,
    replicates_for,
)
from .ranges import correct_range, estimate_range
from .source import PoolSource
from .statistic import WITHOUT_REPLACEMENT, generic_statistic, two_sample_exact_test

__all__ = [
    "Figure1Result",
    "SimulationPlan",
    "SimulationResult",
    "SimulationRow",
    "SweepPlan",
    "figure1_experiment",
    "protocol_sweep",
    "simulate_ideal_rejection",
    "simulate_rejection_probability",
    "write_figure1_csv",
    "write_simulation_csv",
    "write_sweep_csv",
]

NULL_UNIFORM = "null_uniform"
ALT_UNIFORM = "alt_uniform"
FIXED = "fixed"
_MODE_CODES = {NULL_UNIFORM: 0, ALT_UNIFORM: 1, FIXED: 2}
_PRIME_TAG = 7
_PILOT_TAG = 11

SIMULATION_COLUMNS = [
    "epsilon", "nu", "m", "r", "empirical", "se", "analytical_bound", "estimated_bound", "n_cells",
]


def _rng(master_seed, *key):
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=tuple(key)))


def mc_standard_error(p_hat, n):
    return math.sqrt(p_hat * (1.0 - p_hat) / n)


def sample_alternative(rng, null_range, size):
    """Uniform draws on ``(0, a) U (b, 1)``."""
    u = rng.uniform(0.0, 1.0 - null_range.width(), size=size)
    return np.where(u < null_range.a, u, u + null_range.width())


def simulate_ideal_rejection(p_prime, epsilon, m, null_range, reps, seed):
    """Fraction of ``reps`` draws of ``p_1..p_m ~ Unif(a, b)`` with ``min |p' - p_j| > epsilon``."""
    if reps < 1 or m < 1:
        raise ValueError("reps and m must be positive")
    rng = np.random.default_rng(seed)
    p = rng.uniform(null_range.a, null_range.b, size=(reps, m))
    t = np.abs(p - p_prime).min(axis=1)
    return float(np.mean(t > epsilon))


@dataclass(frozen=True)
class SimulationPlan:
    range: NullRange
    alpha: float = 0.1
    epsilon_grid: tuple = tuple(round(0.01 * k, 10) for k in range(1, 11))
    budgets: tuple = (100_000, 1_000_000)
    p_prime_mode: str = NULL_UNIFORM
    n_p_prime: int = 50
    reps_per_p_prime: int = 50
    master_seed: int = 0
    p_primes: tuple = ()
    pilot_m: int = 100
    pilot_r: int = 10_000
    budget_mode: str = "per_null"  # r = floor(nu / m), as in the simulation protocol
    fixed_m: int | None = None
    exact_estimates: bool = False  # r -> infinity shortcut: use true parameters
    n_jobs: int = 1

    def __post_init__(self):
        if self.p_prime_mode not in _MODE_CODES:
            raise ValueError(f"unknown p_prime_mode {self.p_prime_mode!r}")
        if self.p_prime_mode == FIXED and not self.p_primes:
            raise ValueError("fixed mode needs p_primes")
        if self.n_p_prime < 1 or self.reps_per_p_prime < 1:
            raise ValueError("n_p_prime and reps_per_p_prime must be positive")

    def prime_values(self):
        if self.p_prime_mode == FIXED:
            return np.asarray(self.p_primes, dtype=np.float64)
        rng = _rng(self.master_seed, _PRIME_TAG, _MODE_CODES[self.p_prime_mode])
        if self.p_prime_mode == NULL_UNIFORM:
            return rng.uniform(self.range.a, self.range.b, size=self.n_p_prime)
        return sample_alternative(rng, self.range, self.n_p_prime)


@dataclass(frozen=True)
class SimulationRow:
    epsilon: float
    nu: int
    m: int
    r: int
    empirical: float
    se: float
    analytical_bound: float
    estimated_bound: float
    n_cells: int
    phi_mean: float = float("nan")
    rejections: int = 0
    trials: int = 0


@dataclass(frozen=True)
class SimulationResult:
    plan: SimulationPlan
    rows: list
    skipped: list = field(default_factory=list)
    estimated_range: NullRange | None = None

    def violations(self, n_se=3.0):
        """Rows where the simulation contradicts its bound by more than ``n_se`` standard errors."""
        bad = []
        for row in self.rows:
            if self.plan.p_prime_mode == NULL_UNIFORM:
                if row.empirical > row.analytical_bound + n_se * row.se:
                    bad.append(row)
            elif self.plan.p_prime_mode == ALT_UNIFORM:
                if row.empirical < row.phi_mean - n_se * row.se:
                    bad.append(row)
        return bad


def _safe(fn, *args):
    try:
        return fn(*args)
    except BoundNotApplicable:
        return float("nan")


def pilot_range(plan):
    """Plug-in range from a simulated pilot of ``pilot_m`` queries with ``pilot_r`` draws each."""
    rng = _rng(plan.master_seed, _PILOT_TAG)
    p = rng.uniform(plan.range.a, plan.range.b, size=plan.pilot_m)
    counts = rng.binomial(plan.pilot_r, p)
    return correct_range(counts / plan.pilot_r, "raw")


def _design_for(plan, epsilon):
    width = plan.range.width()
    if plan.fixed_m is not None:
        return plan.fixed_m
    return min_null_samples(plan.alpha, epsilon, width)


def _simulate_row(args):
    plan, eps_idx, nu_idx, primes = args
    epsilon, nu = plan.epsilon_grid[eps_idx], plan.budgets[nu_idx]
    m = _design_for(plan, epsilon)
    r = replicates_for(nu, m, plan.budget_mode)
    a, b = plan.range.a, plan.range.b
    mode = _MODE_CODES[plan.p_prime_mode]
    rejections = 0
    for i, p_prime in enumerate(primes):
        rng = _rng(plan.master_seed, mode, eps_idx, nu_idx, i)
        p = rng.uniform(a, b, size=(plan.reps_per_p_prime, m))
        if plan.exact_estimates:
            null_hat, prime_hat = p, np.full(plan.reps_per_p_prime, p_prime)
        else:
            null_hat = rng.binomial(r, p) / r
            prime_hat = rng.binomial(r, p_prime, size=plan.reps_per_p_prime) / r
        t = np.abs(null_hat - prime_hat[:, None]).min(axis=1)
        rejections += int(np.count_nonzero(t > epsilon))
    return m, r, rejections


def _bounds_for_row(plan, epsilon, m, r, width, primes):
    if plan.p_prime_mode == ALT_UNIFORM:
        analytical = _safe(avg_power_lower_bound, epsilon, m, r, width)
        phis = [_safe(power_lower_bound, float(p), epsilon, m, r, plan.range) for p in primes]
        return analytical, float(np.mean(phis))
    return _safe(size_upper_bound, epsilon, m, r, width), float("nan")


def simulate_rejection_probability(plan, skip_invalid=True):
    """Simulated rejection rate per ``(epsilon, nu)`` next to its analytical and plug-in bounds.

    Grid points outside the bounds' regime are listed in ``skipped``; with
    ``skip_invalid=False`` they raise instead.
    """
    width = plan.range.width()
    primes = plan.prime_values()
    est = pilot_range(plan)
    jobs, skipped = [], []
    for i, eps in enumerate(plan.epsilon_grid):
        for j, nu in enumerate(plan.budgets):
            try:
                m = _design_for(plan, eps)
                r = replicates_for(nu, m, plan.budget_mode)
                if r < 1:
                    raise BoundNotApplicable(f"budget {nu} too small for m={m}")
                if not plan.exact_estimates:
                    size_upper_bound(eps, m, r, width)
                    if plan.p_prime_mode == ALT_UNIFORM and not eps < plan.range.epsilon_ceiling:
                        raise BoundNotApplicable("epsilon must be below min(a, b-a, 1-b)")
            except (BoundNotApplicable, ValueError) as exc:
                if not skip_invalid:
                    raise
                skipped.append({"epsilon": eps, "nu": nu, "reason": str(exc)})
                continue
            jobs.append((plan, i, j, primes))

    if plan.n_jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=plan.n_jobs) as pool:
            outcomes = list(pool.map(_simulate_row, jobs))
    else:
        outcomes = [_simulate_row(job) for job in jobs]

    rows = []
    trials = len(primes) * plan.reps_per_p_prime
    for (_, i, j, _), (m, r, rejections) in zip(jobs, outcomes):
        eps, nu = plan.epsilon_grid[i], plan.budgets[j]
        rate = rejections / trials
        analytical, phi_mean = _bounds_for_row(plan, eps, m, r, width, primes)
        if plan.p_prime_mode == ALT_UNIFORM:
            estimated = _safe(avg_power_lower_bound, eps, m, r, est.width())
        else:
            estimated = _safe(size_upper_bound, eps, m, r, est.width())
        rows.append(
            SimulationRow(
                epsilon=eps, nu=nu, m=m, r=r, empirical=rate, se=mc_standard_error(rate, trials),
                analytical_bound=analytical, estimated_bound=estimated, n_cells=len(primes),
                phi_mean=phi_mean, rejections=rejections, trials=trials,
            )
        )
    return SimulationResult(plan, rows, skipped, est)


def _fmt(x):
    if isinstance(x, float):
        return "nan" if math.isnan(x) else repr(x)
    return str(x)


def write_simulation_csv(result, path):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(SIMULATION_COLUMNS)
        for row in result.rows:
            d = asdict(row)
            writer.writerow([_fmt(d[c]) for c in SIMULATION_COLUMNS])


@dataclass(frozen=True)
class Figure1Result:
    p1: float
    p2: float
    alpha: float
    r_grid: tuple
    p_values: dict  # r -> array of p-values
    counts: dict  # r -> (successes1, successes2) arrays

    def rejection_rate(self, r):
        return float(np.mean(self.p_values[r] < self.alpha))

    def standard_error(self, r):
        return mc_standard_error(self.rejection_rate(r), len(self.p_values[r]))


def figure1_experiment(p1, p2, r_grid, n_monte_carlo, alpha=0.05, seed=0):
    """Exact two-sample p-values for ``n_monte_carlo`` pairs of Binomial(r, p_i) samples per r."""
    for p in (p1, p2):
        if not 0.0 < p < 1.0:
            raise ValueError(f"success probabilities must lie in (0, 1), got {p}")
    p_values, counts = {}, {}
    for k, r in enumerate(r_grid):
        rng = _rng(seed, k)
        s1 = rng.binomial(r, p1, size=n_monte_carlo)
        s2 = rng.binomial(r, p2, size=n_monte_carlo)
        p_values[r] = np.array([two_sample_exact_test(int(x), r, int(y), r) for x, y in zip(s1, s2)])
        counts[r] = (s1, s2)
    return Figure1Result(p1, p2, alpha, tuple(r_grid), p_values, counts)


def write_figure1_csv(result, path):
    """Long format: one row per (r, trial)."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["r", "trial", "successes1", "successes2", "p_value", "reject"])
        for r in result.r_grid:
            s1, s2 = result.counts[r]
            for t, pv in enumerate(result.p_values[r]):
                writer.writerow([r, t, int(s1[t]), int(s2[t]), repr(float(pv)), int(pv < result.alpha)])


@dataclass(frozen=True)
class SweepPlan:
    """Synthetic stand-in for the LLM experiment: recorded pools per query, three test queries."""

    null_range: tuple = (0.85, 0.95)
    n_null_queries: int = 72
    pool_size: int = 333_333
    primes: tuple = (("inside", 0.90), ("near", 0.80), ("far", 0.60))
    budgets: tuple = (5_000_000,)
    alpha: float = 0.1
    m_tilde: int = 20
    r_tilde: int = 50
    eta_epsilon: float = 0.005
    range_mode: str = "order_stat"
    n_seeds: int = 200
    master_seed: int = 0


@dataclass(frozen=True)
class SweepRow:
    nu: int
    label: str
    p_prime: float
    rejection_rate: float
    se: float
    n_runs: int
    n_borrowed: int
    n_failed: int


def build_pool(plan):
    """Null and test query pools with counts ~ Binomial(pool_size, p)."""
    rng = _rng(plan.master_seed, 101)
    a, b = plan.null_range
    null_p = rng.uniform(a, b, size=plan.n_null_queries)
    pool = {f"null-{i:03d}": (int(rng.binomial(plan.pool_size, p)), plan.pool_size) for i, p in enumerate(null_p)}
    for label, p in plan.primes:
        pool[f"prime-{label}"] = (int(rng.binomial(plan.pool_size, p)), plan.pool_size)
    return pool


def _design_at(null_range, nu, budgets, plan, config):
    """Optimal design at ``nu``; otherwise borrow from the smallest larger budget that works."""
    pilot_cost = plan.m_tilde * plan.r_tilde
    outcome = optimize_design(null_range, plan.alpha, nu - pilot_cost, plan.m_tilde, config)
    if outcome:
        return outcome.design, False
    for bigger in sorted(x for x in budgets if x > nu):
        found = optimize_design(null_range, plan.alpha, bigger - pilot_cost, plan.m_tilde, config)
        if found:
            return borrow_design_from(found, nu - pilot_cost, config.budget_mode), True
    raise NoValidDesignError(outcome)


def protocol_sweep(plan):
    """Rejection rate per (budget, test query) over ``n_seeds`` independent experiment instances."""
    pool = build_pool(plan)
    null_queries = [q for q in pool if q.startswith("null-")]
    budgets = tuple(sorted(plan.budgets))
    config = OptimizerConfig(
        alpha=plan.alpha, nu=max(budgets), m_tilde=plan.m_tilde, r_tilde=plan.r_tilde,
        eta_epsilon=plan.eta_epsilon, range_mode=plan.range_mode, sampling_mode=WITHOUT_REPLACEMENT,
    )
    tallies = {}
    for s in range(plan.n_seeds):
        source = PoolSource(10**15, pool, seed=plan.master_seed * 100_003 + s)
        pilot_seed, main_seed = np.random.SeedSequence([plan.master_seed, s]).generate_state(2)
        pilot = estimate_range(source, null_queries, plan.m_tilde, plan.r_tilde, int(pilot_seed), WITHOUT_REPLACEMENT)
        null_range = pilot.select(plan.range_mode)
        for nu in budgets:
            try:
                design, borrowed = _design_at(null_range, nu, budgets, plan, config)
            except NoValidDesignError:
                design, borrowed = None, False
            for k, (label, p) in enumerate(plan.primes):
                t = tallies.setdefault((nu, label), [0, 0, 0, 0])
                if design is None:
                    t[3] += 1
                    continue
                res = generic_statistic(
                    source, null_queries, f"prime-{label}", design.m, design.r,
                    int(main_seed) + k, WITHOUT_REPLACEMENT,
                )
                t[0] += int(res.statistic > design.epsilon)
                t[1] += 1
                t[2] += int(borrowed)
    rows = []
    for nu in budgets:
        for label, p in plan.primes:
            rej, n, borrowed, failed = tallies[(nu, label)]
            rate = rej / n if n else float("nan")
            rows.append(SweepRow(nu, label, p, rate, mc_standard_error(rate, n) if n else float("nan"), n, borrowed, failed))
    return rows


def write_sweep_csv(rows, path):
    columns = ["nu", "label", "p_prime", "rejection_rate", "se", "n_runs", "n_borrowed", "n_failed"]
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            d = asdict(row)
            writer.writerow([_fmt(d[c]) for c in columns])
