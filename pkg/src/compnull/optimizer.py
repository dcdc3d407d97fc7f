"""Design selection: grid search over the threshold maximizing the average-power bound.

For each threshold on the grid the number of null queries comes from the
ideal-test validity condition (never below the pilot size), the replicate
count splits the remaining budget, and the design is kept only if its size
bound is at most alpha. Among valid designs the one with the largest plug-in
average-power bound wins; ties go to the smaller threshold.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .bounds import avg_power_lower_bound, min_null_samples, validity_check
from .core import BoundNotApplicable, BudgetExhausted, NullRange, TestDesign
from .ranges import RANGE_MODES, estimate_range
from .statistic import WITH_REPLACEMENT, generic_statistic

__all__ = [
    "GridPoint",
    "NoValidDesign",
    "NoValidDesignError",
    "OptimalDesign",
    "OptimalTestResult",
    "OptimizerConfig",
    "borrow_design_from",
    "optimal_test",
    "optimize_design",
]

EPSILON_POLICIES = ("width_cap", "min_three")
BUDGET_MODES = ("charge_prime", "per_null")


@dataclass(frozen=True)
class OptimizerConfig:
    alpha: float = 0.1
    nu: int = 1_000_000
    m_tilde: int = 20
    r_tilde: int = 50
    eta_epsilon: float = 0.005
    epsilon_max_policy: str = "width_cap"
    # Explicit grid ceiling; overrides the policy when set.
    epsilon_max: float | None = None
    range_mode: str = "raw"
    # charge_prime: r = floor(nu / (m + 1)), the test query's r draws are paid for.
    budget_mode: str = "charge_prime"
    sampling_mode: str = WITH_REPLACEMENT

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.m_tilde < 1 or self.r_tilde < 1:
            raise ValueError("m_tilde and r_tilde must be positive")
        if not self.m_tilde * self.r_tilde < self.nu:
            raise ValueError(
                f"pilot cost m_tilde * r_tilde = {self.m_tilde * self.r_tilde} must be below nu = {self.nu}"
            )
        if not self.eta_epsilon > 0:
            raise ValueError("eta_epsilon must be positive")
        if self.epsilon_max_policy not in EPSILON_POLICIES:
            raise ValueError(f"epsilon_max_policy must be one of {EPSILON_POLICIES}")
        if self.range_mode not in RANGE_MODES:
            raise ValueError(f"range_mode must be one of {RANGE_MODES}")
        if self.budget_mode not in BUDGET_MODES:
            raise ValueError(f"budget_mode must be one of {BUDGET_MODES}")

    @property
    def pilot_cost(self):
        return self.m_tilde * self.r_tilde


@dataclass(frozen=True)
class GridPoint:
    epsilon: float
    m: int | None
    r: int | None
    valid: bool
    h: float | None
    size_upper: float | None = None
    reason: str | None = None


@dataclass(frozen=True)
class OptimalDesign:
    design: TestDesign
    h_star: float
    range_used: NullRange
    grid_evaluations: list = field(repr=False)
    settings: dict = field(default_factory=dict)

    def __bool__(self):
        return True

    def to_dict(self):
        return {
            "design": asdict(self.design),
            "h_star": self.h_star,
            "range_used": {"a": self.range_used.a, "b": self.range_used.b},
            "settings": dict(self.settings),
            "grid_evaluations": [asdict(g) for g in self.grid_evaluations],
        }


@dataclass(frozen=True)
class NoValidDesign:
    """No grid point met the validity constraint; falsy so callers can branch on it."""

    reason: str
    range_used: NullRange | None
    grid_evaluations: list = field(default_factory=list, repr=False)
    settings: dict = field(default_factory=dict)

    def __bool__(self):
        return False

    def to_dict(self):
        return {
            "no_valid_design": True,
            "reason": self.reason,
            "range_used": None if self.range_used is None else {"a": self.range_used.a, "b": self.range_used.b},
            "settings": dict(self.settings),
            "grid_evaluations": [asdict(g) for g in self.grid_evaluations],
        }


class NoValidDesignError(RuntimeError):
    def __init__(self, outcome):
        super().__init__(outcome.reason)
        self.outcome = outcome


def replicates_for(nu, m, budget_mode="charge_prime"):
    """Replicates per query that fit ``nu`` given ``m`` null queries."""
    return nu // (m + 1) if budget_mode == "charge_prime" else nu // m


def epsilon_grid(null_range, eta, policy="width_cap", epsilon_max=None):
    """Thresholds ``0, eta, 2 eta, ...`` up to the ceiling, inclusive."""
    if epsilon_max is not None:
        top = epsilon_max
    elif policy == "width_cap":
        top = null_range.width()
    elif policy == "min_three":
        top = null_range.epsilon_ceiling
    else:
        raise ValueError(f"unknown epsilon policy {policy!r}")
    n = math.floor(top / eta + 1e-9)
    return [round(k * eta, 12) for k in range(n + 1)]


def optimize_design(null_range, alpha, nu_remaining, m_tilde=1, config=None):
    """Best valid ``(epsilon, m, r)`` for ``null_range`` within ``nu_remaining`` draws.

    Returns :class:`OptimalDesign`, or :class:`NoValidDesign` when nothing on
    the grid is valid (including a zero-width range).
    """
    config = config or OptimizerConfig(alpha=alpha, nu=max(nu_remaining, m_tilde + 1), m_tilde=m_tilde, r_tilde=1)
    settings = {
        "alpha": alpha,
        "nu_remaining": int(nu_remaining),
        "m_tilde": int(m_tilde),
        "eta_epsilon": config.eta_epsilon,
        "epsilon_max_policy": config.epsilon_max_policy,
        "epsilon_max": config.epsilon_max,
        "budget_mode": config.budget_mode,
        "range_mode": config.range_mode,
    }
    width = null_range.width()
    if not width > 0:
        return NoValidDesign("degenerate pilot range", null_range, [], settings)
    if nu_remaining < 1:
        return NoValidDesign("no budget left after the pilot", null_range, [], settings)

    grid = []
    best = None
    for eps in epsilon_grid(null_range, config.eta_epsilon, config.epsilon_max_policy, config.epsilon_max):
        if eps <= 0 or eps >= width:
            grid.append(GridPoint(eps, None, None, False, None, reason="epsilon outside (0, width)"))
            continue
        m = max(min_null_samples(alpha, eps, width), m_tilde)
        r = replicates_for(nu_remaining, m, config.budget_mode)
        if r < 2:
            grid.append(GridPoint(eps, m, r, False, None, reason="fewer than 2 replicates per query"))
            continue
        check = validity_check(eps, m, r, width, alpha)
        if not check:
            grid.append(GridPoint(eps, m, r, False, None, check.size_upper, check.reason))
            continue
        try:
            h = avg_power_lower_bound(eps, m, r, width)
        except BoundNotApplicable as exc:
            grid.append(GridPoint(eps, m, r, False, None, check.size_upper, str(exc)))
            continue
        point = GridPoint(eps, m, r, True, h, check.size_upper)
        grid.append(point)
        if best is None or h > best.h:
            best = point

    if best is None:
        return NoValidDesign("no grid point satisfies the validity constraint", null_range, grid, settings)
    design = TestDesign(best.epsilon, best.m, best.r, alpha, int(nu_remaining))
    return OptimalDesign(design, best.h, null_range, grid, settings)


def borrow_design_from(larger, smaller_nu, budget_mode="charge_prime"):
    """Reuse the threshold and m of a design found at a larger budget with a smaller one.

    Only r shrinks. The result is generally NOT covered by the validity
    constraint; this is the fallback for budgets where no valid design exists.
    """
    design = getattr(larger, "design", larger)
    r = replicates_for(smaller_nu, design.m, budget_mode)
    if r < 1:
        raise BudgetExhausted(f"budget {smaller_nu} cannot cover m={design.m} queries")
    return TestDesign(design.epsilon, design.m, r, design.alpha, int(smaller_nu))


@dataclass(frozen=True)
class OptimalTestResult:
    reject: bool
    design: OptimalDesign
    statistic: float
    range: object  # RangeEstimate

    def to_dict(self):
        return {
            "reject": self.reject,
            "statistic": self.statistic,
            "epsilon": self.design.design.epsilon,
            "m": self.design.design.m,
            "r": self.design.design.r,
            "range": {"a": self.design.range_used.a, "b": self.design.range_used.b},
            "pilot_raw_range": {"a": self.range.raw.a, "b": self.range.raw.b},
            "h_star": self.design.h_star,
            "settings": dict(self.design.settings),
        }


def _stage_seeds(rng_seed):
    pilot, main = np.random.SeedSequence(rng_seed).spawn(2)
    return int(pilot.generate_state(1)[0]), int(main.generate_state(1)[0])


def optimal_test(source, null_queries, q_prime, config, rng_seed):
    """Pilot, design, test: returns the decision ``T > epsilon`` with its audit trail.

    Raises :class:`NoValidDesignError` when the pilot range admits no valid design.
    """
    if source.remaining_budget() < config.nu:
        raise BudgetExhausted(f"source has {source.remaining_budget()} draws, test needs nu = {config.nu}")
    pilot_seed, main_seed = _stage_seeds(rng_seed)
    pilot = estimate_range(
        source, null_queries, config.m_tilde, config.r_tilde, pilot_seed, config.sampling_mode
    )
    null_range = pilot.select(config.range_mode)
    nu_remaining = config.nu - config.pilot_cost
    outcome = optimize_design(null_range, config.alpha, nu_remaining, config.m_tilde, config)
    if not outcome:
        raise NoValidDesignError(outcome)
    d = outcome.design
    result = generic_statistic(source, null_queries, q_prime, d.m, d.r, main_seed, config.sampling_mode)
    return OptimalTestResult(result.statistic > d.epsilon, outcome, result.statistic, pilot)
