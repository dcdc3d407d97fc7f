"""Closed-form size and power bounds for the min-distance test.

All functions take the null interval through its width (or a :class:`NullRange`)
and refuse to evaluate outside the regime where the bound is proven, raising
:class:`~compnull.core.BoundNotApplicable` instead of returning a number.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .core import (
    BoundNotApplicable,
    NullRange,
    TestDesign,
    as_probability,
    concentration_radius,
    concentration_slack,
)

__all__ = [
    "BoundReport",
    "Validity",
    "avg_power_lower_bound",
    "bound_report",
    "ideal_power",
    "ideal_rejection_probability",
    "min_null_samples",
    "power_lower_bound",
    "size_upper_bound",
    "validity_check",
]


def _clamp01(x):
    return min(1.0, max(0.0, x))


def min_null_samples(alpha, epsilon, width):
    """Smallest m making the ideal test valid: ``ceil(|ln alpha| / |ln(1 - epsilon/width)|)``.

    Requires ``0 < epsilon < width``.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha!r}")
    if not width > 0:
        raise ValueError(f"width must be > 0, got {width!r}")
    if not 0.0 < epsilon < width:
        raise ValueError(f"need 0 < epsilon < width, got epsilon={epsilon}, width={width}")
    ratio = abs(math.log(alpha)) / abs(math.log1p(-epsilon / width))
    # Guard against ratios like 1.0000000000000002 from rounding.
    m = math.ceil(ratio - 1e-12)
    return max(1, m)


def _check_size_guards(epsilon, r, width):
    if not width > 0:
        raise BoundNotApplicable(f"degenerate range: width={width}")
    radius = concentration_radius(r)
    if not epsilon > radius:
        raise BoundNotApplicable(
            f"bound not applicable: epsilon={epsilon} does not exceed sqrt(ln r / r)={radius:.6g}"
        )
    if epsilon - radius > width:
        raise BoundNotApplicable(
            f"bound not applicable: epsilon - radius = {epsilon - radius:.6g} exceeds width={width}"
        )
    return radius


def size_upper_bound(epsilon, m, r, width, clamp=False):
    """Upper bound on the realistic test's size.

    ``(1 - (epsilon - radius)/width)**m + 2m/sqrt(r)``, with ``radius = sqrt(ln r / r)``.
    The raw value can exceed 1; pass ``clamp=True`` for a reportable probability.
    """
    radius = _check_size_guards(epsilon, r, width)
    value = (1.0 - (epsilon - radius) / width) ** m + concentration_slack(m, r)
    return _clamp01(value) if clamp else value


@dataclass(frozen=True)
class Validity:
    """Outcome of the validity constraint; truthy iff the design is valid."""

    valid: bool
    size_upper: float | None = None
    reason: str | None = None

    def __bool__(self):
        return self.valid


def validity_check(epsilon, m, r, width, alpha):
    """Does the size bound of ``(epsilon, m, r)`` stay at or below ``alpha``?

    Guard violations come back as an invalid result carrying the reason.
    """
    try:
        size = size_upper_bound(epsilon, m, r, width)
    except BoundNotApplicable as exc:
        return Validity(False, None, str(exc))
    if size <= alpha:
        return Validity(True, size, None)
    return Validity(False, size, f"size bound {size:.6g} exceeds alpha={alpha}")


def _check_epsilon(epsilon, null_range):
    if not null_range.theory_admissible:
        raise BoundNotApplicable(f"range {null_range} is not inside 0 < a < b < 1")
    if not 0.0 < epsilon < null_range.epsilon_ceiling:
        raise BoundNotApplicable(
            f"need 0 < epsilon < min(a, b-a, 1-b) = {null_range.epsilon_ceiling:.6g}, "
            f"got {epsilon}"
        )


def ideal_rejection_probability(p_prime, epsilon, m, null_range):
    """P[min_j |p' - p_j| > epsilon] for p_j i.i.d. uniform on the null range.

    Valid for every p' in [0, 1]: each p_j independently misses the window
    ``[p' - epsilon, p' + epsilon]`` with probability one minus the overlap
    of that window with ``[a, b]`` over the width.
    """
    p_prime = as_probability(p_prime, "p_prime")
    width = null_range.width()
    if not width > 0:
        raise BoundNotApplicable(f"degenerate range: width={width}")
    lo = max(null_range.a, p_prime - epsilon)
    hi = min(null_range.b, p_prime + epsilon)
    overlap = max(0.0, hi - lo)
    return _clamp01(1.0 - overlap / width) ** m


def ideal_power(p_prime, epsilon, m, null_range):
    """Rejection probability of the ideal test (true parameters known).

    On the alternative this is the three-piece power function: 1 at distance
    at least epsilon from the range, ``((b - p' - eps)/(b - a))**m`` just below
    ``a`` and ``((p' - eps - a)/(b - a))**m`` just above ``b``. Inside
    ``[a, b]`` the null rejection probability is returned instead (endpoints
    belong to the null).
    """
    p_prime = as_probability(p_prime, "p_prime")
    _check_epsilon(epsilon, null_range)
    a, b = null_range.a, null_range.b
    width = b - a
    if p_prime <= a - epsilon or p_prime >= b + epsilon:
        return 1.0
    if p_prime < a:
        return ((b - p_prime - epsilon) / width) ** m
    if p_prime > b:
        return ((p_prime - epsilon - a) / width) ** m
    return ideal_rejection_probability(p_prime, epsilon, m, null_range)


def _strip_value(epsilon, m, r, width):
    radius = concentration_radius(r)
    base = max(0.0, 1.0 - (epsilon + radius) / width)
    return base**m - concentration_slack(m, r)


def power_lower_bound(p_prime, epsilon, m, r, null_range, clamp=True):
    """Lower bound phi(p') on the realistic test's power at an alternative p'.

    Outside the radius-widened strips the bound is ``1 - 2m/sqrt(r)``; inside
    them it is ``(1 - (eps + radius)/(b - a))**m - 2m/sqrt(r)``. The bound goes
    negative when vacuous; ``clamp=False`` returns that raw value.
    """
    p_prime = as_probability(p_prime, "p_prime")
    _check_epsilon(epsilon, null_range)
    a, b = null_range.a, null_range.b
    if a <= p_prime <= b:
        raise BoundNotApplicable(f"p_prime={p_prime} lies in the null range [{a}, {b}]")
    reach = epsilon + concentration_radius(r)
    if p_prime <= a - reach or p_prime >= b + reach:
        value = 1.0 - concentration_slack(m, r)
    else:
        value = _strip_value(epsilon, m, r, b - a)
    return _clamp01(value) if clamp else value


def avg_power_lower_bound(epsilon, m, r, width):
    """Average of phi over a uniform alternative on ``(0, a) U (b, 1)``.

    ``2/(1 - w) * ((1 - (eps + radius)/w)**m - 1) * (eps + radius) + 1 - 2m/sqrt(r)``
    with ``w = b - a``. Substituting an estimated width gives the plug-in
    objective the design optimizer maximizes. Returned unclamped; negative
    values mean the bound is vacuous.
    """
    if not 0.0 < width < 1.0:
        raise BoundNotApplicable(f"width must lie in (0, 1), got {width}")
    if not epsilon > 0:
        raise BoundNotApplicable(f"epsilon must be > 0, got {epsilon}")
    reach = epsilon + concentration_radius(r)
    # Once reach >= w the strip bound has hit zero; a negative base would flip sign with m.
    base = max(0.0, 1.0 - reach / width)
    return 2.0 / (1.0 - width) * (base**m - 1.0) * reach + 1.0 - concentration_slack(m, r)


@dataclass(frozen=True)
class BoundReport:
    design: TestDesign
    range: NullRange
    size_upper: float
    size_upper_raw: float
    avg_power_lower: float
    is_valid: bool
    radius: float
    slack: float

    @property
    def vacuous(self):
        return self.avg_power_lower <= 0.0


def bound_report(design, null_range):
    """Evaluate size and average-power bounds of ``design`` against ``null_range``."""
    width = null_range.width()
    raw = size_upper_bound(design.epsilon, design.m, design.r, width)
    return BoundReport(
        design=design,
        range=null_range,
        size_upper=_clamp01(raw),
        size_upper_raw=raw,
        avg_power_lower=avg_power_lower_bound(design.epsilon, design.m, design.r, width),
        is_valid=raw <= design.alpha,
        radius=concentration_radius(design.r),
        slack=concentration_slack(design.m, design.r),
    )
