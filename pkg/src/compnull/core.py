"""Shared value types and the two concentration quantities used by every bound."""

from __future__ import annotations

import math
from dataclasses import dataclass
from numbers import Integral

__all__ = [
    "BernoulliEstimate",
    "BoundNotApplicable",
    "BudgetExhausted",
    "NullRange",
    "TestDesign",
    "as_probability",
    "concentration_radius",
    "concentration_slack",
]


class BoundNotApplicable(ValueError):
    """A closed-form bound was asked for outside the regime where it holds."""


class BudgetExhausted(RuntimeError):
    """A response source was asked for more draws than it has left."""


def as_probability(value, name="value"):
    """Return ``value`` as a float, rejecting anything outside [0, 1] (NaN included)."""
    x = float(value)
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {value!r}")
    return x


def _positive_int(value, name):
    if isinstance(value, bool) or not isinstance(value, Integral) or value < 1:
        raise ValueError(f"{name} must be a positive integer, got {value!r}")
    return int(value)


@dataclass(frozen=True)
class NullRange:
    """Interval ``[a, b]`` of null Bernoulli parameters, true or estimated."""

    a: float
    b: float

    def __post_init__(self):
        object.__setattr__(self, "a", as_probability(self.a, "a"))
        object.__setattr__(self, "b", as_probability(self.b, "b"))
        if self.a > self.b:
            raise ValueError(f"need a <= b, got a={self.a}, b={self.b}")

    def width(self):
        return self.b - self.a

    @property
    def theory_admissible(self):
        # The bounds are derived for 0 < a < b < 1.
        return 0.0 < self.a < self.b < 1.0

    @property
    def epsilon_ceiling(self):
        """``min(a, b - a, 1 - b)``: thresholds must stay strictly below this."""
        return min(self.a, self.width(), 1.0 - self.b)

    def contains(self, p):
        return self.a <= p <= self.b


@dataclass(frozen=True)
class TestDesign:
    """Threshold, number of null queries and replicates, with the level and budget."""

    __test__ = False  # keep pytest from collecting this class

    epsilon: float
    m: int
    r: int
    alpha: float
    nu: int

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon!r}")
        object.__setattr__(self, "m", _positive_int(self.m, "m"))
        object.__setattr__(self, "r", _positive_int(self.r, "r"))
        object.__setattr__(self, "nu", _positive_int(self.nu, "nu"))
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha!r}")
        if self.m * self.r > self.nu:
            raise ValueError(f"m * r = {self.m * self.r} exceeds budget nu = {self.nu}")


@dataclass(frozen=True)
class BernoulliEstimate:
    """Success count out of ``r`` replicates; ``p_hat`` is derived, never stored."""

    successes: int
    r: int
    query_id: object = None

    def __post_init__(self):
        object.__setattr__(self, "r", _positive_int(self.r, "r"))
        s = self.successes
        if isinstance(s, bool) or not isinstance(s, Integral) or not 0 <= s <= self.r:
            raise ValueError(f"successes must be an integer in [0, r], got {s!r}")
        object.__setattr__(self, "successes", int(s))

    @property
    def p_hat(self):
        return self.successes / self.r


def concentration_radius(r):
    """Half-width ``sqrt(ln r / r)`` within which the realistic statistic tracks the ideal one."""
    r = _positive_int(r, "r")
    return math.sqrt(math.log(r) / r)


def concentration_slack(m, r):
    """Failure probability term ``2 m / sqrt(r)``; not clamped, it may exceed 1."""
    m = _positive_int(m, "m")
    r = _positive_int(r, "r")
    return 2.0 * m / math.sqrt(r)
