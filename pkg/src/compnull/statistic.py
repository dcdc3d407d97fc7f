"""Ideal and realistic min-distance statistics, and the exact two-sample baseline."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .core import BernoulliEstimate, BudgetExhausted, as_probability

__all__ = [
    "ResponseBatch",
    "StatisticResult",
    "generic_statistic",
    "ideal_statistic",
    "realistic_statistic",
    "sample_queries",
    "two_sample_exact_test",
]

WITH_REPLACEMENT = "with_replacement"
WITHOUT_REPLACEMENT = "without_replacement"


@dataclass(frozen=True)
class ResponseBatch:
    """``successes`` positive responses out of ``r`` draws for one query."""

    query_id: object
    successes: int
    r: int

    def __post_init__(self):
        if self.r < 1 or not 0 <= self.successes <= self.r:
            raise ValueError(f"invalid batch: {self.successes} successes out of {self.r}")

    def estimate(self):
        return BernoulliEstimate(self.successes, self.r, self.query_id)


def _p(x):
    p = getattr(x, "p_hat", x)
    return as_probability(p)


def ideal_statistic(p_prime, nulls):
    """``min_j |p' - p_j|`` over the true null parameters."""
    if len(nulls) == 0:
        raise ValueError("need at least one null parameter")
    p_prime = as_probability(p_prime, "p_prime")
    return min(abs(p_prime - as_probability(p)) for p in nulls)


def realistic_statistic(estimates, prime):
    """``min_j |p_hat_j - p_hat'|`` over estimated parameters.

    Accepts :class:`BernoulliEstimate` objects or bare proportions.
    """
    if len(estimates) == 0:
        raise ValueError("need at least one null estimate")
    p_prime = _p(prime)
    return min(abs(_p(e) - p_prime) for e in estimates)


def sample_queries(queries, m, rng, mode=WITH_REPLACEMENT):
    """Pick ``m`` of ``queries`` uniformly, i.i.d. or as distinct picks."""
    queries = list(queries)
    if not queries:
        raise ValueError("empty query set")
    if mode == WITH_REPLACEMENT:
        idx = rng.integers(len(queries), size=m)
    elif mode == WITHOUT_REPLACEMENT:
        if m > len(queries):
            raise ValueError(f"cannot draw {m} distinct queries from {len(queries)}")
        idx = rng.choice(len(queries), size=m, replace=False)
    else:
        raise ValueError(f"unknown sampling mode {mode!r}")
    return [queries[i] for i in idx]


@dataclass(frozen=True)
class StatisticResult:
    statistic: float
    estimates: list = field(repr=False)
    prime: BernoulliEstimate
    sampling_mode: str


def generic_statistic(source, null_queries, q_prime, m, r, rng_seed, sampling_mode=WITH_REPLACEMENT):
    """Sample ``m`` null queries, draw ``r`` responses for each and for ``q_prime``.

    Consumes exactly ``(m + 1) * r`` units of the source budget, checked up front
    so that an over-budget call draws nothing.
    """
    need = (m + 1) * r
    if source.remaining_budget() < need:
        raise BudgetExhausted(f"need {need} draws, {source.remaining_budget()} remaining")
    rng = np.random.default_rng(rng_seed)
    chosen = sample_queries(null_queries, m, rng, sampling_mode)
    # Each draw gets its own stream keyed by (seed, position) so order and threading don't matter.
    seed_key = int(np.random.SeedSequence(rng_seed).generate_state(1)[0])
    estimates = [
        source.draw(q, r, rng_context=(seed_key, j)).estimate() for j, q in enumerate(chosen)
    ]
    prime = source.draw(q_prime, r, rng_context=(seed_key, m)).estimate()
    return StatisticResult(realistic_statistic(estimates, prime), estimates, prime, sampling_mode)


def _log_hypergeom_pmf(x, n1, n2, k):
    # log of C(n1, x) C(n2, k - x) / C(n1 + n2, k)
    return (
        gammaln(n1 + 1) - gammaln(x + 1) - gammaln(n1 - x + 1)
        + gammaln(n2 + 1) - gammaln(k - x + 1) - gammaln(n2 - k + x + 1)
        - (gammaln(n1 + n2 + 1) - gammaln(k + 1) - gammaln(n1 + n2 - k + 1))
    )


def two_sample_exact_test(successes1, n1, successes2, n2):
    """Two-sided exact p-value for equal success probabilities in two samples.

    Enumerates every 2x2 table with the observed margins and sums the
    probabilities of those no more likely than the observed table.
    """
    for s, n, tag in ((successes1, n1, "1"), (successes2, n2, "2")):
        if n < 1:
            raise ValueError(f"n{tag} must be >= 1, got {n}")
        if not 0 <= s <= n:
            raise ValueError(f"successes{tag} must lie in [0, n{tag}], got {s}")
    k = successes1 + successes2
    lo, hi = max(0, k - n2), min(k, n1)
    xs = np.arange(lo, hi + 1, dtype=np.float64)
    logp = _log_hypergeom_pmf(xs, n1, n2, k)
    observed = logp[successes1 - lo]
    # Relative slack so tables tied with the observed one are not lost to rounding.
    keep = logp <= observed + 1e-7
    top = logp.max()
    total = np.exp(logp - top).sum()
    pval = np.exp(logp[keep] - top).sum() / total
    return float(min(1.0, pval))
