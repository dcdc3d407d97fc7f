"""Pilot estimation of the null interval from a handful of null queries."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import BudgetExhausted, NullRange
from .statistic import WITH_REPLACEMENT, sample_queries

__all__ = ["RANGE_MODES", "RangeEstimate", "correct_range", "estimate_range"]

RANGE_MODES = ("raw", "order_stat", "symmetric")


def _clip(x):
    return min(1.0, max(0.0, x))


def correct_range(p_hats, mode="raw"):
    """Null interval implied by pilot proportions ``p_hats``.

    ``raw``: sample min and max.
    ``order_stat``: uniform-order-statistic correction
    ``(p_min - (p_max - p_min)/(k + 1), (k + 1)/k * p_max)``.
    ``symmetric``: both ends pushed out by ``(p_max - p_min)/(k - 1)``, needs k >= 2.
    Corrected ends are clipped into [0, 1].
    """
    p = np.asarray(p_hats, dtype=np.float64)
    if p.size == 0:
        raise ValueError("need at least one pilot estimate")
    k = p.size
    lo, hi = float(p.min()), float(p.max())
    if mode == "raw":
        return NullRange(lo, hi)
    if mode == "order_stat":
        return NullRange(_clip(lo - (hi - lo) / (k + 1)), _clip((k + 1) / k * hi))
    if mode == "symmetric":
        if k < 2:
            raise ValueError("symmetric correction needs at least two pilot estimates")
        pad = (hi - lo) / (k - 1)
        return NullRange(_clip(lo - pad), _clip(hi + pad))
    raise ValueError(f"unknown range mode {mode!r}; expected one of {RANGE_MODES}")


@dataclass(frozen=True)
class RangeEstimate:
    raw: NullRange
    corrected: NullRange
    m_tilde: int
    r_tilde: int
    pilot_estimates: list = field(repr=False)
    symmetric: NullRange | None = None

    @classmethod
    def from_estimates(cls, estimates):
        p_hats = [e.p_hat for e in estimates]
        return cls(
            raw=correct_range(p_hats, "raw"),
            corrected=correct_range(p_hats, "order_stat"),
            m_tilde=len(estimates),
            r_tilde=estimates[0].r,
            pilot_estimates=list(estimates),
            symmetric=correct_range(p_hats, "symmetric") if len(p_hats) >= 2 else None,
        )

    def select(self, mode):
        """The interval for a range mode: ``raw``, ``order_stat`` or ``symmetric``."""
        if mode == "raw":
            return self.raw
        if mode == "order_stat":
            return self.corrected
        if mode == "symmetric":
            if self.symmetric is None:
                raise ValueError("symmetric correction needs m_tilde >= 2")
            return self.symmetric
        raise ValueError(f"unknown range mode {mode!r}")

    @property
    def budget_used(self):
        return self.m_tilde * self.r_tilde


def estimate_range(source, null_queries, m_tilde, r_tilde, rng_seed, sampling_mode=WITH_REPLACEMENT):
    """Draw ``m_tilde`` null queries with ``r_tilde`` responses each and summarize.

    Spends exactly ``m_tilde * r_tilde`` budget units.
    """
    if m_tilde < 1 or r_tilde < 1:
        raise ValueError("m_tilde and r_tilde must be positive")
    need = m_tilde * r_tilde
    if source.remaining_budget() < need:
        raise BudgetExhausted(f"pilot needs {need} draws, {source.remaining_budget()} remaining")
    rng = np.random.default_rng(rng_seed)
    chosen = sample_queries(null_queries, m_tilde, rng, sampling_mode)
    seed_key = int(np.random.SeedSequence(rng_seed).generate_state(1)[0])
    estimates = [
        source.draw(q, r_tilde, rng_context=(seed_key, j)).estimate() for j, q in enumerate(chosen)
    ]
    return RangeEstimate.from_estimates(estimates)
