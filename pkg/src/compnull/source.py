"""Response sources: anything that maps ``(query, n)`` to ``n`` binary responses.

Every source keeps a budget ledger. A draw reserves its ``n`` units under a
lock before any sampling happens, so concurrent draws never overspend, and an
over-budget request fails without touching the ledger.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import string
import threading
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import count
from pathlib import Path

import httpx
import numpy as np

from .core import BudgetExhausted, as_probability
from .statistic import ResponseBatch

__all__ = [
    "BudgetLedger",
    "ClassificationError",
    "LlmHttpSource",
    "PoolSource",
    "ResponseSource",
    "RiggedSource",
    "SourceError",
    "SyntheticSource",
    "classify_response",
    "load_source",
]

logger = logging.getLogger(__name__)

DEFAULT_SYSTEM_PROMPT = "You are a helpful assistant. You may only respond with 'yes' or 'no'."

_PARAM_TAG = 1
_DRAW_TAG = 2


class SourceError(RuntimeError):
    """A source could not produce responses (transport failure, bad payload)."""


class ClassificationError(SourceError):
    """A completion could not be mapped to yes/no within the retry cap."""


def query_key(query):
    """Stable 63-bit integer for a query, independent of ``PYTHONHASHSEED``."""
    digest = hashlib.blake2b(str(query).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big") >> 1


@dataclass(frozen=True)
class BudgetLedger:
    initial: int
    spent: int
    remaining: int
    per_query: dict = field(default_factory=dict)
    classification_failures: int = 0

    def as_dict(self):
        return {
            "initial": self.initial,
            "spent": self.spent,
            "remaining": self.remaining,
            "per_query": {str(k): v for k, v in sorted(self.per_query.items(), key=lambda kv: str(kv[0]))},
            "classification_failures": self.classification_failures,
        }


class ResponseSource:
    """Base class: budget accounting around a subclass's ``_sample``."""

    def __init__(self, budget, seed=0):
        if budget < 0:
            raise ValueError(f"budget must be non-negative, got {budget}")
        self.initial_budget = int(budget)
        self.seed = int(seed)
        self._lock = threading.Lock()
        self._spent = 0
        self._per_query = Counter()
        self._failures = 0
        self._auto_context = count()

    def remaining_budget(self):
        with self._lock:
            return self.initial_budget - self._spent

    def _reserve(self, query, n):
        with self._lock:
            remaining = self.initial_budget - self._spent
            if n > remaining:
                raise BudgetExhausted(f"requested {n} draws for {query!r}, {remaining} remaining")
            self._spent += n
            self._per_query[query] += n

    def _release(self, query, n):
        with self._lock:
            self._spent -= n
            self._per_query[query] -= n
            if self._per_query[query] == 0:
                del self._per_query[query]

    def _note_failures(self, k):
        with self._lock:
            self._failures += k

    def rng_for(self, query, rng_context=None):
        """Generator for one draw, derived from (seed, query, context)."""
        if rng_context is None:
            rng_context = (next(self._auto_context),)
        ss = np.random.SeedSequence(self.seed, spawn_key=(_DRAW_TAG, query_key(query), *rng_context))
        return np.random.default_rng(ss)

    def draw(self, query, n, rng_context=None):
        """Draw ``n`` binary responses for ``query``.

        ``rng_context`` is a tuple of ints selecting an independent random
        stream; the same context and seed always reproduce the same batch.
        """
        n = int(n)
        if n < 1:
            raise ValueError(f"n must be >= 1, got {n}")
        self._reserve(query, n)
        try:
            successes = int(self._sample(query, n, rng_context))
        except BaseException:
            self._release(query, n)
            raise
        return ResponseBatch(query, successes, n)

    def _sample(self, query, n, rng_context):
        raise NotImplementedError

    def budget_ledger_report(self):
        with self._lock:
            return BudgetLedger(
                initial=self.initial_budget,
                spent=self._spent,
                remaining=self.initial_budget - self._spent,
                per_query=dict(self._per_query),
                classification_failures=self._failures,
            )


class SyntheticSource(ResponseSource):
    """Bernoulli responses with a known parameter per query.

    Parameters come from ``table`` when the query is listed there; otherwise,
    if ``uniform=(a, b)`` is given, each new query gets a parameter drawn from
    Unif(a, b) keyed on the seed and the query, so it never changes.
    """

    def __init__(self, budget, seed=0, table=None, uniform=None, per_draw=False):
        super().__init__(budget, seed)
        self.table = {q: as_probability(p, f"p[{q!r}]") for q, p in (table or {}).items()}
        if uniform is not None:
            a, b = uniform
            if not 0.0 <= a <= b <= 1.0:
                raise ValueError(f"uniform range must satisfy 0 <= a <= b <= 1, got {uniform}")
            uniform = (float(a), float(b))
        self.uniform = uniform
        self.per_draw = per_draw

    def parameter(self, query):
        if query in self.table:
            return self.table[query]
        if self.uniform is None:
            raise KeyError(f"no parameter for query {query!r}")
        ss = np.random.SeedSequence(self.seed, spawn_key=(_PARAM_TAG, query_key(query)))
        a, b = self.uniform
        return float(np.random.default_rng(ss).uniform(a, b))

    def _sample(self, query, n, rng_context):
        p = self.parameter(query)
        rng = self.rng_for(query, rng_context)
        if self.per_draw:
            return np.count_nonzero(rng.random(n) < p)
        return rng.binomial(n, p)


class RiggedSource(ResponseSource):
    """Deterministic source returning exactly ``round(p * n)`` successes."""

    def __init__(self, budget, table, seed=0):
        super().__init__(budget, seed)
        self.table = {q: as_probability(p, f"p[{q!r}]") for q, p in table.items()}

    def _sample(self, query, n, rng_context):
        return int(round(self.table[query] * n))


class PoolSource(ResponseSource):
    """Subsamples a recorded response pool without replacement.

    The pool holds ``(ones, total)`` per query. By default every draw is a
    fresh subsample of the full pool; ``deplete=True`` instead removes drawn
    responses so later draws see only what is left.
    """

    def __init__(self, budget, pool, seed=0, deplete=False):
        super().__init__(budget, seed)
        self.pool = {}
        for q, (ones, total) in pool.items():
            if not 0 <= ones <= total or total < 1:
                raise ValueError(f"bad pool entry for {q!r}: ({ones}, {total})")
            self.pool[q] = [int(ones), int(total)]
        self.deplete = deplete
        self._pool_lock = threading.Lock()

    @classmethod
    def from_responses(cls, budget, responses, seed=0, deplete=False):
        pool = {}
        for q, values in responses.items():
            arr = np.asarray(values)
            if arr.size and not np.isin(arr, (0, 1)).all():
                raise ValueError(f"pool for {q!r} must contain only 0/1 responses")
            pool[q] = (int(arr.sum()), int(arr.size))
        return cls(budget, pool, seed=seed, deplete=deplete)

    def _sample(self, query, n, rng_context):
        rng = self.rng_for(query, rng_context)
        with self._pool_lock:
            ones, total = self.pool[query]
            if n > total:
                raise BudgetExhausted(f"pool for {query!r} holds {total} responses, asked for {n}")
            # Count of ones in a without-replacement subsample.
            k = int(rng.hypergeometric(ones, total - ones, n)) if n < total else ones
            if self.deplete:
                self.pool[query] = [ones - k, total - n]
        return k

    def pool_parameter(self, query):
        ones, total = self.pool[query]
        return ones / total


_EDGE = string.punctuation + string.whitespace
UNCLASSIFIABLE = None


def classify_response(text):
    """Map a completion to 1 (yes), 0 (no) or ``None`` when it is neither."""
    if text is None:
        return UNCLASSIFIABLE
    s = text.lower().strip(_EDGE)
    if s == "yes":
        return 1
    if s == "no":
        return 0
    first = re.match(r"[a-z]+", s)
    if first is not None:
        if first.group(0) == "yes":
            return 1
        if first.group(0) == "no":
            return 0
    return UNCLASSIFIABLE


class TokenBucket:
    """Blocking rate limiter: at most ``rate`` acquisitions per second on average."""

    def __init__(self, rate, capacity=None):
        if rate <= 0:
            raise ValueError("rate must be positive")
        self.rate = float(rate)
        self.capacity = float(capacity if capacity is not None else max(1.0, rate))
        self._tokens = self.capacity
        self._last = time.monotonic()
        self._lock = threading.Lock()

    def acquire(self):
        while True:
            with self._lock:
                now = time.monotonic()
                self._tokens = min(self.capacity, self._tokens + (now - self._last) * self.rate)
                self._last = now
                if self._tokens >= 1.0:
                    self._tokens -= 1.0
                    return
                wait = (1.0 - self._tokens) / self.rate
            time.sleep(wait)


class LlmHttpSource(ResponseSource):
    """Binary responses from an OpenAI-compatible ``/v1/chat/completions`` endpoint.

    One completion per request. Completions that are neither yes nor no are
    retried up to ``max_retries`` times and counted in the ledger, never
    coerced. Transport errors, 429 and 5xx responses are retried with
    exponential backoff up to ``transport_retries`` times.
    """

    def __init__(
        self,
        budget,
        base_url,
        model,
        system_prompt=DEFAULT_SYSTEM_PROMPT,
        temperature=1.9,
        max_tokens=4,
        api_key_env="OPENAI_API_KEY",
        max_retries=3,
        transport_retries=3,
        backoff=0.5,
        requests_per_second=None,
        concurrency=4,
        timeout=30.0,
        client=None,
        seed=0,
    ):
        super().__init__(budget, seed)
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.system_prompt = system_prompt
        self.temperature = temperature
        self.max_tokens = max_tokens
        self.max_retries = max_retries
        self.transport_retries = transport_retries
        self.backoff = backoff
        self.concurrency = max(1, int(concurrency))
        self.limiter = TokenBucket(requests_per_second) if requests_per_second else None
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(api_key_env) if api_key_env else None
        if token:
            headers["Authorization"] = f"Bearer {token}"
        self.client = client or httpx.Client(headers=headers, timeout=timeout)

    @property
    def url(self):
        if self.base_url.endswith("/v1"):
            return self.base_url + "/chat/completions"
        return self.base_url + "/v1/chat/completions"

    def payload(self, query):
        return {
            "model": self.model,
            "messages": [
                {"role": "system", "content": self.system_prompt},
                {"role": "user", "content": str(query)},
            ],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }

    def _post(self, query):
        last = None
        for attempt in range(self.transport_retries + 1):
            if self.limiter is not None:
                self.limiter.acquire()
            try:
                resp = self.client.post(self.url, json=self.payload(query))
            except httpx.HTTPError as exc:
                last = exc
            else:
                if resp.status_code == 429 or resp.status_code >= 500:
                    last = SourceError(f"HTTP {resp.status_code}")
                elif resp.status_code >= 400:
                    raise SourceError(f"HTTP {resp.status_code}: {resp.text[:200]}")
                else:
                    try:
                        return resp.json()["choices"][0]["message"]["content"]
                    except (KeyError, IndexError, TypeError, ValueError) as exc:
                        raise SourceError(f"malformed completion payload: {exc}") from exc
            if attempt < self.transport_retries:
                time.sleep(self.backoff * 2**attempt)
        raise SourceError(f"request failed after {self.transport_retries + 1} attempts: {last}")

    def complete_one(self, query):
        """One classified response; raises after ``max_retries`` unclassifiable completions."""
        for _ in range(self.max_retries + 1):
            label = classify_response(self._post(query))
            if label is not UNCLASSIFIABLE:
                return label
            self._note_failures(1)
            logger.debug("unclassifiable completion for %r", query)
        raise ClassificationError(
            f"no yes/no completion for {query!r} after {self.max_retries + 1} attempts"
        )

    def _sample(self, query, n, rng_context):
        if self.concurrency == 1 or n == 1:
            return sum(self.complete_one(query) for _ in range(n))
        with ThreadPoolExecutor(max_workers=min(self.concurrency, n)) as pool:
            return sum(pool.map(lambda _: self.complete_one(query), range(n)))

    def close(self):
        self.client.close()


def _load_pool(params, base_dir):
    if "pool" in params:
        return {q: tuple(v) for q, v in params["pool"].items()}
    path = Path(params["pool_file"])
    if not path.is_absolute() and base_dir is not None:
        path = Path(base_dir) / path
    with open(path) as f:
        raw = json.load(f)
    pool = {}
    for q, v in raw.items():
        if isinstance(v, dict):
            pool[q] = (int(v["ones"]), int(v["total"]))
        else:
            pool[q] = (int(sum(v)), len(v))
    return pool


def load_source(config, base_dir=None):
    """Build a source from a config mapping (or a path to a JSON file).

    Schema: ``{"kind": "synthetic" | "rigged" | "pool" | "http", "budget": int,
    "seed": int, "parameters": {...}}``.
    """
    if isinstance(config, (str, os.PathLike)):
        base_dir = Path(config).parent
        with open(config) as f:
            config = json.load(f)
    kind = config.get("kind")
    budget = int(config["budget"])
    seed = int(config.get("seed", 0))
    params = dict(config.get("parameters", {}))
    if kind == "synthetic":
        return SyntheticSource(
            budget,
            seed=seed,
            table=params.get("table"),
            uniform=params.get("uniform"),
            per_draw=params.get("per_draw", False),
        )
    if kind == "rigged":
        return RiggedSource(budget, params["table"], seed=seed)
    if kind == "pool":
        return PoolSource(budget, _load_pool(params, base_dir), seed=seed, deplete=params.get("deplete", False))
    if kind == "http":
        return LlmHttpSource(budget, seed=seed, **params)
    raise ValueError(f"unknown source kind {kind!r}")
