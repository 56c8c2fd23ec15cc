"""Shared primitives: token ids, categorical distributions, log-space helpers.

All probability math in the package goes through these types.  Distributions
are plain normalized float64 vectors; log-ratio arithmetic is floored at
``LOG_FLOOR`` so that "impossible" outcomes stay representable without NaNs.
"""

from __future__ import annotations

import math

import numpy as np

TokenId = int
TokenSequence = tuple[int, ...]

# log of the smallest positive double.  exp() of anything at or below this
# underflows to 0, so the floor doubles as the deterministic-reject sentinel
# for zero-probability tokens.
LOG_FLOOR = -745.0

# absolute tolerance on sum(probs) == 1
PROB_SUM_TOL = 1e-9


class InvalidWeight(ValueError):
    """A weight vector contains a negative or non-finite entry."""


class AllZeroWeights(ValueError):
    """Every weight is zero; no distribution can be formed."""


class DrafterZeroProb(ValueError):
    """The drafted token has zero probability under the drafter.

    The probability ratio p/q is undefined; callers must treat the candidate
    as non-verifiable rather than abort the decode.
    """


class CategoricalDistribution:
    """Normalized probability vector over a vocabulary of size V.

    Immutable after construction (the underlying array is write-locked) and
    safe to share across threads.
    """

    __slots__ = ("probs",)

    def __init__(self, probs) -> None:
        arr = np.ascontiguousarray(probs, dtype=np.float64)
        if arr.ndim != 1 or arr.size == 0:
            raise ValueError("probs must be a non-empty 1-D vector")
        if not np.all(np.isfinite(arr)):
            raise InvalidWeight("probabilities must be finite")
        if np.any(arr < 0):
            raise InvalidWeight("probabilities must be non-negative")
        total = float(arr.sum())
        if abs(total - 1.0) > PROB_SUM_TOL:
            raise ValueError(f"probabilities sum to {total}, not 1")
        arr.setflags(write=False)
        self.probs = arr

    @property
    def vocab_size(self) -> int:
        return int(self.probs.shape[0])

    def prob(self, v: TokenId) -> float:
        return float(self.probs[v])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CategoricalDistribution):
            return NotImplemented
        return np.array_equal(self.probs, other.probs)

    def __hash__(self) -> int:
        return hash(self.probs.tobytes())

    def __repr__(self) -> str:
        return f"CategoricalDistribution({self.probs.tolist()!r})"


def normalize(weights) -> CategoricalDistribution:
    """Scale non-negative weights to a categorical distribution.

    Bitwise idempotent: a vector whose sum is already within PROB_SUM_TOL of
    1.0 is returned unchanged, so normalizing twice equals normalizing once.
    (Iterated division cannot guarantee this: near sum = 1.0 the division can
    oscillate between two adjacent float vectors.)
    """
    arr = np.ascontiguousarray(weights, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise InvalidWeight("weights must be a non-empty 1-D vector")
    if not np.all(np.isfinite(arr)):
        raise InvalidWeight("weights must be finite")
    if np.any(arr < 0):
        raise InvalidWeight("weights must be non-negative")
    total = float(arr.sum())
    if total == 0.0:
        raise AllZeroWeights("all weights are zero")
    out = arr if abs(total - 1.0) <= PROB_SUM_TOL else arr / total
    return CategoricalDistribution(out)


def log_prob_ratio(
    p: CategoricalDistribution, q: CategoricalDistribution, v: TokenId
) -> float:
    """log p(v) - log q(v), floored at LOG_FLOOR.

    Raises DrafterZeroProb when q(v) = 0; returns the floor sentinel when
    p(v) = 0 so downstream acceptance probability is exactly 0.
    """
    if p.vocab_size != q.vocab_size:
        raise ValueError("p and q must share a vocabulary size")
    qv = q.prob(v)
    if qv == 0.0:
        raise DrafterZeroProb(f"drafted token {v} has zero drafter probability")
    pv = p.prob(v)
    if pv == 0.0:
        return LOG_FLOOR
    return max(math.log(pv) - math.log(qv), LOG_FLOOR)


def sample(dist: CategoricalDistribution, rng: np.random.Generator) -> TokenId:
    """Draw one token; deterministic given the generator state."""
    cdf = np.cumsum(dist.probs)
    idx = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return min(idx, dist.vocab_size - 1)
