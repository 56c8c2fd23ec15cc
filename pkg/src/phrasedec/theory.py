"""Exact and Monte Carlo oracles for speculative acceptance-rate analysis.

Provides the expected acceptance rate of the accept-resample test, its
token-wise product over a sequence, the phrase-level joint-ratio rate, and
checks of the min-function inequality that orders the two.
All positions are treated as independent; correlated drafting is out of scope.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import reduce
from typing import NamedTuple

import numpy as np

from .core import CategoricalDistribution, normalize

# exact joint enumeration is capped at this many outcomes
ENUMERATION_LIMIT = 10**7


class EnumerationTooLarge(ValueError):
    """V^L exceeds the exact-enumeration guard."""


def alpha(p: CategoricalDistribution, q: CategoricalDistribution) -> float:
    """Expected acceptance rate E_{x~q}[min(1, p(x)/q(x))].

    Terms with q(x) = 0 contribute nothing.
    """
    if p.vocab_size != q.vocab_size:
        raise ValueError("p and q must share a vocabulary size")
    mask = q.probs > 0
    ratios = np.minimum(1.0, p.probs[mask] / q.probs[mask])
    return float(np.dot(q.probs[mask], ratios))


def alpha_seq(p_list, q_list) -> float:
    """Token-wise sequence acceptance rate: the product of per-position rates."""
    if len(p_list) != len(q_list) or not p_list:
        raise ValueError("p_list and q_list must be non-empty and equal length")
    return float(np.prod([alpha(p, q) for p, q in zip(p_list, q_list)]))


def _joint(dists) -> np.ndarray:
    return reduce(np.multiply.outer, [d.probs for d in dists]).ravel()


def alpha_phr_exact(p_list, q_list) -> float:
    """Phrase-level acceptance rate E_{x~q}[min(1, prod p_i(x_i)/q_i(x_i))]
    by exact enumeration of all joint outcomes."""
    if len(p_list) != len(q_list) or not p_list:
        raise ValueError("p_list and q_list must be non-empty and equal length")
    outcomes = math.prod(d.vocab_size for d in q_list)
    if outcomes > ENUMERATION_LIMIT:
        raise EnumerationTooLarge(f"{outcomes} joint outcomes exceed the guard")
    joint_q = _joint(q_list)
    joint_p = _joint(p_list)
    mask = joint_q > 0
    ratios = np.minimum(1.0, joint_p[mask] / joint_q[mask])
    return float(np.dot(joint_q[mask], ratios))


def alpha_phr_mc(
    p_list, q_list, samples: int, rng: np.random.Generator
) -> tuple[float, float]:
    """Monte Carlo estimate of the phrase-level rate: (mean, standard error)."""
    if len(p_list) != len(q_list) or not p_list:
        raise ValueError("p_list and q_list must be non-empty and equal length")
    if samples < 1:
        raise ValueError("samples must be >= 1")
    ratios = np.ones(samples)
    for p, q in zip(p_list, q_list):
        idx = rng.choice(q.vocab_size, size=samples, p=q.probs)
        ratios *= p.probs[idx] / q.probs[idx]
    values = np.minimum(1.0, ratios)
    estimate = float(values.mean())
    std_error = float(values.std(ddof=1) / math.sqrt(samples)) if samples > 1 else 0.0
    return estimate, std_error


class MinInequalityResult(NamedTuple):
    lhs: float
    rhs: float
    holds: bool


def min_inequality_check(ratios) -> MinInequalityResult:
    """Check min(1, prod r_i) >= prod min(1, r_i) for non-negative ratios."""
    arr = np.asarray(ratios, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("ratios must be non-empty")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise ValueError("ratios must be finite and non-negative")
    lhs = min(1.0, float(np.prod(arr)))
    rhs = float(np.prod(np.minimum(1.0, arr)))
    return MinInequalityResult(lhs, rhs, lhs >= rhs - 1e-12)


@dataclass
class AcceptanceReport:
    """Token-wise vs phrase-level rates for one instance."""

    alpha_tokenwise: float
    alpha_phrase: float
    per_position_alphas: list[float]
    method: str  # "exact" or "monte_carlo"
    sample_count: int | None = None


@dataclass
class Proposition1Summary:
    """Aggregate of a random sweep checking alpha_phr >= alpha_seq."""

    trials: int
    violations: int
    gaps: list[float] = field(default_factory=list)

    @property
    def max_gap(self) -> float:
        return max(self.gaps) if self.gaps else 0.0

    @property
    def min_gap(self) -> float:
        return min(self.gaps) if self.gaps else 0.0


def acceptance_report(p_list, q_list) -> AcceptanceReport:
    per_position = [alpha(p, q) for p, q in zip(p_list, q_list)]
    return AcceptanceReport(
        alpha_tokenwise=float(np.prod(per_position)),
        alpha_phrase=alpha_phr_exact(p_list, q_list),
        per_position_alphas=per_position,
        method="exact",
    )


def random_instance(
    vocab_size: int, length: int, rng: np.random.Generator
) -> tuple[list[CategoricalDistribution], list[CategoricalDistribution]]:
    """Random (p_i, q_i) pairs from symmetric Dirichlets whose concentration
    is drawn log-uniform in [0.1, 10], spanning peaked and flat regimes."""
    conc = float(10.0 ** rng.uniform(-1.0, 1.0))
    alpha_vec = np.full(vocab_size, conc)
    p_list = [normalize(rng.dirichlet(alpha_vec)) for _ in range(length)]
    q_list = [normalize(rng.dirichlet(alpha_vec)) for _ in range(length)]
    return p_list, q_list


def proposition1_sweep(
    trials: int,
    v_max: int,
    l_max: int,
    rng: np.random.Generator,
    tolerance: float = 1e-12,
) -> Proposition1Summary:
    """Draw random instances and count violations of alpha_phr >= alpha_seq."""
    if v_max < 2 or l_max < 1:
        raise ValueError("need v_max >= 2 and l_max >= 1")
    summary = Proposition1Summary(trials=trials, violations=0)
    for _ in range(trials):
        vocab_size = int(rng.integers(2, v_max + 1))
        length = int(rng.integers(1, l_max + 1))
        p_list, q_list = random_instance(vocab_size, length, rng)
        gap = alpha_phr_exact(p_list, q_list) - alpha_seq(p_list, q_list)
        summary.gaps.append(gap)
        if gap < -tolerance:
            summary.violations += 1
    return summary
