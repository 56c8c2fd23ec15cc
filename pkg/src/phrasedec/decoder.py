"""The decoding engine: plain Jacobi iteration, token-wise speculative
verification, and phrase-level verification with adaptive neighborhoods.

One decode iteration costs exactly one target-model window evaluation (one
NFE).  In ``sjd_pv`` mode the scan first tries to commit a whole library
phrase whose tokens all fall inside their adaptive neighborhoods; on any
failure it falls back to the standard token-wise accept-resample test.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import (
    LOG_FLOOR,
    CategoricalDistribution,
    DrafterZeroProb,
    TokenId,
    TokenSequence,
    log_prob_ratio,
    normalize,
    sample,
)
from .models import ConditionalModel, batched_conditionals
from .phrase_lib import Phrase, PhraseLibrary, match_prefix

MODES = ("jacobi", "sjd", "sjd_pv")


class DegenerateResidual(RuntimeError):
    """Rejection occurred although p == q exactly; signals an arithmetic fault."""


class NonTermination(RuntimeError):
    """Decode exceeded the iteration guard without committing enough tokens."""


@dataclass(frozen=True)
class JacobiWindow:
    """Draft buffer: W candidate tokens plus the distributions they were drawn from."""

    drafts: TokenSequence
    drafter_dists: tuple[CategoricalDistribution, ...]
    window_start: int

    def __post_init__(self) -> None:
        if len(self.drafts) != len(self.drafter_dists):
            raise ValueError("drafts and drafter_dists must have equal length")
        for tok, dist in zip(self.drafts, self.drafter_dists):
            if dist.prob(tok) <= 0.0:
                raise ValueError(f"draft token {tok} has zero drafter probability")

    def __len__(self) -> int:
        return len(self.drafts)


@dataclass(frozen=True)
class Neighborhood:
    """Tokens whose verifier probability is within tau of the drafted token's."""

    members: frozenset[TokenId]

    def __contains__(self, v: TokenId) -> bool:
        return v in self.members


@dataclass(frozen=True)
class VerifyConfig:
    mode: str = "sjd"
    window_size: int = 16
    tau: float = 0.01
    max_phrase_len: int = 8
    greedy: bool = False

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.window_size < 1:
            raise ValueError("window_size must be >= 1")
        if not 0.0 < self.tau < 1.0:
            raise ValueError("tau must be in (0, 1)")


@dataclass
class DecodeMetrics:
    nfe: int = 0
    tokens_emitted: int = 0
    tokens_per_iteration: list[int] = field(default_factory=list)
    phrase_attempts: int = 0
    phrase_accepts: int = 0
    token_accepts: int = 0
    token_rejects: int = 0

    def merge(self, other: "DecodeMetrics") -> None:
        self.nfe += other.nfe
        self.tokens_emitted += other.tokens_emitted
        self.tokens_per_iteration.extend(other.tokens_per_iteration)
        self.phrase_attempts += other.phrase_attempts
        self.phrase_accepts += other.phrase_accepts
        self.token_accepts += other.token_accepts
        self.token_rejects += other.token_rejects

    @property
    def iterations(self) -> int:
        return len(self.tokens_per_iteration)


def build_neighborhood(
    p: CategoricalDistribution, drafted: TokenId, tau: float
) -> Neighborhood:
    """All tokens v with |p(v) - p(drafted)| strictly below tau."""
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must be in (0, 1)")
    diffs = np.abs(p.probs - p.probs[drafted])
    return Neighborhood(frozenset(int(v) for v in np.nonzero(diffs < tau)[0]))


def phrase_acceptance_score(
    verifier_dists, drafter_dists, phrase: Phrase
) -> float:
    """Joint log acceptance score: sum of per-position log p/q over the phrase."""
    if not len(verifier_dists) == len(drafter_dists) == len(phrase):
        raise ValueError("distribution lists and phrase must have equal length")
    score = 0.0
    for p, q, v in zip(verifier_dists, drafter_dists, phrase.tokens):
        score += log_prob_ratio(p, q, v)
    return max(score, LOG_FLOOR)


def verify_phrase(score: float, rng: np.random.Generator) -> bool:
    """Stochastic joint test: accept iff exp(score) exceeds a uniform draw."""
    if score >= 0.0:
        return True
    return math.exp(max(score, LOG_FLOOR)) > rng.random()


def verify_token(
    p: CategoricalDistribution,
    q: CategoricalDistribution,
    drafted: TokenId,
    rng: np.random.Generator,
) -> tuple[bool, TokenId]:
    """Accept-resample test: keep the draft with probability min(1, p/q),
    otherwise emit a token from the residual normalize(max(0, p - q))."""
    qd = q.prob(drafted)
    if qd == 0.0:
        raise DrafterZeroProb(f"drafted token {drafted} has zero drafter probability")
    if rng.random() < p.prob(drafted) / qd:
        return True, drafted
    residual = np.maximum(p.probs - q.probs, 0.0)
    if residual.sum() == 0.0:
        raise DegenerateResidual("rejection with p == q; arithmetic fault")
    return False, sample(normalize(residual), rng)


def _find_phrase(
    lib: PhraseLibrary,
    drafts: TokenSequence,
    t: int,
    neighborhoods: list[Neighborhood],
    cfg: VerifyConfig,
) -> Phrase | None:
    remaining = len(drafts) - t
    for phrase in match_prefix(lib, drafts[t]):
        n = len(phrase)
        if n > remaining or n > cfg.max_phrase_len:
            continue
        if all(phrase.tokens[k] in neighborhoods[t + k] for k in range(n)):
            return phrase
    return None


def _draw(dist: CategoricalDistribution, greedy: bool, rng: np.random.Generator) -> TokenId:
    if greedy:
        return int(np.argmax(dist.probs))
    return sample(dist, rng)


def verify_window(
    prefix: TokenSequence,
    window: JacobiWindow,
    target: ConditionalModel,
    lib: PhraseLibrary | None,
    cfg: VerifyConfig,
    rng: np.random.Generator,
) -> tuple[TokenSequence, JacobiWindow, DecodeMetrics]:
    """Run one verification iteration over the window.

    Returns the committed tokens, the refilled next window, and a metrics
    delta with nfe = 1.  Token-wise scanning stops at the first rejection;
    a committed phrase jumps the scan forward by its length.
    """
    if cfg.mode == "sjd_pv" and lib is None:
        raise ValueError("sjd_pv mode requires a phrase library")
    W = len(window)
    verifier = batched_conditionals(target, prefix, window.drafts)
    metrics = DecodeMetrics(nfe=1)

    neighborhoods: list[Neighborhood] | None = None
    if cfg.mode == "sjd_pv":
        neighborhoods = [
            build_neighborhood(verifier[j], window.drafts[j], cfg.tau)
            for j in range(W)
        ]

    committed: list[TokenId] = []
    t = 0
    while t < W:
        if cfg.mode == "sjd_pv":
            phrase = _find_phrase(lib, window.drafts, t, neighborhoods, cfg)
            if phrase is not None:
                metrics.phrase_attempts += 1
                n = len(phrase)
                try:
                    score = phrase_acceptance_score(
                        verifier[t : t + n], window.drafter_dists[t : t + n], phrase
                    )
                except DrafterZeroProb:
                    score = None  # non-verifiable: fall back to the token path
                if score is not None and verify_phrase(score, rng):
                    metrics.phrase_accepts += 1
                    committed.extend(phrase.tokens)
                    t += n
                    continue

        p, q, drafted = verifier[t], window.drafter_dists[t], window.drafts[t]
        if cfg.mode == "jacobi" or cfg.greedy:
            # fixed-point rule: the draft survives iff it matches a fresh
            # draw (argmax in greedy mode) from the verifier conditional
            fresh = _draw(p, cfg.greedy, rng)
            accepted, emitted = fresh == drafted, (drafted if fresh == drafted else fresh)
        else:
            accepted, emitted = verify_token(p, q, drafted, rng)
        committed.append(emitted)
        t += 1
        if accepted:
            metrics.token_accepts += 1
        else:
            metrics.token_rejects += 1
            break

    # Jacobi refill: surviving slots are re-drafted from the verifier
    # conditionals just computed; appended slots reuse the last one
    new_drafts: list[TokenId] = []
    new_dists: list[CategoricalDistribution] = []
    for j in range(t, W):
        new_dists.append(verifier[j])
        new_drafts.append(_draw(verifier[j], cfg.greedy, rng))
    while len(new_drafts) < W:
        new_dists.append(verifier[W - 1])
        new_drafts.append(_draw(verifier[W - 1], cfg.greedy, rng))

    next_window = JacobiWindow(
        tuple(new_drafts), tuple(new_dists), window.window_start + len(committed)
    )
    metrics.tokens_emitted = len(committed)
    metrics.tokens_per_iteration.append(len(committed))
    return tuple(committed), next_window, metrics


def decode(
    target: ConditionalModel,
    lib: PhraseLibrary | None,
    cfg: VerifyConfig,
    total_len: int,
    rng: np.random.Generator,
) -> tuple[TokenSequence, DecodeMetrics]:
    """Decode total_len tokens by repeated window verification.

    The first window is drafted from the target's begin-context conditional;
    the final window is truncated so exactly total_len tokens are returned.
    """
    if total_len < 1:
        raise ValueError("total_len must be >= 1")
    W = cfg.window_size
    begin_row = target.conditional(())
    window = JacobiWindow(
        tuple(_draw(begin_row, cfg.greedy, rng) for _ in range(W)),
        (begin_row,) * W,
        0,
    )

    committed: list[TokenId] = []
    metrics = DecodeMetrics()
    iterations = 0
    while len(committed) < total_len:
        iterations += 1
        if iterations > 10 * total_len:
            raise NonTermination(
                f"no convergence after {iterations - 1} iterations "
                f"({len(committed)}/{total_len} tokens committed)"
            )
        out, window, delta = verify_window(
            tuple(committed), window, target, lib, cfg, rng
        )
        committed.extend(out)
        metrics.merge(delta)

    # truncate the final window's overshoot, keeping the per-iteration
    # accounting consistent with the emitted length
    excess = len(committed) - total_len
    if excess:
        committed = committed[:total_len]
        metrics.tokens_emitted -= excess
        metrics.tokens_per_iteration[-1] -= excess
    return tuple(committed), metrics
