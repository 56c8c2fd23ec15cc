"""Conditional sequence models: the model interface, order-k Markov tables,
drafter wrappers, and batched/ancestral evaluation helpers.

These stand in for a large autoregressive backbone at desk scale.  A model
maps a prefix to a categorical conditional over the next token; everything
downstream (drafting, verification, theory oracles) only sees that interface.
"""

from __future__ import annotations

import itertools
import struct
from abc import ABC, abstractmethod

import numpy as np

from .core import CategoricalDistribution, TokenSequence, normalize
from .core import sample as sample_token

# begin-of-sequence padding context symbol; deliberately outside [0, V) so the
# vocabulary stays identical to the phrase library's symbol space
PAD = -1

MODEL_MAGIC = b"PSDM"
MODEL_FORMAT_VERSION = 1


class UnsupportedModelFormat(ValueError):
    """Model file has a bad magic or an unknown format version."""


class ConditionalModel(ABC):
    """Interface for p(next token | prefix).

    Implementations must be deterministic (identical prefix, identical
    distribution) and valid for every prefix including the empty one.
    Models are immutable after construction and shareable across threads.
    """

    vocab_size: int

    @property
    def context_order(self) -> int | None:
        """Number of trailing tokens that influence the conditional; None = full prefix."""
        return None

    @abstractmethod
    def conditional(self, prefix: TokenSequence) -> CategoricalDistribution:
        ...


def markov_contexts(order: int, vocab_size: int):
    """Canonical enumeration of begin-padded contexts, shortest real suffix first."""
    for j in range(order + 1):
        for tail in itertools.product(range(vocab_size), repeat=j):
            yield (PAD,) * (order - j) + tail


class MarkovModel(ConditionalModel):
    """Order-k Markov chain over a finite vocabulary.

    The transition table maps each length-k context (left-padded with PAD for
    positions before the sequence start) to a conditional distribution.
    """

    def __init__(
        self,
        order: int,
        vocab_size: int,
        table: dict[tuple[int, ...], CategoricalDistribution],
    ) -> None:
        if order < 1:
            raise ValueError("order must be >= 1")
        if vocab_size < 2:
            raise ValueError("vocab_size must be >= 2")
        for ctx in markov_contexts(order, vocab_size):
            row = table.get(ctx)
            if row is None:
                raise ValueError(f"missing transition row for context {ctx}")
            if row.vocab_size != vocab_size:
                raise ValueError(f"row for context {ctx} has wrong vocabulary size")
        self.order = order
        self.vocab_size = vocab_size
        self.table = dict(table)

    @property
    def context_order(self) -> int:
        return self.order

    def conditional(self, prefix: TokenSequence) -> CategoricalDistribution:
        ctx = ((PAD,) * self.order + tuple(prefix))[-self.order :]
        return self.table[ctx]


class PerturbedDrafter(ConditionalModel):
    """Mixture of a base model with the uniform distribution.

    conditional = (1 - mix_weight) * base + mix_weight * uniform.  Used as a
    controlled-quality drafter when studying acceptance rates.
    """

    def __init__(self, base: ConditionalModel, mix_weight: float) -> None:
        if not 0.0 <= mix_weight <= 1.0:
            raise ValueError("mix_weight must be in [0, 1]")
        self.base = base
        self.mix_weight = mix_weight
        self.vocab_size = base.vocab_size

    @property
    def context_order(self) -> int | None:
        return self.base.context_order

    def conditional(self, prefix: TokenSequence) -> CategoricalDistribution:
        if self.mix_weight == 0.0:
            return self.base.conditional(prefix)
        base = self.base.conditional(prefix).probs
        mixed = (1.0 - self.mix_weight) * base + self.mix_weight / self.vocab_size
        return normalize(mixed)


class TopKModel(ConditionalModel):
    """Truncate a base model's conditionals to their top k entries and renormalize.

    Optional ablation wrapper; nothing in the engine enables it by default.
    """

    def __init__(self, base: ConditionalModel, k: int) -> None:
        if not 1 <= k <= base.vocab_size:
            raise ValueError("k must be in [1, vocab_size]")
        self.base = base
        self.k = k
        self.vocab_size = base.vocab_size

    @property
    def context_order(self) -> int | None:
        return self.base.context_order

    def conditional(self, prefix: TokenSequence) -> CategoricalDistribution:
        probs = self.base.conditional(prefix).probs
        if self.k == self.vocab_size:
            return CategoricalDistribution(probs)
        keep = np.argsort(probs, kind="stable")[-self.k :]
        truncated = np.zeros_like(probs)
        truncated[keep] = probs[keep]
        return normalize(truncated)


def batched_conditionals(
    model: ConditionalModel, prefix: TokenSequence, drafts: TokenSequence
) -> list[CategoricalDistribution]:
    """Conditionals for a whole draft window: output[j] conditions on
    prefix + drafts[:j].

    By the metrics contract one call counts as a single target-model forward
    pass (one NFE), regardless of window size.
    """
    if len(drafts) < 1:
        raise ValueError("draft window must contain at least one token")
    prefix = tuple(prefix)
    return [model.conditional(prefix + tuple(drafts[:j])) for j in range(len(drafts))]


def ancestral_sample(
    model: ConditionalModel, length: int, rng: np.random.Generator
) -> TokenSequence:
    """Sample a sequence from the exact joint via the chain rule."""
    if length < 0:
        raise ValueError("length must be >= 0")
    out: list[int] = []
    for _ in range(length):
        out.append(sample_token(model.conditional(tuple(out)), rng))
    return tuple(out)


def random_markov(
    order: int, vocab_size: int, concentration: float, rng: np.random.Generator
) -> MarkovModel:
    """Random Markov model with symmetric-Dirichlet transition rows."""
    if concentration <= 0:
        raise ValueError("concentration must be positive")
    alpha = np.full(vocab_size, concentration)
    table = {
        ctx: normalize(rng.dirichlet(alpha))
        for ctx in markov_contexts(order, vocab_size)
    }
    return MarkovModel(order, vocab_size, table)


def save_markov(model: MarkovModel, path) -> None:
    """Write a Markov model in the versioned PSDM binary format."""
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        f.write(struct.pack("<HII", MODEL_FORMAT_VERSION, model.order, model.vocab_size))
        for ctx in markov_contexts(model.order, model.vocab_size):
            f.write(model.table[ctx].probs.astype("<f8").tobytes())


def load_markov(path) -> MarkovModel:
    """Read a PSDM model file; rejects unknown magics and versions."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != MODEL_MAGIC:
        raise UnsupportedModelFormat("not a PSDM model file")
    version, order, vocab_size = struct.unpack_from("<HII", data, 4)
    if version != MODEL_FORMAT_VERSION:
        raise UnsupportedModelFormat(f"unknown model format version {version}")
    offset = 4 + struct.calcsize("<HII")
    row_bytes = vocab_size * 8
    table = {}
    for ctx in markov_contexts(order, vocab_size):
        row = np.frombuffer(data, dtype="<f8", count=vocab_size, offset=offset)
        table[ctx] = CategoricalDistribution(row)
        offset += row_bytes
    if offset != len(data):
        raise UnsupportedModelFormat("model file has trailing or missing bytes")
    return MarkovModel(order, vocab_size, table)
